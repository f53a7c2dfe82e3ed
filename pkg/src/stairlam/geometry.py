"""Convex polygons: half-plane clipping, exact areas, template coverings.

All polygons are convex with counter-clockwise vertices. Clipping is
single-half-plane Sutherland-Hodgman, which preserves convexity and keeps
areas exact up to float rounding, so downstream area fractions can be
asserted instead of estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import FillUnreachable

__all__ = [
    "ConvexPolygon",
    "Placement",
    "clip",
    "area",
    "cover",
    "rectangle",
    "regular_polygon",
]

_AREA_EPS = 1e-14


@dataclass(frozen=True)
class ConvexPolygon:
    """Convex polygon given by CCW vertices (tuple of (x, y) tuples)."""

    pts: tuple

    @staticmethod
    def make(points, tol: float = 1e-12) -> "ConvexPolygon":
        """Validated constructor: dedups, enforces CCW order and convexity."""
        pts = [(float(x), float(y)) for x, y in points]
        pts = _dedup(pts, tol)
        if len(pts) < 3:
            raise ValueError("polygon needs at least 3 distinct vertices")
        a = _signed_area(pts)
        if a < 0:
            pts = pts[::-1]
            a = -a
        if a <= 0:
            raise ValueError("polygon has no area")
        scale = max(abs(c) for p in pts for c in p) + 1.0
        for i in range(len(pts)):
            ox, oy = pts[i]
            ax, ay = pts[(i + 1) % len(pts)]
            bx, by = pts[(i + 2) % len(pts)]
            cross = (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)
            if cross < -tol * scale * scale:
                raise ValueError("polygon is not convex")
        return ConvexPolygon(tuple(pts))

    @property
    def n(self) -> int:
        return len(self.pts)

    def bbox(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.pts]
        ys = [p[1] for p in self.pts]
        return min(xs), min(ys), max(xs), max(ys)

    def centroid(self) -> tuple[float, float]:
        return _centroid(self.pts)

    def contains(self, p, tol: float = 1e-12) -> bool:
        """Point membership (boundary inclusive within tol)."""
        x, y = p
        pts = self.pts
        for i in range(len(pts)):
            ax, ay = pts[i]
            bx, by = pts[(i + 1) % len(pts)]
            if (bx - ax) * (y - ay) - (by - ay) * (x - ax) < -tol:
                return False
        return True

    def edges(self):
        """Outward unit normals and offsets: inside iff <x, n> <= off."""
        out = []
        pts = self.pts
        for i in range(len(pts)):
            ax, ay = pts[i]
            bx, by = pts[(i + 1) % len(pts)]
            nx, ny = by - ay, ax - bx  # outward for CCW
            ln = math.hypot(nx, ny)
            nx, ny = nx / ln, ny / ln
            out.append(((nx, ny), nx * ax + ny * ay))
        return out


@dataclass(frozen=True)
class Placement:
    """A scaled translated template copy: point map p -> r*p + offset."""

    r: float
    offset: tuple


def _dedup(pts, tol):
    scale = max((abs(c) for p in pts for c in p), default=0.0) + 1.0
    out = []
    for p in pts:
        if not out or math.hypot(p[0] - out[-1][0], p[1] - out[-1][1]) > tol * scale:
            out.append(p)
    if len(out) > 1 and math.hypot(out[0][0] - out[-1][0], out[0][1] - out[-1][1]) <= tol * scale:
        out.pop()
    return out


def _signed_area(pts) -> float:
    s = 0.0
    for i in range(len(pts)):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % len(pts)]
        s += ax * by - ay * bx
    return 0.5 * s


def _centroid(pts):
    sx = sy = sa = 0.0
    for i in range(len(pts)):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % len(pts)]
        c = ax * by - ay * bx
        sa += c
        sx += (ax + bx) * c
        sy += (ay + by) * c
    sa *= 0.5
    return sx / (6 * sa), sy / (6 * sa)


def clip_points(pts, nx, ny, off):
    """Clip a CCW vertex list against {<x, n> <= off}. Raw fast path."""
    out = []
    m = len(pts)
    if m == 0:
        return out
    px, py = pts[-1]
    pv = nx * px + ny * py - off
    for i in range(m):
        cx, cy = pts[i]
        cv = nx * cx + ny * cy - off
        if cv <= 0.0:
            if pv > 0.0:
                t = pv / (pv - cv)
                out.append((px + t * (cx - px), py + t * (cy - py)))
            out.append((cx, cy))
        elif pv <= 0.0:
            t = pv / (pv - cv)
            out.append((px + t * (cx - px), py + t * (cy - py)))
        px, py, pv = cx, cy, cv
    return out


def clip(poly: ConvexPolygon, normal, offset: float) -> ConvexPolygon | None:
    """Intersection of poly with the half-plane {x: <x, normal> <= offset}.

    Returns None when the intersection is empty or degenerate
    (area below 1e-14).
    """
    nx, ny = float(normal[0]), float(normal[1])
    ln = math.hypot(nx, ny)
    if ln == 0.0:
        raise ValueError("normal must be nonzero")
    pts = clip_points(list(poly.pts), nx, ny, float(offset))
    if len(pts) < 3:
        return None
    pts = _dedup(pts, 1e-14)
    if len(pts) < 3 or _signed_area(pts) < _AREA_EPS:
        return None
    return ConvexPolygon(tuple(pts))


def area(poly: ConvexPolygon) -> float:
    """Shoelace area (positive for the CCW polygons used here)."""
    return _signed_area(poly.pts)


def rectangle(x0: float, y0: float, x1: float, y1: float) -> ConvexPolygon:
    return ConvexPolygon(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))


def regular_polygon(n: int, radius: float = 1.0, center=(0.0, 0.0)) -> ConvexPolygon:
    pts = []
    for k in range(n):
        a = 2 * math.pi * k / n
        pts.append((center[0] + radius * math.cos(a), center[1] + radius * math.sin(a)))
    return ConvexPolygon(tuple(pts))


def _cell_fully_inside(target: ConvexPolygon, x0, y0, x1, y1) -> bool:
    return (target.contains((x0, y0)) and target.contains((x1, y0))
            and target.contains((x1, y1)) and target.contains((x0, y1)))


def _cell_overlaps(target: ConvexPolygon, x0, y0, x1, y1) -> bool:
    pts = list(target.pts)
    for n, off in (((1.0, 0.0), x1), ((-1.0, 0.0), -x0), ((0.0, 1.0), y1), ((0.0, -1.0), -y0)):
        pts = clip_points(pts, n[0], n[1], off)
        if len(pts) < 3:
            return False
    return _signed_area(pts) > _AREA_EPS


def cover(target: ConvexPolygon, template: ConvexPolygon, fill: float,
          max_depth: int = 16) -> tuple[list[Placement], float]:
    """Cover target with disjoint scaled translated copies of template.

    Quadtree refinement of the target's bounding box: a quad cell fully
    inside the target receives one template copy scaled to the cell's
    inscribed box; partially overlapping cells are subdivided. Refinement
    stops once the covered area reaches fill * area(target).
    """
    if not 0.0 < fill < 1.0:
        raise ValueError("fill must be in (0, 1)")
    target_area = area(target)
    tx0, ty0, tx1, ty1 = template.bbox()
    tw, th = tx1 - tx0, ty1 - ty0
    copy_area = area(template)

    bx0, by0, bx1, by1 = target.bbox()
    side = max(bx1 - bx0, by1 - by0)
    placements: list[Placement] = []
    covered = 0.0
    frontier = [(bx0, by0, side)]

    for _depth in range(max_depth + 1):
        if covered >= fill * target_area:
            break
        next_frontier = []
        for (cx, cy, s) in frontier:
            if covered >= fill * target_area:
                break
            x1c, y1c = cx + s, cy + s
            if _cell_fully_inside(target, cx, cy, x1c, y1c):
                r = min(s / tw, s / th)
                # center the scaled template bbox inside the cell
                ox = cx + 0.5 * (s - r * tw) - r * tx0
                oy = cy + 0.5 * (s - r * th) - r * ty0
                placements.append(Placement(r=r, offset=(ox, oy)))
                covered += r * r * copy_area
            elif _cell_overlaps(target, cx, cy, x1c, y1c):
                h = 0.5 * s
                next_frontier.extend([(cx, cy, h), (cx + h, cy, h),
                                      (cx, cy + h, h), (cx + h, cy + h, h)])
        frontier = next_frontier
        if not frontier:
            break

    if covered < fill * target_area:
        raise FillUnreachable(
            f"covered {covered / target_area:.4f} of target after depth {max_depth}, "
            f"needed {fill:.4f}; template does not pack this target")
    return placements, target_area - covered


def placed_polygon(template: ConvexPolygon, placement: Placement) -> ConvexPolygon:
    ox, oy = placement.offset
    r = placement.r
    return ConvexPolygon(tuple((r * x + ox, r * y + oy) for x, y in template.pts))

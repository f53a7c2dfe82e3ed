"""Exact piecewise-affine convex-integration fields.

A wiggle replaces the affine map X x + b on a convex cell by a sawtooth
profile in the rank-one direction zeta, closed off by a low-slope tent
that vanishes on the cell boundary:

    w(x) = X x + b + xi * min( saw(<x, zeta>), sigma * dist(x, boundary) ).

Sawtooth cells carry exactly X1 or X2; tent cells carry X - sigma xi (x) n_e
per boundary edge e (the dust, at Frobenius distance sigma |xi| from X).
All cells come from half-plane clipping, so areas are exact and every
fraction below is asserted, not estimated.

Nested application along a split tree realizes laminates of finite order;
stage-by-stage application of the staircase trees realizes truncations;
the restart iteration re-expands dust cells (whose matrices stay in U)
with fresh staircases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .afs import AfsParams, build_afs_staircase, in_U, margin_U
from .errors import (BudgetExceeded, DegenerateSplit, EpsilonTooLargeForU,
                     NotInU, ParamViolation, RestartOutsideU)
from .geometry import ConvexPolygon, area, clip_points, _dedup, _signed_area
from .mat2 import Mat2, frobenius_norm, rank_one_factor
from .measure import SplitTree, validate_construction_steps
from .staircase import StaircaseTruncation

__all__ = [
    "Cell",
    "PiecewiseAffineField",
    "WiggleSpec",
    "RealizeConfig",
    "wiggle",
    "realize_finite_laminate",
    "realize_staircase",
    "restart_iteration",
    "error_integral",
]

TAGS = ("K", "dust", "active", "residual")
ERROR_TAGS = ("dust", "residual")
DEFAULT_MAX_CELLS = 2_000_000


@dataclass(frozen=True)
class Cell:
    """One affine piece w(x) = X x + b on a convex polygon."""

    poly: ConvexPolygon
    X: Mat2
    b: tuple
    tag: str

    def w(self, p) -> tuple:
        x, y = p
        return (self.X.a11 * x + self.X.a12 * y + self.b[0],
                self.X.a21 * x + self.X.a22 * y + self.b[1])


@dataclass(frozen=True)
class PiecewiseAffineField:
    cells: tuple
    domain: ConvexPolygon
    boundary_X: Mat2
    boundary_b: tuple

    def total_area(self) -> float:
        return sum(area(c.poly) for c in self.cells)


@dataclass(frozen=True)
class WiggleSpec:
    """One rank-one split X = lam*X1 + (1-lam)*X2 plus geometry knobs.

    r is the transverse thickness (tent slope is r/2); nfreq is the
    minimum sawtooth tooth count across the domain.
    """

    X: Mat2
    X1: Mat2
    X2: Mat2
    lam: float
    xi: np.ndarray
    zeta: np.ndarray
    r: float
    nfreq: int
    eps: float

    def validate(self):
        if not 0.0 < self.lam < 1.0:
            raise DegenerateSplit("lambda must lie in the open interval (0,1)")
        if self.nfreq < 1 or self.eps <= 0:
            raise DegenerateSplit("need nfreq >= 1 and eps > 0")
        if abs(math.hypot(*self.zeta) - 1.0) > 1e-12:
            raise DegenerateSplit("zeta must be a unit vector")
        xi_norm = math.hypot(*self.xi)
        if xi_norm == 0.0:
            raise DegenerateSplit("xi must be nonzero")
        mix = self.lam * self.X1 + (1.0 - self.lam) * self.X2
        if mix.dist(self.X) > 1e-10 * (1.0 + frobenius_norm(self.X)):
            raise DegenerateSplit("X is not the convex combination of X1, X2")
        outer = Mat2(self.xi[0] * self.zeta[0], self.xi[0] * self.zeta[1],
                     self.xi[1] * self.zeta[0], self.xi[1] * self.zeta[1])
        diff = self.X1 - self.X2
        if outer.dist(diff) > 1e-9 * (1.0 + frobenius_norm(diff)):
            raise DegenerateSplit("xi (x) zeta does not reproduce X1 - X2")
        if not 0.0 < self.r < 1.0 or self.r > self.eps / (2.0 * xi_norm) * (1 + 1e-12):
            raise DegenerateSplit("need 0 < r <= eps / (2 |xi|)")

    @staticmethod
    def build(X1: Mat2, X2: Mat2, lam: float, eps: float,
              nfreq: int = 1, X: Mat2 | None = None) -> "WiggleSpec":
        if not 0.0 < lam < 1.0:
            raise DegenerateSplit("lambda must lie in the open interval (0,1)")
        fact = rank_one_factor(X1 - X2)
        if X is None:
            X = lam * X1 + (1.0 - lam) * X2
        xi_norm = math.hypot(*fact.xi)
        r = min(eps / (2.0 * xi_norm), 0.999)
        spec = WiggleSpec(X=X, X1=X1, X2=X2, lam=lam, xi=fact.xi,
                          zeta=fact.zeta, r=r, nfreq=nfreq, eps=eps)
        spec.validate()
        return spec


@dataclass(frozen=True)
class RealizeConfig:
    """Budgets for staircase realization and the restart iteration."""

    eps: float = 0.2              # per-stage base tolerance
    eta: float = 1.0              # histogram slack: c_N = prod(1 + 2^-j eta)
    q: float = 2.0                # error-integral exponent
    alpha: float = 0.5            # Hoelder exponent for norm reports
    closeness_delta: float = 0.5  # target sup-closeness to the boundary map
    fill: float = 0.95            # covering fraction (template coverings)
    depth: int = 1                # staircase depth N
    rounds: int = 0               # restart rounds

    def validate(self):
        ok = (0 < self.eps < 1 and self.eta > 0 and self.q > 1
              and 0 < self.alpha < 1 and self.closeness_delta > 0
              and 0 < self.fill < 1 and self.depth >= 0 and self.rounds >= 0)
        if not ok:
            raise ParamViolation("realize config out of range")

    def c_n(self, n: int) -> float:
        out = 1.0
        for j in range(1, n + 1):
            out *= 1.0 + 2.0 ** -j * self.eta
        return out


def error_integral(field_or_cells, q: float) -> float:
    """Exact integral of (1 + |grad w|)^q over dust/residual cells."""
    cells = getattr(field_or_cells, "cells", field_or_cells)
    return sum(area(c.poly) * (1.0 + frobenius_norm(c.X)) ** q
               for c in cells if c.tag in ERROR_TAGS)


# ---------------------------------------------------------------------------
# single wiggle


def _edge_data(poly: ConvexPolygon):
    return poly.edges()


def _teeth_estimate(lam: float, xi_norm: float, sigma: float, poly: ConvexPolygon,
                    zeta, dust_frac: float, sup_target: float) -> int:
    """Tooth count needed for the dust-area and sup-closeness targets.

    The tent bands run along edges aligned with zeta (an edge at angle
    theta to zeta collects dust proportionally to |cos theta|), plus two
    side columns worth about one tooth each.
    """
    pts = poly.pts
    zx, zy = zeta[0], zeta[1]
    per_eff = 0.0
    for i in range(len(pts)):
        ex = pts[i][0] - pts[i - 1][0]
        ey = pts[i][1] - pts[i - 1][1]
        per_eff += abs(ex * zx + ey * zy)
    tvals = [zx * px + zy * py for px, py in pts]
    w = max(tvals) - min(tvals)
    ar = area(poly)
    ll = lam * (1.0 - lam)
    f = max(dust_frac, 1e-12)
    n_dust = (0.8 * per_eff * ll * w / (sigma * ar) + 3.0) / f
    n_sup = xi_norm * ll * w / max(sup_target, 1e-12)
    return max(1, int(math.ceil(max(n_dust, n_sup))))


def _dust_matrix(X: Mat2, xiv, sigma: float, ne) -> Mat2:
    return Mat2(X.a11 - sigma * xiv[0] * ne[0],
                X.a12 - sigma * xiv[0] * ne[1],
                X.a21 - sigma * xiv[1] * ne[0],
                X.a22 - sigma * xiv[1] * ne[1])


def _emit_piece_clipped(cells, poly_pts, edges, pa, pb, alpha, beta, zx, zy,
                        sigma, X, X1, X2, target, tag, b, xiv,
                        central=None) -> float:
    """General path: clip one sawtooth piece against the tent planes.

    When `central` = (u0 + band, u1 - band) is given (continuing atoms),
    the saw cell is cut to that transverse band so it comes out straight
    for the next split; the cut-off slivers keep the affine map but are
    tagged dust.
    """
    strip = clip_points(list(poly_pts), -zx, -zy, -pa)
    strip = clip_points(strip, zx, zy, pb)
    if len(strip) < 3:
        return 0.0
    dust_area = 0.0
    # saw value is alpha*t + beta; its max on the strip sits at an end
    maxsaw = max(alpha * pa + beta, alpha * pb + beta)
    active = []
    for (ne, off) in edges:
        dmin = min(off - ne[0] * px - ne[1] * py for px, py in strip)
        if sigma * dmin < maxsaw + 1e-15:
            active.append((ne, off))
    saw = strip
    for (ne, off) in active:
        saw = clip_points(saw, alpha * zx + sigma * ne[0],
                          alpha * zy + sigma * ne[1], sigma * off - beta)
        if len(saw) < 3:
            break
    if len(saw) >= 3:
        saw = _dedup(saw, 1e-14)
        bcell = (b[0] + beta * xiv[0], b[1] + beta * xiv[1])
        if len(saw) >= 3 and _signed_area(saw) > 1e-14:
            if central is None:
                cells.append(Cell(ConvexPolygon(tuple(saw)), target, bcell, tag))
            else:
                c_lo, c_hi = central
                px, py = -zy, zx  # transverse direction
                mid = clip_points(saw, -px, -py, -c_lo)
                mid = clip_points(mid, px, py, c_hi)
                for part, part_tag in ((mid, tag),
                                       (clip_points(saw, px, py, c_lo), "dust"),
                                       (clip_points(saw, -px, -py, -c_hi), "dust")):
                    part = _dedup(part, 1e-14)
                    if len(part) >= 3 and _signed_area(part) > 1e-14:
                        pg = ConvexPolygon(tuple(part))
                        if part_tag == "dust":
                            dust_area += area(pg)
                        cells.append(Cell(pg, target, bcell, part_tag))
    for i, (ne, off) in enumerate(active):
        tent = clip_points(strip, -(alpha * zx + sigma * ne[0]),
                           -(alpha * zy + sigma * ne[1]), -(sigma * off - beta))
        if len(tent) < 3:
            continue
        for j, (ne2, off2) in enumerate(active):
            if i == j:
                continue
            tent = clip_points(tent, ne2[0] - ne[0], ne2[1] - ne[1], off2 - off)
            if len(tent) < 3:
                break
        if len(tent) < 3:
            continue
        tent = _dedup(tent, 1e-14)
        if len(tent) < 3 or _signed_area(tent) <= 1e-14:
            continue
        poly_t = ConvexPolygon(tuple(tent))
        dust_area += area(poly_t)
        cells.append(Cell(poly_t, _dust_matrix(X, xiv, sigma, ne),
                          (b[0] + sigma * off * xiv[0],
                           b[1] + sigma * off * xiv[1]), "dust"))
    return dust_area


def _axis_rect(poly: ConvexPolygon):
    """(x0, y0, x1, y1) when the polygon is an axis-aligned rectangle."""
    if len(poly.pts) != 4:
        return None
    xs = sorted({p[0] for p in poly.pts})
    ys = sorted({p[1] for p in poly.pts})
    if len(xs) != 2 or len(ys) != 2:
        return None
    expect = {(xs[0], ys[0]), (xs[1], ys[0]), (xs[1], ys[1]), (xs[0], ys[1])}
    return (xs[0], ys[0], xs[1], ys[1]) if set(poly.pts) == expect else None


def _emit_wiggle_cells(poly: ConvexPolygon, X: Mat2, X1: Mat2, X2: Mat2,
                       lam: float, xi, zeta, sigma: float, n_teeth: int,
                       b, tags, rectify=()) -> tuple[list[Cell], float]:
    """Emit the sawtooth/tent partition of one cell. Returns (cells, dust area).

    Interior teeth of an axis-aligned rectangle with an axis-parallel
    zeta have closed-form cells; everything else goes through half-plane
    clipping. Atoms listed in `rectify` (matrices that a later split will
    expand again) get their saw cells emitted as an exact central
    rectangle plus two corner slivers: the slivers keep the same affine
    map but count as dust, and the rectangle keeps the next wiggle on the
    closed-form path.
    """
    zx, zy = float(zeta[0]), float(zeta[1])
    edges = _edge_data(poly)
    tvals = [zx * px + zy * py for px, py in poly.pts]
    tmin, tmax = min(tvals), max(tvals)
    bounds = np.linspace(tmin, tmax, n_teeth + 1)
    xiv = (float(xi[0]), float(xi[1]))
    cells: list[Cell] = []
    dust_area = 0.0
    amp = lam * (1.0 - lam) * (tmax - tmin) / n_teeth
    band = amp / sigma
    rectify_keys = {m.key() for m in rectify}

    rect = _axis_rect(poly)
    axis = 0 if (zx == 1.0 and zy == 0.0) else 1 if (zx == 0.0 and zy == 1.0) else None
    fast = rect is not None and axis is not None
    if fast:
        u0, u1 = (rect[1], rect[3]) if axis == 0 else (rect[0], rect[2])
        fast = (u1 - u0) > 2.05 * band
    if fast:
        # outward normals of the two zeta-parallel sides
        if axis == 0:
            n_bot, off_bot = (0.0, -1.0), -u0
            n_top, off_top = (0.0, 1.0), u1
        else:
            n_bot, off_bot = (-1.0, 0.0), -u0
            n_top, off_top = (1.0, 0.0), u1
        x_bot = _dust_matrix(X, xiv, sigma, n_bot)
        x_top = _dust_matrix(X, xiv, sigma, n_top)
        b_bot = (b[0] + sigma * off_bot * xiv[0], b[1] + sigma * off_bot * xiv[1])
        b_top = (b[0] + sigma * off_top * xiv[0], b[1] + sigma * off_top * xiv[1])

    def mk(tu_pts):
        if axis == 0:
            return ConvexPolygon(tuple(tu_pts))
        return ConvexPolygon(tuple((u, t) for t, u in reversed(tu_pts)))

    def emit_tu(tu_pts, mat, bvec, tag, as_dust):
        nonlocal dust_area
        pts = _dedup(list(tu_pts), 1e-14)
        if len(pts) < 3 or _signed_area(pts) <= 1e-14:
            return
        pg = mk(pts)
        if as_dust:
            dust_area += area(pg)
        cells.append(Cell(pg, mat, bvec, "dust" if as_dust else tag))

    for k in range(n_teeth):
        ta, tb = float(bounds[k]), float(bounds[k + 1])
        bp = ta + lam * (tb - ta)
        for (pa, pb, alpha, beta, target, tag) in (
                (ta, bp, 1.0 - lam, -(1.0 - lam) * ta, X1, tags[0]),
                (bp, tb, -lam, lam * tb, X2, tags[1])):
            if fast and pa - tmin > band and tmax - pb > band:
                sa = alpha * pa + beta
                sb = alpha * pb + beta
                ya, yb = u0 + sa / sigma, u0 + sb / sigma
                za, zb = u1 - sa / sigma, u1 - sb / sigma
                bcell = (b[0] + beta * xiv[0], b[1] + beta * xiv[1])
                if target.key() in rectify_keys:
                    ymax, zmin = max(ya, yb), min(za, zb)
                    emit_tu(((pa, ymax), (pb, ymax), (pb, zmin), (pa, zmin)),
                            target, bcell, tag, False)
                    emit_tu(((pa, ya), (pb, yb), (pb, ymax), (pa, ymax)),
                            target, bcell, tag, True)
                    emit_tu(((pa, zmin), (pb, zmin), (pb, zb), (pa, za)),
                            target, bcell, tag, True)
                else:
                    emit_tu(((pa, ya), (pb, yb), (pb, zb), (pa, za)),
                            target, bcell, tag, False)
                emit_tu(((pa, u0), (pb, u0), (pb, yb), (pa, ya)),
                        x_bot, b_bot, "dust", True)
                emit_tu(((pa, za), (pb, zb), (pb, u1), (pa, u1)),
                        x_top, b_top, "dust", True)
            else:
                central = None
                if target.key() in rectify_keys:
                    uvals = [-zy * px + zx * py for px, py in poly.pts]
                    central = (min(uvals) + band, max(uvals) - band)
                dust_area += _emit_piece_clipped(
                    cells, poly.pts, edges, pa, pb, alpha, beta, zx, zy,
                    sigma, X, X1, X2, target, tag, b, xiv, central=central)
    return cells, dust_area


def _wiggle_cell(poly: ConvexPolygon, b, spec_x: Mat2, X1: Mat2, X2: Mat2,
                 lam: float, xi, zeta, frac_tol: float, nfreq_floor: int,
                 dust_frac: float | None = None,
                 dust_eps: float | None = None,
                 u_predicate=None, u_margin: float | None = None,
                 avoid=(), tags=("K", "K"), sup_target: float | None = None,
                 budget=None, r_request: float | None = None,
                 rectify=()) -> list[Cell]:
    """Wiggle one cell, choosing sigma and the tooth count, with retries.

    frac_tol bounds the relative error of the two atom area fractions,
    dust_frac the dust area fraction, dust_eps (when given) the Frobenius
    distance of dust matrices from the base matrix. Raises
    EpsilonTooLargeForU when the dust radius cannot fit in U's margin,
    BudgetExceeded when the tooth count would blow the cell cap, and
    DegenerateSplit when 30 frequency doublings never land the exact
    fractions inside (1 +- frac_tol).
    """
    xi_norm = math.hypot(xi[0], xi[1])
    norm_gap = max(frobenius_norm(X1), frobenius_norm(X2)) - frobenius_norm(spec_x)
    if dust_frac is None:
        dust_frac = frac_tol
    cap = math.inf
    if dust_eps is not None:
        cap = 0.5 * dust_eps
    if u_margin is not None:
        if u_margin <= 0:
            raise EpsilonTooLargeForU("base matrix has no margin inside U")
        cap = min(cap, 0.9 * u_margin)
    if r_request is not None:
        if u_margin is not None and 0.5 * r_request * xi_norm > u_margin:
            raise EpsilonTooLargeForU(
                "requested transverse thickness exceeds the U margin")
        cap = min(cap, 0.5 * r_request * xi_norm)
    if not math.isfinite(cap):
        cap = 0.5 * dust_frac * xi_norm  # unconstrained: tie the slope to xi
    if norm_gap > 0:
        cap = min(cap, 0.999 * norm_gap)
    sigma = cap / xi_norm
    if sigma <= 0 or not math.isfinite(sigma):
        raise EpsilonTooLargeForU("no admissible dust radius at this matrix")

    cell_area = area(poly)
    sup = sup_target if sup_target is not None else frac_tol
    n = max(nfreq_floor,
            _teeth_estimate(lam, xi_norm, sigma, poly, zeta, dust_frac, sup))

    doublings = 0
    while True:
        if budget is not None:
            budget.charge_estimate(3 * n)
        cells, dust = _emit_wiggle_cells(poly, spec_x, X1, X2, lam, xi, zeta,
                                         sigma, n, b, tags, rectify=rectify)
        if budget is not None:
            budget.charge_estimate(-3 * n)

        collision = False
        for c in cells:
            if c.tag != "dust" or c.X is X1 or c.X is X2:
                continue
            for m in avoid:
                if c.X.dist(m) <= 1e-8:
                    collision = True
                    break
            if collision:
                break
        if collision:
            sigma *= 0.7
            continue
        if u_predicate is not None:
            for c in cells:
                if c.tag == "dust" and not u_predicate(c.X):
                    raise EpsilonTooLargeForU(
                        "dust gradient escaped U despite margin clamp")

        a1 = sum(area(c.poly) for c in cells if c.X is X1 and c.tag != "dust")
        a2 = sum(area(c.poly) for c in cells if c.X is X2 and c.tag != "dust")
        ok = (abs(a1 / (lam * cell_area) - 1.0) <= frac_tol
              and abs(a2 / ((1.0 - lam) * cell_area) - 1.0) <= frac_tol
              and dust <= dust_frac * cell_area)
        if ok:
            if budget is not None:
                budget.charge(len(cells))
            return cells
        doublings += 1
        if doublings > 30:
            raise DegenerateSplit(
                f"fractions missed (1 +- {frac_tol}) after 30 frequency doublings")
        n *= 2


class _CellBudget:
    """Running cell counter shared across one realization."""

    def __init__(self, max_cells: int, stage: int | None = None):
        self.max_cells = max_cells
        self.count = 0
        self.pending = 0
        self.stage = stage

    def charge_estimate(self, n: int):
        self.pending += n
        self._check()

    def charge(self, n: int):
        self.count += n
        self._check()

    def _check(self):
        total = self.count + max(self.pending, 0)
        if total > self.max_cells:
            raise BudgetExceeded(
                f"cell budget exhausted: needs more than {self.max_cells} cells"
                + (f" at stage {self.stage}" if self.stage is not None else ""),
                stage=self.stage, estimated_cells=total)


def wiggle(spec: WiggleSpec, b, domain: ConvexPolygon, u_predicate=None,
           u_margin: float | None = None, avoid=(), tags=("K", "K"),
           max_cells: int = DEFAULT_MAX_CELLS) -> PiecewiseAffineField:
    """Realize one rank-one split on a convex polygonal domain.

    Boundary values stay X x + b; sawtooth cells carry exactly X1 / X2
    with area fractions inside (1 +- eps) of lam / (1 - lam); dust cells
    total at most eps * |domain| and sit within eps of X (and inside U
    when a predicate and margin are supplied).
    """
    spec.validate()
    budget = _CellBudget(max_cells)
    cells = _wiggle_cell(domain, tuple(b), spec.X, spec.X1, spec.X2, spec.lam,
                         spec.xi, spec.zeta, spec.eps, spec.nfreq,
                         dust_frac=spec.eps, dust_eps=spec.eps,
                         u_predicate=u_predicate, u_margin=u_margin,
                         avoid=avoid, tags=tags, budget=budget,
                         r_request=spec.r)
    return PiecewiseAffineField(cells=tuple(cells), domain=domain,
                                boundary_X=spec.X, boundary_b=tuple(b))


# ---------------------------------------------------------------------------
# laminates of finite order


def _match(cell_x: Mat2, target: Mat2) -> bool:
    if cell_x is target or cell_x.key() == target.key():
        return True
    return cell_x.dist(target) <= 1e-12 * (1.0 + frobenius_norm(target))


def _realize_tree_on_cells(cells: list[Cell], tree: SplitTree, eps: float,
                           u_predicate, margin_fn, avoid, atom_tags,
                           budget: _CellBudget, sup_target: float | None = None,
                           extra_rectify=()):
    """Apply a split tree to every active cell carrying its root matrix.

    Step budgets split eps across the steps; atoms that a later step (or
    the follow-up stage, via extra_rectify) will expand again are emitted
    rectangle-first so the whole cascade stays on the closed-form path.
    """
    steps = tree.steps
    if not steps:
        return cells
    eps_step = eps / (2.0 * len(steps))
    sup_step = (sup_target / len(steps)) if sup_target is not None else None
    for idx, step in enumerate(steps):
        fact = rank_one_factor(step.left - step.right)
        margin = margin_fn(step.parent) if margin_fn is not None else None
        later = [s.parent for s in steps[idx + 1:]] + list(extra_rectify)
        rectify = tuple(m for m in (step.left, step.right)
                        if any(_match(m, p) for p in later))
        out: list[Cell] = []
        for c in cells:
            if c.tag == "active" and _match(c.X, step.parent):
                out.extend(_wiggle_cell(
                    c.poly, c.b, step.parent, step.left, step.right,
                    step.lambda_prime, fact.xi, fact.zeta, eps_step, 1,
                    u_predicate=u_predicate, u_margin=margin, avoid=avoid,
                    tags=("active", "active"), sup_target=sup_step,
                    budget=budget, rectify=rectify))
                budget.charge(-1)
            else:
                out.append(c)
        cells = out
    retagged = []
    for c in cells:
        if c.tag == "active":
            retagged.append(replace(c, tag=atom_tags.get(c.X.key(), "K")))
        else:
            retagged.append(c)
    return retagged


def realize_finite_laminate(tree: SplitTree, b, eps: float,
                            domain: ConvexPolygon, u_predicate=None,
                            margin_fn=None, atom_tags=None,
                            max_cells: int = DEFAULT_MAX_CELLS,
                            avoid=()) -> PiecewiseAffineField:
    """Realize a laminate of finite order given by its split tree.

    Every leaf atom (w_j, X_j) ends with area fraction inside
    (1 +- eps) w_j; dust plus residual stays below eps * |domain| with all
    dust gradients in U when a predicate is supplied.
    """
    if not 0.0 < eps < 1.0:
        raise ParamViolation("eps must lie in (0,1)")
    tree.validate()
    if u_predicate is not None:
        report = validate_construction_steps(tree, u_predicate)
        if not report.ok:
            raise NotInU(f"{len(report.violations)} construction steps outside U")

    tags = dict(atom_tags or {})
    budget = _CellBudget(max_cells)
    budget.charge(1)
    cells = [Cell(domain, tree.root, tuple(b), "active")]
    cells = _realize_tree_on_cells(cells, tree, eps, u_predicate, margin_fn,
                                   avoid, tags, budget)

    total = area(domain)
    for atom in tree.leaves.atoms:
        got = sum(area(c.poly) for c in cells
                  if c.tag not in ERROR_TAGS and _match(c.X, atom.matrix))
        if abs(got / (atom.weight * total) - 1.0) > eps:
            raise DegenerateSplit(
                f"leaf fraction {got / total:.6f} missed weight {atom.weight:.6f}")
    dust = sum(area(c.poly) for c in cells if c.tag in ERROR_TAGS)
    if dust > eps * total:
        raise DegenerateSplit("dust area exceeded eps * |domain|")
    return PiecewiseAffineField(cells=tuple(cells), domain=domain,
                                boundary_X=tree.root, boundary_b=tuple(b))


# ---------------------------------------------------------------------------
# staircase realization


def _stage_tolerance(cfg: RealizeConfig, n: int, y_max: float) -> float:
    """Per-stage tolerance: the 2^-n schedule capped by the error-integral
    budget eta 2^-(n+1) (1 + |Y_n|)^-q."""
    return min(cfg.eps * 2.0 ** -n,
               cfg.eta * 2.0 ** -(n + 1) * (1.0 + y_max) ** -cfg.q,
               0.49)


def realize_staircase(trunc: StaircaseTruncation, cfg: RealizeConfig, b,
                      domain: ConvexPolygon, params: AfsParams,
                      max_cells: int = DEFAULT_MAX_CELLS,
                      history: list | None = None) -> PiecewiseAffineField:
    """Realize a staircase truncation stage by stage.

    Stage n re-expands exactly the cells carrying X_{n-1} using the
    recorded omega_n split tree; atoms of mu_n become K cells and X_n
    cells stay active. Budgets follow eps_n = min(eps 2^-n,
    eta 2^-(n+1) (1+|Y_n|)^-q), which makes both the c_N histogram
    sandwich and the error-integral contract hold by construction.
    """
    cfg.validate()
    if len(trunc.trees) != trunc.depth:
        raise ParamViolation("truncation lacks its stage trees")
    u_pred = lambda m: in_U(m, params)  # noqa: E731
    margin_fn = lambda m: margin_U(m, params)  # noqa: E731

    budget = _CellBudget(max_cells)
    budget.charge(1)
    cells = [Cell(domain, trunc.X[0], tuple(b), "active")]

    for n in range(1, trunc.depth + 1):
        tree = trunc.trees[n - 1]
        y_max = max(frobenius_norm(a.matrix) for a in tree.leaves.atoms)
        y_max = max(y_max, *(frobenius_norm(s.parent) for s in tree.steps))
        eps_n = _stage_tolerance(cfg, n, y_max + 1.0)
        budget.stage = n
        avoid = tuple(trunc.X[n:])
        atom_tags = {a.matrix.key(): "K" for a in tree.leaves.atoms}
        atom_tags[trunc.X[n].key()] = "active"
        n_active = sum(1 for c in cells if c.tag == "active")
        # X_n continues into stage n+1, so its cells stay rectangular; at
        # the last stage the X_N cells keep their exact trapezoids, which
        # also keeps the dust clear of the forward soaring sequence
        extra = (trunc.X[n],) if n < trunc.depth else ()
        cells = _realize_tree_on_cells(cells, tree, eps_n, u_pred, margin_fn,
                                       avoid, atom_tags, budget,
                                       sup_target=cfg.closeness_delta * 2.0 ** -n,
                                       extra_rectify=extra)
        if history is not None:
            history.append({
                "stage": n, "eps_n": eps_n, "cells": len(cells),
                "expanded": n_active,
                "error_integral": error_integral(cells, cfg.q),
            })

    field = PiecewiseAffineField(cells=tuple(cells), domain=domain,
                                 boundary_X=trunc.X[0], boundary_b=tuple(b))
    _assert_staircase_contracts(field, trunc, cfg)
    return field


def _assert_staircase_contracts(field: PiecewiseAffineField,
                                trunc: StaircaseTruncation, cfg: RealizeConfig):
    total = area(field.domain)
    c_n = cfg.c_n(trunc.depth)
    got = {}
    for c in field.cells:
        if c.tag in ERROR_TAGS:
            continue
        got[c.X.key()] = got.get(c.X.key(), 0.0) + area(c.poly)
    for atom in trunc.nuN.atoms:
        mass = got.get(atom.matrix.key(), 0.0) / total
        if not (atom.weight / c_n <= mass <= atom.weight * c_n):
            raise ParamViolation(
                f"atom mass {mass:.6f} escaped the c_N sandwich of "
                f"{atom.weight:.6f} (c_N={c_n:.4f})")
    err = error_integral(field, cfg.q)
    bound = cfg.eta * total * (1.0 - 2.0 ** -trunc.depth)
    if err > bound:
        raise ParamViolation(
            f"error integral {err:.4e} exceeded eta |Omega| (1-2^-N) = {bound:.4e}")


# ---------------------------------------------------------------------------
# restart iteration


def restart_iteration(field: PiecewiseAffineField, params: AfsParams,
                      cfg: RealizeConfig, max_cells: int = DEFAULT_MAX_CELLS,
                      history: list | None = None) -> PiecewiseAffineField:
    """Re-expand the error cells with fresh staircases, round by round.

    Round k replaces every dust/residual cell (its matrix must lie in U)
    by a staircase realization started at that matrix, budgeted so the
    new error integral drops below min(2^-k |Omega|, half the previous
    one). Non-error cells are carried over untouched.
    """
    cfg.validate()
    omega_area = area(field.domain)
    cells = list(field.cells)
    for k in range(1, cfg.rounds + 1):
        err_cells = [c for c in cells if c.tag in ERROR_TAGS]
        if not err_cells:
            break
        for c in err_cells:
            if not in_U(c.X, params):
                raise RestartOutsideU(
                    f"error cell gradient outside U (tag={c.tag})")
        e_prev = error_integral(cells, cfg.q)
        err_area = sum(area(c.poly) for c in err_cells)
        target = min(2.0 ** -k * omega_area, 0.5 * e_prev)
        eta_k = target / (2.0 * err_area)
        sub_cfg = replace(cfg, eta=eta_k, rounds=0,
                          closeness_delta=cfg.closeness_delta * 2.0 ** -(k + 1))
        kept = [c for c in cells if c.tag not in ERROR_TAGS]
        new_cells: list[Cell] = []
        for c in err_cells:
            sub_trunc = build_afs_staircase(c.X, params, cfg.depth)
            sub = realize_staircase(sub_trunc, sub_cfg, c.b, c.poly, params,
                                    max_cells=max_cells)
            new_cells.extend(sub.cells)
        cells = kept + new_cells
        if history is not None:
            history.append({
                "round": k, "expanded": len(err_cells),
                "error_integral": error_integral(cells, cfg.q),
                "target": target, "cells": len(cells),
            })
    return PiecewiseAffineField(cells=tuple(cells), domain=field.domain,
                                boundary_X=field.boundary_X,
                                boundary_b=field.boundary_b)

"""Quantitative verification of realized fields.

Everything here is read-only over an immutable field. Gradients are
constant per cell, so gradient histograms, superlevel-set areas and the
error integral are exact sums of polygon areas; the weak-form residual
uses Gauss edge quadrature that is exact for the polynomial bump tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .afs import AfsParams, in_K_Lambda, in_K_Lambda_Gamma, in_U
from .errors import ExtractionFailed, UnmatchedAtom
from .geometry import area
from .mat2 import Mat2, frobenius_norm
from .measure import DiscreteMeasure, WeightedAtom
from .realize import ERROR_TAGS, PiecewiseAffineField, error_integral

__all__ = [
    "FieldTailReport",
    "ResidualReport",
    "gradient_distribution",
    "compare_distribution",
    "field_tail",
    "weak_residual",
    "sup_distance",
    "continuity_defect",
    "boundary_defect",
    "area_defect",
    "membership_defects",
    "superlevel_areas",
    "holder_estimate",
]


# ---------------------------------------------------------------------------
# gradient histograms


def gradient_distribution(field: PiecewiseAffineField,
                          tags=None) -> DiscreteMeasure:
    """Area-weighted empirical measure over distinct cell gradients.

    tags restricts to a subset of cell tags (e.g. the non-error cells
    when comparing against a laminate).
    """
    total = 0.0
    acc: dict = {}
    for c in field.cells:
        if tags is not None and c.tag not in tags:
            continue
        a = area(c.poly)
        total += a
        key = c.X.key()
        if key in acc:
            acc[key][0] += a
        else:
            acc[key] = [a, c.X]
    if total <= 0:
        raise ValueError("no cells selected")
    return DiscreteMeasure.from_atoms(
        [WeightedAtom(a / total, m) for a, m in acc.values()])


def compare_distribution(emp: DiscreteMeasure, ref: DiscreteMeasure,
                         factor: float, match_tol: float = 1e-8):
    """Per-atom mass comparison within the multiplicative factor.

    Atoms are matched by nearest matrix within match_tol. An empirical
    atom with no reference counterpart raises UnmatchedAtom; a reference
    atom with no empirical mass fails the verdict.
    """
    if factor < 1.0:
        raise ValueError("factor must be >= 1")
    rows = []
    used = [0.0] * len(emp.atoms)
    for r in ref.atoms:
        mass = 0.0
        for i, e in enumerate(emp.atoms):
            if e.matrix.dist(r.matrix) <= match_tol * (1.0 + frobenius_norm(r.matrix)):
                mass += e.weight
                used[i] += e.weight
        ok = r.weight / factor <= mass <= r.weight * factor
        rows.append((r.matrix, r.weight, mass, ok))
    for i, e in enumerate(emp.atoms):
        if e.weight - used[i] > 1e-12:
            raise UnmatchedAtom(
                f"empirical atom of mass {e.weight:.3e} has no reference match")
    return all(ok for *_, ok in rows), rows


# ---------------------------------------------------------------------------
# tails


@dataclass(frozen=True)
class FieldTailReport:
    t_grid: tuple
    measure_of_superlevel: tuple   # |{|grad w| > t}| / |Omega|
    fitted_slope: float
    c_lower: float
    C_upper: float

    def csv_rows(self):
        return list(zip(self.t_grid, self.measure_of_superlevel))


def _cell_arrays(field: PiecewiseAffineField, tags=None):
    norms, areas = [], []
    for c in field.cells:
        if tags is not None and c.tag not in tags:
            continue
        norms.append(frobenius_norm(c.X))
        areas.append(area(c.poly))
    return np.array(norms), np.array(areas)


def superlevel_areas(field: PiecewiseAffineField, t_grid, tags=None) -> np.ndarray:
    """Exact |{x: |grad w(x)| > t}| for each t (optionally tag-filtered)."""
    norms, areas = _cell_arrays(field, tags)
    order = np.argsort(norms)
    norms = norms[order]
    suffix = np.concatenate([np.cumsum(areas[order][::-1])[::-1], [0.0]])
    idx = np.searchsorted(norms, np.asarray(t_grid, dtype=float), side="right")
    return suffix[idx]


def field_tail(field: PiecewiseAffineField, t_grid,
               p_ref: float | None = None) -> FieldTailReport:
    """Superlevel measures, log-log slope, and sandwich constants.

    c_lower and C_upper bracket t^p * measure over the grid, with p the
    reference exponent (fitted slope magnitude when not supplied).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("grid must be increasing")
    total = area(field.domain)
    meas = superlevel_areas(field, t_grid) / total
    pos = meas > 0
    if pos.sum() >= 2:
        slope = float(np.polyfit(np.log(t_grid[pos]), np.log(meas[pos]), 1)[0])
    else:
        slope = float("nan")
    p = p_ref if p_ref is not None else abs(slope)
    vals = meas[pos] * t_grid[pos] ** p
    c_lo = float(vals.min()) if vals.size else 0.0
    c_hi = float(vals.max()) if vals.size else 0.0
    return FieldTailReport(t_grid=tuple(t_grid),
                           measure_of_superlevel=tuple(meas),
                           fitted_slope=slope, c_lower=c_lo, C_upper=c_hi)


# ---------------------------------------------------------------------------
# weak-form residual


_BUMP_DMAX = 96.0 / (25.0 * math.sqrt(5.0))  # max |d/ds (1-s^2)^3|
_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class ResidualReport:
    test_functions: int
    max_abs_residual: float
    bound: float
    max_perp_residual: float
    rows: tuple  # (index, residual, perp_residual, bound) per test function


@dataclass(frozen=True)
class _Bump:
    """phi(x, y) = (1-s1^2)^3 (1-s2^2)^3 with s_i = (x_i - c_i) / rho_i."""

    cx: float
    cy: float
    rx: float
    ry: float

    def grad_sup(self) -> float:
        return math.hypot(_BUMP_DMAX / self.rx, _BUMP_DMAX / self.ry)

    def values(self, x, y):
        s1 = (x - self.cx) / self.rx
        s2 = (y - self.cy) / self.ry
        inside = (np.abs(s1) < 1.0) & (np.abs(s2) < 1.0)
        out = np.zeros_like(s1)
        v1 = (1.0 - s1 * s1) ** 3
        v2 = (1.0 - s2 * s2) ** 3
        out[inside] = (v1 * v2)[inside]
        return out


def _random_bumps(field: PiecewiseAffineField, n_tests: int, seed: int):
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = field.domain.bbox()
    side = min(x1 - x0, y1 - y0)
    bumps = []
    while len(bumps) < n_tests:
        cx = rng.uniform(x0, x1)
        cy = rng.uniform(y0, y1)
        rho = rng.uniform(0.08, 0.25) * side
        rx = ry = rho
        placed = False
        for _ in range(40):
            corners = ((cx - rx, cy - ry), (cx + rx, cy - ry),
                       (cx + rx, cy + ry), (cx - rx, cy + ry))
            if all(field.domain.contains(p, tol=-1e-12) for p in corners):
                placed = True
                break
            rx *= 0.7
            ry *= 0.7
        if placed and rx > 1e-6 * side:
            bumps.append(_Bump(cx=cx, cy=cy, rx=rx, ry=ry))
    return bumps


def _edge_stack(field: PiecewiseAffineField):
    """Flattened edge arrays: start points, deltas, outward normal * length,
    plus the owning cell index."""
    starts, deltas, nl, owner = [], [], [], []
    for ci, c in enumerate(field.cells):
        pts = c.poly.pts
        m = len(pts)
        for i in range(m):
            ax, ay = pts[i]
            bx, by = pts[(i + 1) % m]
            starts.append((ax, ay))
            deltas.append((bx - ax, by - ay))
            nl.append((by - ay, ax - bx))  # outward normal scaled by edge length
            owner.append(ci)
    return (np.array(starts), np.array(deltas), np.array(nl),
            np.array(owner, dtype=int))


def _flux_per_cell(field, stack, bump: _Bump) -> np.ndarray:
    """Per-cell boundary fluxes: integral of phi n over each cell boundary."""
    starts, deltas, nl, owner = stack
    # support interval of the bump along each edge (phi is one polynomial
    # piece there, so 8-point Gauss is exact)
    t0 = np.zeros(len(starts))
    t1 = np.ones(len(starts))
    for (s, d, c, rho) in ((starts[:, 0], deltas[:, 0], bump.cx, bump.rx),
                           (starts[:, 1], deltas[:, 1], bump.cy, bump.ry)):
        lo, hi = c - rho, c + rho
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo - s) / d
            tb = (hi - s) / d
        swap = d < 0
        ta2 = np.where(swap, tb, ta)
        tb2 = np.where(swap, ta, tb)
        still = np.abs(d) < 1e-300
        ta2 = np.where(still, np.where((s >= lo) & (s <= hi), 0.0, 1.0), ta2)
        tb2 = np.where(still, np.where((s >= lo) & (s <= hi), 1.0, 0.0), tb2)
        t0 = np.maximum(t0, ta2)
        t1 = np.minimum(t1, tb2)
    mask = t1 > t0
    flux = np.zeros((len(field.cells), 2))
    if not mask.any():
        return flux
    s = starts[mask]
    d = deltas[mask]
    n = nl[mask]
    own = (np.arange(len(starts))[mask], owner[mask])[1]
    a = t0[mask][:, None]
    bwid = (t1[mask] - t0[mask])[:, None]
    tt = a + 0.5 * bwid * (_GAUSS_X[None, :] + 1.0)
    px = s[:, 0:1] + tt * d[:, 0:1]
    py = s[:, 1:2] + tt * d[:, 1:2]
    vals = bump.values(px, py)
    integ = 0.5 * bwid[:, 0] * vals @ _GAUSS_W  # integral of phi dt over [t0,t1]
    np.add.at(flux, own, n * integ[:, None])
    return flux


def weak_residual(field: PiecewiseAffineField, params: AfsParams,
                  n_tests: int = 10, seed: int = 0) -> ResidualReport:
    """Weak residual of div(A grad u) = 0 against seeded bump functions.

    A comes from elliptic extraction on K cells and is the identity on
    error cells. The reported bound is
    (1 + Lambda) * ||grad phi||_inf * integral_err (1 + |grad w|) dx
    plus quadrature slack 1e-8. The pure rotated-gradient residual
    (stream function part) is exactly zero for a continuous field and is
    reported alongside.
    """
    if n_tests < 1:
        raise ValueError("need at least one test function")
    f_vec = np.zeros((len(field.cells), 2))
    perp = np.zeros((len(field.cells), 2))
    for i, c in enumerate(field.cells):
        gu = (c.X.a11, c.X.a12)
        if c.tag == "K":
            coef = in_K_Lambda(c.X, params.lam, tol=1e-9)
            if coef is None:
                raise ExtractionFailed("K-tagged cell fails elliptic extraction")
            f_vec[i] = (coef.lambda1 * gu[0], coef.lambda2 * gu[1])
        else:
            f_vec[i] = gu
        perp[i] = (-c.X.a22, c.X.a21)

    stack = _edge_stack(field)
    err1 = error_integral(field, q=1.0)
    bumps = _random_bumps(field, n_tests, seed)
    rows = []
    for idx, bump in enumerate(bumps):
        flux = _flux_per_cell(field, stack, bump)
        r = float(np.sum(f_vec * flux))
        r_perp = float(np.sum(perp * flux))
        bound = (1.0 + params.lam) * bump.grad_sup() * err1 + 1e-8
        rows.append((idx, r, r_perp, bound))
    max_r = max(abs(r) for _, r, _, _ in rows)
    max_perp = max(abs(rp) for _, _, rp, _ in rows)
    bound_all = max(b for *_, b in rows)
    return ResidualReport(test_functions=n_tests, max_abs_residual=max_r,
                          bound=bound_all, max_perp_residual=max_perp,
                          rows=tuple(rows))


# ---------------------------------------------------------------------------
# pointwise checks


def sup_distance(field: PiecewiseAffineField) -> float:
    """Exact sup of |w - (X0 x + b)| over the field (attained at vertices)."""
    bx = field.boundary_X
    bb = field.boundary_b
    worst = 0.0
    for c in field.cells:
        dx = c.X - bx
        db = (c.b[0] - bb[0], c.b[1] - bb[1])
        for (px, py) in c.poly.pts:
            vx = dx.a11 * px + dx.a12 * py + db[0]
            vy = dx.a21 * px + dx.a22 * py + db[1]
            d = math.hypot(vx, vy)
            if d > worst:
                worst = d
    return worst


def continuity_defect(field: PiecewiseAffineField, max_checks: int | None = None) -> float:
    """Largest jump of w across cell interfaces.

    Edges are bucketed by their supporting line (canonical normal and
    offset, quantized); within a line, overlapping segments from opposite
    sides are exactly the shared interfaces (hanging vertices included),
    and the two affine maps are compared at the overlap endpoints, where
    affinity makes agreement along the whole overlap equivalent.
    """
    cells = field.cells
    kappa = 1e-8
    buckets: dict = {}
    for i, c in enumerate(cells):
        pts = c.poly.pts
        cx = sum(p[0] for p in pts) / len(pts)
        cy = sum(p[1] for p in pts) / len(pts)
        m = len(pts)
        for k in range(m):
            ax, ay = pts[k]
            bx, by = pts[(k + 1) % m]
            ln = math.hypot(bx - ax, by - ay)
            if ln <= 1e-13:
                continue
            nx, ny = (by - ay) / ln, (ax - bx) / ln
            if nx < 0 or (nx == 0 and ny < 0):
                nx, ny = -nx, -ny
            off = nx * ax + ny * ay
            side = 1 if nx * cx + ny * cy - off > 0 else -1
            ta = -ny * ax + nx * ay
            tb = -ny * bx + nx * by
            if ta > tb:
                ta, tb = tb, ta
            key = (round(nx / kappa), round(ny / kappa), round(off / kappa))
            buckets.setdefault(key, []).append((ta, tb, i, side, nx, ny, off))
    worst = 0.0
    checked = 0
    for edges in buckets.values():
        neg = sorted(e for e in edges if e[3] < 0)
        pos = sorted(e for e in edges if e[3] > 0)
        if not neg or not pos:
            continue
        j = 0
        for (ta, tb, i, _s, nx, ny, off) in neg:
            while j > 0 and pos[j - 1][1] > ta:
                j -= 1
            k = j
            while k < len(pos) and pos[k][0] < tb:
                lo = max(ta, pos[k][0])
                hi = min(tb, pos[k][1])
                if hi - lo > 1e-12:
                    if max_checks is not None and checked >= max_checks:
                        return worst
                    checked += 1
                    ci, cj = cells[i], cells[pos[k][2]]
                    for t in (lo, hi):
                        p = (off * nx - t * ny, off * ny + t * nx)
                        wp = ci.w(p)
                        wq = cj.w(p)
                        d = math.hypot(wp[0] - wq[0], wp[1] - wq[1])
                        if d > worst:
                            worst = d
                k += 1
    return worst


def boundary_defect(field: PiecewiseAffineField) -> float:
    """Largest |w - (X0 x + b)| over cell vertices lying on the domain boundary."""
    edges = field.domain.edges()
    worst = 0.0
    for c in field.cells:
        for p in c.poly.pts:
            on_boundary = any(abs(off - n[0] * p[0] - n[1] * p[1]) <= 1e-11
                              for n, off in edges)
            if not on_boundary:
                continue
            wb = (field.boundary_X.a11 * p[0] + field.boundary_X.a12 * p[1]
                  + field.boundary_b[0],
                  field.boundary_X.a21 * p[0] + field.boundary_X.a22 * p[1]
                  + field.boundary_b[1])
            wp = c.w(p)
            worst = max(worst, math.hypot(wp[0] - wb[0], wp[1] - wb[1]))
    return worst


def area_defect(field: PiecewiseAffineField) -> float:
    """Relative gap between the cell-area sum and the domain area."""
    total = area(field.domain)
    return abs(field.total_area() - total) / total


def membership_defects(field: PiecewiseAffineField, params: AfsParams,
                       tol: float = 1e-9) -> list:
    """Tag invariant violations: K cells must pass the elliptic-set test,
    dust/residual cells must lie in U."""
    bad = []
    for i, c in enumerate(field.cells):
        if c.tag == "K" and not in_K_Lambda_Gamma(c.X, params.lam,
                                                  params.ratio_cap, tol):
            bad.append((i, c.tag))
        elif c.tag in ERROR_TAGS and not in_U(c.X, params):
            bad.append((i, c.tag))
    return bad


def holder_estimate(field: PiecewiseAffineField, alpha: float,
                    n_samples: int = 4096, seed: int = 0) -> float:
    """Sampled estimate of the C^alpha seminorm of w - (X0 x + b).

    An estimate, not a bound: pairs of cell vertices are sampled and
    |dw(x) - dw(y)| / |x - y|^alpha maximized over them.
    """
    rng = np.random.default_rng(seed)
    verts = []
    for c in field.cells:
        dx = c.X - field.boundary_X
        db = (c.b[0] - field.boundary_b[0], c.b[1] - field.boundary_b[1])
        for p in c.poly.pts:
            verts.append((p[0], p[1],
                          dx.a11 * p[0] + dx.a12 * p[1] + db[0],
                          dx.a21 * p[0] + dx.a22 * p[1] + db[1]))
    verts = np.array(verts)
    n = len(verts)
    i = rng.integers(0, n, size=n_samples)
    j = rng.integers(0, n, size=n_samples)
    keep = i != j
    i, j = i[keep], j[keep]
    dxy = np.hypot(verts[i, 0] - verts[j, 0], verts[i, 1] - verts[j, 1])
    dw = np.hypot(verts[i, 2] - verts[j, 2], verts[i, 3] - verts[j, 3])
    keep = dxy > 1e-12
    if not keep.any():
        return 0.0
    return float(np.max(dw[keep] / dxy[keep] ** alpha))

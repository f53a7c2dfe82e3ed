"""Staircase laminate truncations and tail-bound certification.

A truncation holds the soaring sequence X_0..X_N, stage measures mu_n,
scalars gamma_n, the products beta_n, and the assembled measure

    nu^N = sum_n beta_{n-1} (1 - gamma_n) mu_n + beta_N delta_{X_N}.

The limit measure exists only through its truncations: every checkable
claim here is a statement about tails over a bounded range, and those
stabilize at finite N.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (BarycenterMismatch, DegenerateRange, GammaOutOfRange,
                     NonIncreasingSoar, ParamViolation)
from .mat2 import Mat2, frobenius_norm
from .measure import DiscreteMeasure, WeightedAtom, barycenter

__all__ = [
    "StaircaseTruncation",
    "TailReport",
    "assemble",
    "check_upper_tail",
    "check_lower_tail",
    "fit_tail_exponent",
]

DEFAULT_GRID_POINTS = 64


@dataclass(frozen=True)
class StaircaseTruncation:
    """Truncated staircase laminate with its stage data."""

    X: tuple            # soaring sequence X_0 .. X_N
    mu: tuple           # stage measures mu_1 .. mu_N
    gamma: tuple        # gamma_1 .. gamma_N
    beta: tuple         # beta_0 = 1, beta_n = prod gamma_k
    nuN: DiscreteMeasure
    trees: tuple        # one SplitTree per omega_n (may be empty)

    @property
    def depth(self) -> int:
        return len(self.mu)

    def soar_norm(self) -> float:
        return frobenius_norm(self.X[-1])

    def tail_function(self):
        """Sorted atom norms and suffix mass sums for fast tail queries."""
        norms = np.array([frobenius_norm(a.matrix) for a in self.nuN.atoms])
        weights = np.array([a.weight for a in self.nuN.atoms])
        order = np.argsort(norms)
        norms = norms[order]
        suffix = np.cumsum(weights[order][::-1])[::-1]
        return norms, suffix

    def tail_mass_grid(self, t_grid: np.ndarray) -> np.ndarray:
        norms, suffix = self.tail_function()
        idx = np.searchsorted(norms, t_grid, side="right")
        out = np.zeros_like(np.asarray(t_grid, dtype=float))
        inside = idx < len(norms)
        out[inside] = suffix[idx[inside]]
        return out


@dataclass(frozen=True)
class TailReport:
    p: float
    M_fit: float
    m_fit: float
    slope: float
    t_grid: tuple
    masses: tuple
    witness_t: float | None = None   # first grid point violating the bound

    def csv_rows(self, x0_norm: float):
        """Rows (t, mass, bound_upper, bound_lower) for CSV emission."""
        up = self.M_fit ** self.p * (1.0 + x0_norm ** self.p)
        lo = self.m_fit ** self.p
        return [(t, m, up * t ** -self.p, lo * t ** -self.p)
                for t, m in zip(self.t_grid, self.masses)]


def assemble(X, mu, gamma, N: int | None = None, trees=()) -> StaircaseTruncation:
    """Build the truncation nu^N from stage data, validating each stage.

    Each omega_n = (1 - gamma_n) mu_n + gamma_n delta_{X_n} must average
    back to X_{n-1}; gamma_n must sit inside (0, 1); the soaring norms
    must strictly increase; mu_n may not touch the soaring sequence.
    """
    X = tuple(X)
    mu = tuple(mu)
    gamma = tuple(gamma)
    if N is None:
        N = len(mu)
    if not (len(mu) == len(gamma) == N and len(X) == N + 1):
        raise ParamViolation("stage data lengths disagree with N")

    soar_norms = [frobenius_norm(x) for x in X]
    for n in range(N):
        if soar_norms[n + 1] <= soar_norms[n]:
            raise NonIncreasingSoar(f"|X_{n + 1}| <= |X_{n}|")
    for n, g in enumerate(gamma, start=1):
        if not 0.0 < g < 1.0:
            raise GammaOutOfRange(f"gamma_{n}={g} not in (0,1)")
    # candidate soaring matrices for the support check, indexed by norm so
    # the scan stays O(atoms log N) at staircase depths in the thousands
    norm_order = np.argsort(soar_norms)
    sorted_norms = np.asarray(soar_norms)[norm_order]
    for n in range(1, N + 1):
        for a in mu[n - 1].atoms:
            an = frobenius_norm(a.matrix)
            lo = np.searchsorted(sorted_norms, an - 1e-7)
            hi = np.searchsorted(sorted_norms, an + 1e-7)
            for j in norm_order[lo:hi]:
                if a.matrix.dist(X[j]) <= 1e-8:
                    raise ParamViolation(
                        f"mu_{n} touches the soaring sequence at stage {n}")
        omega_atoms = list(mu[n - 1].scaled(1.0 - gamma[n - 1]))
        omega_atoms.append(WeightedAtom(gamma[n - 1], X[n]))
        omega = DiscreteMeasure.from_atoms(omega_atoms)
        drift = barycenter(omega).dist(X[n - 1])
        if drift > 1e-9 * (1.0 + soar_norms[n - 1]):
            raise BarycenterMismatch(
                f"stage {n}: omega_{n} barycenter off by {drift:.3e}")

    beta = [1.0]
    for g in gamma:
        beta.append(beta[-1] * g)

    atoms = [WeightedAtom(beta[N], X[N])]
    for n in range(1, N + 1):
        w = beta[n - 1] * (1.0 - gamma[n - 1])
        atoms.extend(WeightedAtom(w * a.weight, a.matrix) for a in mu[n - 1].atoms)
    nuN = DiscreteMeasure.from_atoms(atoms) if atoms else DiscreteMeasure.dirac(X[0])

    drift = barycenter(nuN).dist(X[0])
    if drift > max(1.0, N) * 1e-10:
        raise BarycenterMismatch(f"nu^N barycenter drift {drift:.3e} after {N} stages")
    return StaircaseTruncation(X=X, mu=mu, gamma=gamma, beta=tuple(beta),
                               nuN=nuN, trees=tuple(trees))


def _tail_report(trunc: StaircaseTruncation, p: float, t_grid: np.ndarray,
                 witness_t: float | None = None) -> TailReport:
    masses = trunc.tail_mass_grid(t_grid)
    x0 = frobenius_norm(trunc.X[0])
    pos = masses > 0
    mfit = float(np.min((masses[pos] * t_grid[pos] ** p) ** (1.0 / p))) if pos.any() else 0.0
    # the theorem constrains M >= 1, so the fit clamps there from below
    Mfit = max(1.0, float(np.max((masses * t_grid ** p / (1.0 + x0 ** p)) ** (1.0 / p))))
    if pos.sum() >= 2:
        slope = float(np.polyfit(np.log(t_grid[pos]), np.log(masses[pos]), 1)[0])
    else:
        slope = float("nan")
    return TailReport(p=p, M_fit=Mfit, m_fit=mfit, slope=slope,
                      t_grid=tuple(t_grid), masses=tuple(masses), witness_t=witness_t)


def check_upper_tail(trunc: StaircaseTruncation, p: float, M: float,
                     n_points: int = DEFAULT_GRID_POINTS) -> tuple[bool, TailReport]:
    """Tail <= M^p (1 + |X_0|^p) t^-p on a log grid over [1, 2 |X_N|]."""
    if p <= 1 or M < 1:
        raise ParamViolation("need p > 1 and M >= 1")
    t_grid = np.geomspace(1.0, 2.0 * trunc.soar_norm(), n_points)
    masses = trunc.tail_mass_grid(t_grid)
    x0 = frobenius_norm(trunc.X[0])
    bound = M ** p * (1.0 + x0 ** p) * t_grid ** -p
    bad = np.nonzero(masses > bound)[0]
    witness = float(t_grid[bad[0]]) if bad.size else None
    return bad.size == 0, _tail_report(trunc, p, t_grid, witness)


def check_lower_tail(trunc: StaircaseTruncation, p: float, m: float,
                     n_points: int = DEFAULT_GRID_POINTS) -> tuple[bool, TailReport]:
    """Tail >= m^p t^-p on a log grid over (1, |X_N| / 2].

    The truncation cannot carry mass beyond |X_N|, so the checked range
    stops at half the soaring norm by contract.
    """
    if p <= 1 or m <= 0:
        raise ParamViolation("need p > 1 and m > 0")
    hi = trunc.soar_norm() / 2.0
    t_grid = np.geomspace(1.0, hi, n_points + 1)[1:]
    masses = trunc.tail_mass_grid(t_grid)
    bound = m ** p * t_grid ** -p
    bad = np.nonzero(masses < bound)[0]
    witness = float(t_grid[bad[0]]) if bad.size else None
    return bad.size == 0, _tail_report(trunc, p, t_grid, witness)


def fit_tail_exponent(trunc: StaircaseTruncation, t_lo: float, t_hi: float,
                      n_points: int = DEFAULT_GRID_POINTS) -> float:
    """Least-squares slope of log tail vs log t on a log-uniform grid."""
    if not 1.0 < t_lo < t_hi < trunc.soar_norm():
        raise ParamViolation("need 1 < t_lo < t_hi < |X_N|")
    n_points = max(20, n_points)
    t_grid = np.geomspace(t_lo, t_hi, n_points)
    masses = trunc.tail_mass_grid(t_grid)
    if np.any(masses <= 0.0):
        raise DegenerateRange("tail mass vanishes inside the fit range")
    return float(np.polyfit(np.log(t_grid), np.log(masses), 1)[0])

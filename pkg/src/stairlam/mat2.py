"""2x2 matrix utilities: norms, rank-one tests, rank-one factorization.

Matrices are small enough that a frozen dataclass of four floats beats
ndarray overhead in the hot paths, while `.array` gives numpy interop.
The Frobenius norm is used throughout the package; operator/Frobenius
equivalence costs at most sqrt(2) and is absorbed into fitted constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotRankOne

__all__ = [
    "Mat2",
    "RankOneFactorization",
    "frobenius_norm",
    "is_rank_one",
    "rank_one_factor",
]


@dataclass(frozen=True)
class Mat2:
    """A real 2x2 matrix with entries a11, a12, a21, a22 (row major)."""

    a11: float
    a12: float
    a21: float
    a22: float

    def __post_init__(self):
        for name in ("a11", "a12", "a21", "a22"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite entry {name}")

    @property
    def array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])

    @staticmethod
    def from_array(a) -> "Mat2":
        a = np.asarray(a, dtype=float)
        return Mat2(float(a[0, 0]), float(a[0, 1]), float(a[1, 0]), float(a[1, 1]))

    @staticmethod
    def from_rows(rows) -> "Mat2":
        (a11, a12), (a21, a22) = rows
        return Mat2(float(a11), float(a12), float(a21), float(a22))

    def rows(self) -> list[list[float]]:
        return [[self.a11, self.a12], [self.a21, self.a22]]

    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a21

    def __add__(self, other: "Mat2") -> "Mat2":
        return Mat2(self.a11 + other.a11, self.a12 + other.a12,
                    self.a21 + other.a21, self.a22 + other.a22)

    def __sub__(self, other: "Mat2") -> "Mat2":
        return Mat2(self.a11 - other.a11, self.a12 - other.a12,
                    self.a21 - other.a21, self.a22 - other.a22)

    def __mul__(self, s: float) -> "Mat2":
        return Mat2(self.a11 * s, self.a12 * s, self.a21 * s, self.a22 * s)

    __rmul__ = __mul__

    def apply(self, x) -> np.ndarray:
        """Matrix-vector product with a 2-vector."""
        return np.array([self.a11 * x[0] + self.a12 * x[1],
                         self.a21 * x[0] + self.a22 * x[1]])

    def key(self) -> tuple[float, float, float, float]:
        """Lexicographic ordering key on entries."""
        return (self.a11, self.a12, self.a21, self.a22)

    def dist(self, other: "Mat2") -> float:
        return frobenius_norm(self - other)


@dataclass(frozen=True)
class RankOneFactorization:
    """Decomposition D = xi (x) zeta with zeta a unit right factor."""

    xi: np.ndarray
    zeta: np.ndarray

    def outer(self) -> Mat2:
        return Mat2(self.xi[0] * self.zeta[0], self.xi[0] * self.zeta[1],
                    self.xi[1] * self.zeta[0], self.xi[1] * self.zeta[1])


def frobenius_norm(x: Mat2) -> float:
    return math.sqrt(x.a11 * x.a11 + x.a12 * x.a12 + x.a21 * x.a21 + x.a22 * x.a22)


def is_rank_one(d: Mat2, tol: float = 1e-9) -> bool:
    """True iff |det D| <= tol * ||D||_F^2 and D is nonzero.

    The determinant test is scaled by the squared norm so the predicate is
    invariant under rescaling, which matters once matrices soar.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n2 = d.a11 * d.a11 + d.a12 * d.a12 + d.a21 * d.a21 + d.a22 * d.a22
    if n2 == 0.0:
        return False
    return abs(d.det()) <= tol * n2


def rank_one_factor(d: Mat2, tol: float = 1e-9) -> RankOneFactorization:
    """Factor a rank-one D as xi (x) zeta.

    zeta is the dominant eigenvector of D^T D (unit, first nonzero component
    positive so the factorization is deterministic); xi = D zeta.
    """
    if not is_rank_one(d, tol):
        raise NotRankOne(f"matrix is not rank one within tol={tol}")
    # D^T D = [[p, q], [q, r]], symmetric 2x2 eigenproblem in closed form.
    p = d.a11 * d.a11 + d.a21 * d.a21
    q = d.a11 * d.a12 + d.a21 * d.a22
    r = d.a12 * d.a12 + d.a22 * d.a22
    half_tr = 0.5 * (p + r)
    disc = math.sqrt(max(0.25 * (p - r) ** 2 + q * q, 0.0))
    lam_max = half_tr + disc
    # Eigenvector of the larger eigenvalue; pick the numerically stable row.
    v1 = np.array([q, lam_max - p])
    v2 = np.array([lam_max - r, q])
    v = v1 if np.dot(v1, v1) >= np.dot(v2, v2) else v2
    nv = math.sqrt(v[0] * v[0] + v[1] * v[1])
    if nv == 0.0:
        # q == 0 and degenerate trace split: D^T D is already diagonal.
        v = np.array([1.0, 0.0]) if p >= r else np.array([0.0, 1.0])
        nv = 1.0
    zeta = v / nv
    if zeta[0] < 0 or (zeta[0] == 0 and zeta[1] < 0):
        zeta = -zeta
    xi = d.apply(zeta)
    fact = RankOneFactorization(xi=xi, zeta=zeta)
    err = frobenius_norm(fact.outer() - d)
    scale = frobenius_norm(d)
    if err > 1e-9 * scale:
        raise NotRankOne(f"reconstruction error {err / scale:.3e} above 1e-9")
    return fact

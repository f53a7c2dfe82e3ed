"""The equal-diagonal staircase construction inside the elliptic set.

Everything here is closed form: the feasibility block (Lambda, a_bar,
delta, gamma, Gamma, p), membership predicates for the elliptic set
K_Lambda and its row-ratio restriction, the open set U of admissible
restart matrices, the diagonal-equalizing first split, the two-split
stage producing (G_{n,1}, G_{n,2}, X_n), and the assembled truncation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import Infeasible, NotInU, ParamViolation
from .mat2 import Mat2, frobenius_norm
from .measure import DiscreteMeasure, SplitStep, SplitTree, WeightedAtom
from .staircase import StaircaseTruncation, assemble

__all__ = [
    "AfsParams",
    "EllipticCoefficient",
    "default_params",
    "in_K_Lambda",
    "in_K_Lambda_Gamma",
    "in_U",
    "margin_U",
    "equalize_diagonal",
    "EqualizeSplit",
    "StageSplit",
    "staircase_stage",
    "gamma_ratio_form",
    "build_afs_staircase",
]


@dataclass(frozen=True)
class AfsParams:
    """Feasible parameter block. p is pinned to 2*lam/(lam-1)."""

    lam: float       # ellipticity Lambda > 1
    a_bar: float     # diagonal floor of U
    delta: float     # relative diagonal spread of U
    gamma: float     # off-diagonal spread of U
    ratio_cap: float  # row-sum ratio bound Gamma of K_{Lambda,Gamma}
    p: float

    def validate(self):
        problems = []
        if not self.lam > 1:
            problems.append("Lambda must exceed 1")
        if not (0 < self.delta < 0.5):
            problems.append("delta must lie in (0, 1/2)")
        if not (0 < self.gamma < 0.5):
            problems.append("gamma must lie in (0, 1/2)")
        if not self.a_bar > 4:
            problems.append("a_bar must exceed 4")
        if not self.ratio_cap > 2 * self.lam + 10:
            problems.append("Gamma must exceed 2*Lambda + 10")
        if not 1 - self.delta > 1 / self.lam:
            problems.append("need 1 - delta > 1/Lambda")
        if not self.gamma < (self.lam - 1) / (self.lam + 1):
            problems.append("need gamma < (Lambda-1)/(Lambda+1)")
        if not self.a_bar > self.lam / (self.lam - 1) + 10:
            problems.append("need a_bar > Lambda/(Lambda-1) + 10")
        if not 1 / self.a_bar < self.delta:
            problems.append("need 1/a_bar < delta")
        if abs(self.p - 2 * self.lam / (self.lam - 1)) > 1e-12 * self.p:
            problems.append("p must equal 2*Lambda/(Lambda-1)")
        if problems:
            raise Infeasible("; ".join(problems))


@dataclass(frozen=True)
class EllipticCoefficient:
    """Diagonal A = diag(lambda1, lambda2) witnessing K_Lambda membership."""

    lambda1: float
    lambda2: float


def default_params(lam: float) -> AfsParams:
    """Reproducible feasible defaults for a given Lambda.

    a_bar = Lambda/(Lambda-1) + 10.5, delta = min(0.1, (1-1/Lambda)/2)
    lifted above 1/a_bar when needed, gamma at half its cap,
    Gamma = 2*Lambda + 11.
    """
    if not lam > 1:
        raise Infeasible("Lambda must exceed 1")
    a_bar = lam / (lam - 1) + 10.5
    delta = min(0.1, (1 - 1 / lam) / 2)
    if 1 / a_bar >= delta:
        delta = min(0.1, 0.5 * (1 / a_bar + (1 - 1 / lam)))
    gamma = (lam - 1) / (2 * (lam + 1))
    params = AfsParams(lam=lam, a_bar=a_bar, delta=delta,
                       gamma=min(gamma, 0.499), ratio_cap=2 * lam + 11,
                       p=2 * lam / (lam - 1))
    params.validate()
    return params


def in_K_Lambda(x: Mat2, lam: float, tol: float = 1e-9) -> EllipticCoefficient | None:
    """Diagonal elliptic coefficient A with A (a,b)^T + (-d,c)^T = 0, or None.

    Requires d/a in {Lambda, 1/Lambda} (relative tolerance) and
    -c/b in [1/Lambda, Lambda]; zero rows degenerate to the exact
    solvability conditions d = 0 resp. c = 0.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a, b, c, d = x.a11, x.a12, x.a21, x.a22
    scale = frobenius_norm(x)

    if a == 0.0 or abs(a) <= tol * scale:
        if abs(d) > tol * max(1.0, scale):
            return None
        lam1 = lam
    else:
        ratio = d / a
        cands = [v for v in (lam, 1.0 / lam) if abs(ratio - v) <= tol * (1.0 + abs(ratio))]
        if not cands:
            return None
        lam1 = min(cands, key=lambda v: abs(ratio - v))

    if b == 0.0 or abs(b) <= tol * scale:
        if abs(c) > tol * max(1.0, scale):
            return None
        lam2 = 1.0
    else:
        alpha = -c / b
        if not (1.0 / lam - tol <= alpha <= lam + tol):
            return None
        lam2 = min(max(alpha, 1.0 / lam), lam)

    res = math.hypot(lam1 * a - d, lam2 * b + c)
    if res > tol * max(1.0, scale):
        return None
    return EllipticCoefficient(lambda1=lam1, lambda2=lam2)


def in_K_Lambda_Gamma(x: Mat2, lam: float, ratio_cap: float, tol: float = 1e-9) -> bool:
    """K_Lambda membership plus row-sum ratio inside [1/Gamma, Gamma].

    The zero matrix is excluded (its ratio is 0/0)."""
    if in_K_Lambda(x, lam, tol) is None:
        return False
    num = abs(x.a11) + abs(x.a12)
    den = abs(x.a21) + abs(x.a22)
    if den == 0.0 or num == 0.0:
        return False
    ratio = num / den
    return 1.0 / ratio_cap - tol <= ratio <= ratio_cap + tol


def in_U(x: Mat2, params: AfsParams) -> bool:
    """Exact predicate for [[a, b], [-c, d]]: a, d > a_bar, |1 - a/d| < delta,
    |1 - b| < gamma, |1 - c| < gamma."""
    a, b, d = x.a11, x.a12, x.a22
    c = -x.a21
    if not (a > params.a_bar and d > params.a_bar):
        return False
    if abs(1.0 - a / d) >= params.delta:
        return False
    return abs(1.0 - b) < params.gamma and abs(1.0 - c) < params.gamma


def margin_U(x: Mat2, params: AfsParams) -> float:
    """Largest rho with the Frobenius ball B(x, rho) inside U (<= 0 outside).

    Four of the five constraints move one entry each; the diagonal-spread
    constraint |1 - a/d| < delta is a pair of lines through the origin in
    the (a, d) plane, measured by point-line distance.
    """
    a, b, d = x.a11, x.a12, x.a22
    c = -x.a21
    m = min(a - params.a_bar,
            d - params.a_bar,
            params.gamma - abs(1.0 - b),
            params.gamma - abs(1.0 - c))
    dl = params.delta
    m = min(m, (a - (1 - dl) * d) / math.hypot(1.0, 1.0 - dl))
    m = min(m, ((1 + dl) * d - a) / math.hypot(1.0, 1.0 + dl))
    return m


@dataclass(frozen=True)
class EqualizeSplit:
    """First split making the diagonal entries equal (None when x == y)."""

    weight: float
    g: Mat2        # elliptic-set atom
    x_half: Mat2   # equal-diagonal continuation


def equalize_diagonal(x0: Mat2, params: AfsParams) -> EqualizeSplit | None:
    """Split X0 = weight*G + (1-weight)*X_half with equal-diagonal X_half.

    Case x < y takes G = [[y/L, s1], [-s2, y]]; case x > y is the
    symmetric decomposition; x == y skips. The convex reconstruction is
    re-verified numerically rather than trusted.
    """
    if not in_U(x0, params):
        raise NotInU("equalize_diagonal needs X0 in U")
    lam = params.lam
    x, y = x0.a11, x0.a22
    s1, ms2 = x0.a12, x0.a21
    if x == y:
        return None
    if x < y:
        weight = lam * (y - x) / ((lam - 1) * y)
        g = Mat2(y / lam, s1, ms2, y)
        x_half = Mat2(y, s1, ms2, y)
    else:
        weight = lam * (x - y) / ((lam - 1) * x)
        g = Mat2(x, s1, ms2, x / lam)
        x_half = Mat2(x, s1, ms2, x)
    if not 0.0 < weight < 1.0:
        raise ParamViolation(f"equalizing weight {weight} left (0,1)")
    recon = weight * g + (1.0 - weight) * x_half
    if recon.dist(x0) > 1e-10 * (1.0 + frobenius_norm(x0)):
        raise ParamViolation("equalizing split does not reconstruct X0")
    if not in_K_Lambda_Gamma(g, lam, params.ratio_cap):
        raise ParamViolation("equalizing split left the elliptic set")
    if not in_U(x_half, params):
        raise ParamViolation("equal-diagonal continuation left U")
    return EqualizeSplit(weight=weight, g=g, x_half=x_half)


@dataclass(frozen=True)
class StageSplit:
    """Closed forms of one staircase stage X_{n-1} -> {G_{n,1}, G_{n,2}, X_n}."""

    lam1: float
    g1: Mat2
    lam2: float
    g2: Mat2
    gamma_n: float
    xn: Mat2
    mid: Mat2         # intermediate matrix between the two splits
    lam_mid: float    # second-split weight: mid = lam_mid*g2 + (1-lam_mid)*xn


def staircase_stage(x: float, sigma1: float, sigma2: float, n: int,
                    params: AfsParams) -> StageSplit:
    """Stage n of the staircase with equal diagonal base x.

    With u = x+n-1 and v = x+n:
      G_{n,1} = [[u/L, s1], [-s2, u]],   lam_{n,1} = L / (L v - u)
      G_{n,2} = [[v, s1], [-s2, v/L]],   lam_{n,2} = (1 - lam_{n,1}) * L / ((L-1) v)
      X_n     = [[v, s1], [-s2, v]]
    """
    lam = params.lam
    if n < 1:
        raise ParamViolation("stage index must be >= 1")
    if not x > params.a_bar:
        raise ParamViolation("need x > a_bar")
    if abs(1.0 - sigma1) >= params.gamma or abs(1.0 - sigma2) >= params.gamma:
        raise ParamViolation("off-diagonal entries violate the gamma band")
    u = x + n - 1
    v = x + n
    lam1 = lam / (lam * v - u)
    lam_mid = lam / ((lam - 1) * v)
    lam2 = (1.0 - lam1) * lam_mid
    gamma_n = (1.0 - lam1) * (1.0 - lam_mid)
    g1 = Mat2(u / lam, sigma1, -sigma2, u)
    g2 = Mat2(v, sigma1, -sigma2, v / lam)
    xn = Mat2(v, sigma1, -sigma2, v)
    mid = Mat2(v, sigma1, -sigma2, u)

    if not (0.0 < lam1 < 1.0 and 0.0 < lam_mid < 1.0):
        raise ParamViolation("stage weights left (0,1)")
    if abs(lam1 + lam2 + gamma_n - 1.0) > 1e-12:
        raise ParamViolation("stage weights do not sum to 1")
    parent = Mat2(u, sigma1, -sigma2, u)
    recon = lam1 * g1 + lam2 * g2 + gamma_n * xn
    if recon.dist(parent) > 1e-10 * (1.0 + u):
        raise ParamViolation(f"stage {n} does not reconstruct its parent")
    for g in (g1, g2):
        if not in_K_Lambda_Gamma(g, lam, params.ratio_cap):
            raise ParamViolation(f"stage {n} atom left the elliptic set")
    if not (in_U(xn, params) and in_U(mid, params)):
        raise ParamViolation(f"stage {n} continuation left U")
    return StageSplit(lam1=lam1, g1=g1, lam2=lam2, g2=g2, gamma_n=gamma_n,
                      xn=xn, mid=mid, lam_mid=lam_mid)


def gamma_ratio_form(x: float, n: int, lam: float) -> float:
    """Product form [(x+n-1)/(x+n)] * [(x+n-a)/(x+n+b)] of gamma_n,
    with a = L/(L-1) and b = 1/(L-1). Must agree with the stage closed
    form to 1e-12: this identity is what makes beta_n ~ (x+n)^-p."""
    a = lam / (lam - 1.0)
    b = 1.0 / (lam - 1.0)
    v = x + n
    return ((v - 1.0) / v) * ((v - a) / (v + b))


def build_afs_staircase(x0: Mat2, params: AfsParams, N: int) -> StaircaseTruncation:
    """Full truncation from X0 in U: optional equalizing prefix plus N stages.

    The prefix split is folded into stage 1 (its omega_1 then has three
    construction steps, all with parents in U), so the result is a plain
    staircase truncation whose stage trees drive the field realizer.
    """
    params.validate()
    if not in_U(x0, params):
        raise NotInU("X0 must lie in U")
    if N < 0:
        raise ParamViolation("depth must be nonnegative")

    sigma1, msigma2 = x0.a12, x0.a21
    prefix = equalize_diagonal(x0, params)
    base = prefix.x_half if prefix is not None else x0
    xhat = base.a11

    if N == 0:
        return assemble([x0], [], [], N=0, trees=())

    soar = [x0]
    mus = []
    gammas = []
    trees = []
    for n in range(1, N + 1):
        stage = staircase_stage(xhat, sigma1, -msigma2, n, params)
        parent = soar[-1]
        steps = []
        atoms = []
        if n == 1 and prefix is not None:
            steps.append(SplitStep(parent=x0, left=prefix.g, right=prefix.x_half,
                                   lambda_prime=prefix.weight))
            carry = 1.0 - prefix.weight
            atoms.append(WeightedAtom(prefix.weight, prefix.g))
            stage_parent = prefix.x_half
        else:
            carry = 1.0
            stage_parent = parent
        steps.append(SplitStep(parent=stage_parent, left=stage.g1, right=stage.mid,
                               lambda_prime=stage.lam1))
        steps.append(SplitStep(parent=stage.mid, left=stage.g2, right=stage.xn,
                               lambda_prime=stage.lam_mid))
        atoms.append(WeightedAtom(carry * stage.lam1, stage.g1))
        atoms.append(WeightedAtom(carry * stage.lam2, stage.g2))
        gamma_n = carry * stage.gamma_n
        omega = DiscreteMeasure.from_atoms(
            atoms + [WeightedAtom(gamma_n, stage.xn)])
        trees.append(SplitTree(root=parent, steps=tuple(steps), leaves=omega))
        mus.append(DiscreteMeasure.from_atoms(
            [WeightedAtom(a.weight / (1.0 - gamma_n), a.matrix) for a in atoms]))
        gammas.append(gamma_n)
        soar.append(stage.xn)

    return assemble(soar, mus, gammas, N=N, trees=trees)

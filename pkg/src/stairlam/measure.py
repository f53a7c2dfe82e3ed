"""Finitely-supported probability measures on 2x2 matrices.

A measure is a canonical (lexicographically ordered, merged) list of
weighted atoms. Elementary splittings replace one atom by a rank-one
connected pair preserving the barycenter; the splitting history is kept
in a SplitTree because "construction steps in U" is a property of the
history, not of the final measure.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import AtomMismatch, InvalidTree, LambdaOutOfRange, NotRankOne
from .mat2 import Mat2, frobenius_norm, is_rank_one

__all__ = [
    "WeightedAtom",
    "DiscreteMeasure",
    "SplitStep",
    "SplitTree",
    "elementary_split",
    "barycenter",
    "tail_mass",
    "validate_construction_steps",
    "ConstructionReport",
]

MERGE_TOL = 1e-10
MASS_TOL = 1e-12


@dataclass(frozen=True)
class WeightedAtom:
    weight: float
    matrix: Mat2


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability measure with canonically ordered, merged atoms."""

    atoms: tuple

    @staticmethod
    def from_atoms(atoms, merge_tol: float = MERGE_TOL,
                   check_mass: bool = True) -> "DiscreteMeasure":
        """Merge near-duplicate matrices (summing weights) and sort atoms.

        Matrices closer than merge_tol in Frobenius distance count as the
        same atom, keeping supports simple after float drift.
        """
        items = sorted(((a.matrix.key(), a) for a in atoms), key=lambda kv: kv[0])
        merged: list[list] = []
        for _, a in items:
            if a.weight <= 0:
                raise ValueError("atom weights must be positive")
            if merged and merged[-1][1].dist(a.matrix) <= merge_tol:
                merged[-1][0] += a.weight
            else:
                merged.append([a.weight, a.matrix])
        total = sum(w for w, _ in merged)
        if check_mass and abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"weights sum to {total!r}, not 1")
        return DiscreteMeasure(tuple(WeightedAtom(w, m) for w, m in merged))

    @staticmethod
    def dirac(matrix: Mat2) -> "DiscreteMeasure":
        return DiscreteMeasure((WeightedAtom(1.0, matrix),))

    def total_mass(self) -> float:
        return sum(a.weight for a in self.atoms)

    def scaled(self, s: float) -> tuple:
        return tuple(WeightedAtom(a.weight * s, a.matrix) for a in self.atoms)

    def find(self, matrix: Mat2, tol: float = MERGE_TOL) -> int | None:
        for i, a in enumerate(self.atoms):
            if a.matrix.dist(matrix) <= tol:
                return i
        return None


@dataclass(frozen=True)
class SplitStep:
    """One elementary splitting X = lambda' B + (1 - lambda') B'."""

    parent: Mat2
    left: Mat2
    right: Mat2
    lambda_prime: float

    def validate(self, tol: float = 1e-10):
        if not 0.0 < self.lambda_prime < 1.0:
            raise LambdaOutOfRange(f"lambda'={self.lambda_prime} not in (0,1)")
        diff = self.left - self.right
        if not is_rank_one(diff, 1e-9):
            raise NotRankOne("left - right is not rank one")
        recon = self.lambda_prime * self.left + (1.0 - self.lambda_prime) * self.right
        scale = 1.0 + frobenius_norm(self.parent)
        if recon.dist(self.parent) > tol * scale:
            raise AtomMismatch(
                f"parent is not the convex combination: drift {recon.dist(self.parent):.3e}")


@dataclass(frozen=True)
class SplitTree:
    """Ordered splitting history from a Dirac mass to its leaf measure."""

    root: Mat2
    steps: tuple
    leaves: DiscreteMeasure

    def replay(self, atol: float = 1e-12) -> DiscreteMeasure:
        """Re-apply all steps from the root Dirac; raise InvalidTree on failure."""
        measure = DiscreteMeasure.dirac(self.root)
        for k, step in enumerate(self.steps):
            idx = measure.find(step.parent, tol=atol * (1.0 + frobenius_norm(step.parent)))
            if idx is None:
                raise InvalidTree(f"step {k}: parent is not a current leaf")
            measure = elementary_split(measure, idx, step)
        return measure

    def validate(self):
        got = self.replay()
        if len(got.atoms) != len(self.leaves.atoms):
            raise InvalidTree("replay leaf count differs from recorded leaves")
        for a, b in zip(got.atoms, self.leaves.atoms):
            if a.matrix.key() != b.matrix.key() or abs(a.weight - b.weight) > 1e-12:
                raise InvalidTree("replay does not reproduce recorded leaves")


def elementary_split(measure: DiscreteMeasure, atom_index: int,
                     step: SplitStep) -> DiscreteMeasure:
    """Replace atom `atom_index` by the pair (lambda' w, B), ((1-lambda') w, B')."""
    step.validate()
    if not 0 <= atom_index < len(measure.atoms):
        raise AtomMismatch(f"atom index {atom_index} out of range")
    target = measure.atoms[atom_index]
    if target.matrix.dist(step.parent) > MERGE_TOL * (1.0 + frobenius_norm(step.parent)):
        raise AtomMismatch("addressed atom does not equal the step parent")
    w = target.weight
    new_atoms = list(measure.atoms[:atom_index]) + list(measure.atoms[atom_index + 1:])
    new_atoms.append(WeightedAtom(step.lambda_prime * w, step.left))
    new_atoms.append(WeightedAtom((1.0 - step.lambda_prime) * w, step.right))
    return DiscreteMeasure.from_atoms(new_atoms, check_mass=False)


def barycenter(measure: DiscreteMeasure) -> Mat2:
    a11 = a12 = a21 = a22 = 0.0
    for a in measure.atoms:
        m, w = a.matrix, a.weight
        a11 += w * m.a11
        a12 += w * m.a12
        a21 += w * m.a21
        a22 += w * m.a22
    return Mat2(a11, a12, a21, a22)


def tail_mass(measure: DiscreteMeasure, t: float) -> float:
    """Mass of atoms with Frobenius norm strictly above t."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return sum(a.weight for a in measure.atoms if frobenius_norm(a.matrix) > t)


@dataclass(frozen=True)
class ConstructionReport:
    """Outcome of checking that every split originates from U."""

    violations: tuple  # (step_index, parent Mat2) pairs

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_construction_steps(tree: SplitTree, u_predicate) -> ConstructionReport:
    """List every split whose parent fails u_predicate; empty means
    'laminate of finite order with construction steps in U'."""
    tree.validate()
    bad = tuple((k, s.parent) for k, s in enumerate(tree.steps) if not u_predicate(s.parent))
    return ConstructionReport(violations=bad)

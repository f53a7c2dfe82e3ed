"""Canonical JSON/CSV/SVG serialization.

All writers emit byte-deterministic output for identical inputs: dict
key order is fixed by construction, floats use Python's shortest
round-trip repr, and rows follow the canonical atom/cell ordering.
"""

from __future__ import annotations

import json
import math

from .afs import AfsParams
from .geometry import ConvexPolygon, area
from .mat2 import Mat2, frobenius_norm
from .measure import (DiscreteMeasure, SplitStep, SplitTree, WeightedAtom)
from .realize import Cell, ERROR_TAGS, PiecewiseAffineField, TAGS
from .staircase import StaircaseTruncation, assemble

__all__ = [
    "mat_to_json", "mat_from_json",
    "measure_to_json", "measure_from_json",
    "tree_to_json", "tree_from_json",
    "save_staircase", "load_staircase",
    "save_field", "load_field",
    "write_csv", "field_svg",
    "dumps",
]


def dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def mat_to_json(m: Mat2):
    return [[m.a11, m.a12], [m.a21, m.a22]]


def mat_from_json(rows) -> Mat2:
    return Mat2.from_rows(rows)


def measure_to_json(measure: DiscreteMeasure):
    return {"atoms": [{"w": a.weight, "m": mat_to_json(a.matrix)}
                      for a in measure.atoms]}


def measure_from_json(obj, check_mass: bool = False) -> DiscreteMeasure:
    atoms = [WeightedAtom(float(a["w"]), mat_from_json(a["m"]))
             for a in obj["atoms"]]
    return DiscreteMeasure.from_atoms(atoms, check_mass=check_mass)


def tree_to_json(tree: SplitTree):
    return {
        "root": mat_to_json(tree.root),
        "steps": [{"parent": mat_to_json(s.parent),
                   "left": mat_to_json(s.left),
                   "right": mat_to_json(s.right),
                   "lambda": s.lambda_prime} for s in tree.steps],
    }


def tree_from_json(obj) -> SplitTree:
    steps = tuple(SplitStep(parent=mat_from_json(s["parent"]),
                            left=mat_from_json(s["left"]),
                            right=mat_from_json(s["right"]),
                            lambda_prime=float(s["lambda"]))
                  for s in obj["steps"])
    root = mat_from_json(obj["root"])
    leaves = DiscreteMeasure.dirac(root)
    tree = SplitTree(root=root, steps=steps, leaves=leaves)
    return SplitTree(root=root, steps=steps, leaves=tree.replay())


def params_to_json(params: AfsParams):
    return {"lambda": params.lam, "a_bar": params.a_bar, "delta": params.delta,
            "gamma_cap": params.gamma, "Gamma": params.ratio_cap, "p": params.p}


def params_from_json(obj) -> AfsParams:
    return AfsParams(lam=float(obj["lambda"]), a_bar=float(obj["a_bar"]),
                     delta=float(obj["delta"]), gamma=float(obj["gamma_cap"]),
                     ratio_cap=float(obj["Gamma"]), p=float(obj["p"]))


def _combined_tree(trunc: StaircaseTruncation) -> SplitTree | None:
    if not trunc.trees:
        return None
    steps = tuple(s for t in trunc.trees for s in t.steps)
    root = trunc.X[0]
    probe = SplitTree(root=root, steps=steps, leaves=DiscreteMeasure.dirac(root))
    return SplitTree(root=root, steps=steps, leaves=probe.replay())


def save_staircase(path, trunc: StaircaseTruncation, params: AfsParams | None):
    """staircase.json: measure.json plus soar/gamma/beta, the per-stage
    splitting histories, and the parameter block."""
    obj = measure_to_json(trunc.nuN)
    combined = _combined_tree(trunc)
    if combined is not None:
        obj["tree"] = tree_to_json(combined)
    obj["soar"] = [mat_to_json(x) for x in trunc.X]
    obj["gamma"] = list(trunc.gamma)
    obj["beta"] = list(trunc.beta)
    obj["stages"] = [tree_to_json(t) for t in trunc.trees]
    if params is not None:
        obj["params"] = params_to_json(params)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))
        fh.write("\n")


def load_staircase(path) -> tuple[StaircaseTruncation, AfsParams | None]:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    soar = [mat_from_json(m) for m in obj["soar"]]
    gamma = [float(g) for g in obj["gamma"]]
    stages = [tree_from_json(t) for t in obj.get("stages", [])]
    mus = []
    for n, tree in enumerate(stages, start=1):
        atoms = []
        for a in tree.leaves.atoms:
            if a.matrix.dist(soar[n]) <= 1e-10 * (1.0 + frobenius_norm(soar[n])):
                continue
            atoms.append(WeightedAtom(a.weight / (1.0 - gamma[n - 1]), a.matrix))
        mus.append(DiscreteMeasure.from_atoms(atoms))
    trunc = assemble(soar, mus, gamma, trees=stages)
    recorded = measure_from_json(obj, check_mass=False)
    drift = max((ra.matrix.dist(a.matrix) + abs(ra.weight - a.weight)
                 for ra, a in zip(recorded.atoms, trunc.nuN.atoms)), default=0.0)
    if len(recorded.atoms) != len(trunc.nuN.atoms) or drift > 1e-9:
        raise ValueError("recorded atoms disagree with the stage data")
    params = params_from_json(obj["params"]) if "params" in obj else None
    return trunc, params


def save_field(path, field: PiecewiseAffineField, meta: dict | None = None):
    obj = {
        "domain": [[x, y] for x, y in field.domain.pts],
        "boundary": {"X": mat_to_json(field.boundary_X),
                     "b": list(field.boundary_b)},
        "cells": [{"poly": [[x, y] for x, y in c.poly.pts],
                   "X": mat_to_json(c.X),
                   "b": list(c.b),
                   "tag": c.tag} for c in field.cells],
    }
    if meta is not None:
        obj["meta"] = meta
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))
        fh.write("\n")


def load_field(path) -> tuple[PiecewiseAffineField, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    domain = ConvexPolygon(tuple((float(x), float(y)) for x, y in obj["domain"]))
    cells = []
    for c in obj["cells"]:
        tag = c["tag"]
        if tag not in TAGS:
            raise ValueError(f"unknown cell tag {tag!r}")
        cells.append(Cell(
            poly=ConvexPolygon(tuple((float(x), float(y)) for x, y in c["poly"])),
            X=mat_from_json(c["X"]), b=tuple(float(v) for v in c["b"]), tag=tag))
    field = PiecewiseAffineField(
        cells=tuple(cells), domain=domain,
        boundary_X=mat_from_json(obj["boundary"]["X"]),
        boundary_b=tuple(float(v) for v in obj["boundary"]["b"]))
    return field, obj.get("meta", {})


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


_PALETTE = ("#30123b", "#4458cb", "#3e9bfe", "#18d5cc",
            "#46f884", "#a2fc3c", "#e1dd37", "#fa1e02")


def field_svg(path, field: PiecewiseAffineField, size: int = 900):
    """Cells colored by log10 |grad w| on a fixed 8-stop palette;
    dust/residual cells are hatched."""
    x0, y0, x1, y1 = field.domain.bbox()
    span = max(x1 - x0, y1 - y0)
    s = size / span
    norms = [frobenius_norm(c.X) for c in field.cells]
    lo = math.log10(min(n for n in norms if n > 0) + 1e-300)
    hi = math.log10(max(norms) + 1e-300)
    rng = max(hi - lo, 1e-9)

    def color(n):
        v = (math.log10(n + 1e-300) - lo) / rng
        return _PALETTE[min(7, max(0, int(v * 8)))]

    def pt(p):
        return f"{(p[0] - x0) * s:.3f},{(y1 - p[1]) * s:.3f}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
             f'height="{size}" viewBox="0 0 {size} {size}">',
             '<defs><pattern id="hatch" width="6" height="6" '
             'patternUnits="userSpaceOnUse" patternTransform="rotate(45)">'
             '<line x1="0" y1="0" x2="0" y2="6" stroke="#000" '
             'stroke-width="1.2" opacity="0.55"/></pattern></defs>']
    ordered = sorted(range(len(field.cells)),
                     key=lambda i: area(field.cells[i].poly), reverse=True)
    for i in ordered:
        c = field.cells[i]
        pts = " ".join(pt(p) for p in c.poly.pts)
        parts.append(f'<polygon points="{pts}" fill="{color(norms[i])}" '
                     'stroke="none"/>')
        if c.tag in ERROR_TAGS:
            parts.append(f'<polygon points="{pts}" fill="url(#hatch)" '
                         'stroke="none"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts))
        fh.write("\n")

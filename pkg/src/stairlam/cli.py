"""Command-line front end.

    stairlam laminate build  --lambda 2 --depth 2000 --out staircase.json
    stairlam laminate verify staircase.json [--csv tails.csv]
    stairlam field realize   --lambda 2 --depth 1 --rounds 0 --out field.json
    stairlam field verify    field.json [--report report.json]

Exit codes: 0 pass, 1 verification/construction failure, 2 usage/parse
failure. Identical configuration (including seed) produces byte-identical
JSON outputs.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import io as sio
from .afs import (AfsParams, build_afs_staircase, default_params, in_K_Lambda_Gamma,
                  in_U)
from .errors import StairlamError
from .geometry import rectangle
from .mat2 import Mat2, frobenius_norm
from .measure import validate_construction_steps
from .realize import RealizeConfig, error_integral, realize_staircase, restart_iteration
from .staircase import check_lower_tail, check_upper_tail, fit_tail_exponent
from .verify import (area_defect, boundary_defect, compare_distribution,
                     continuity_defect, field_tail, gradient_distribution,
                     membership_defects, sup_distance, weak_residual)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _read_config(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _parse_x0(text: str) -> Mat2:
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 4:
        raise ValueError("x0 needs 4 comma-separated reals, row major")
    return Mat2(*vals)


def _params_from_args(args) -> AfsParams:
    params = default_params(args.lam)
    overrides = {}
    if args.a_bar is not None:
        overrides["a_bar"] = args.a_bar
    if args.delta is not None:
        overrides["delta"] = args.delta
    if args.gamma_cap is not None:
        overrides["gamma"] = args.gamma_cap
    if args.big_gamma is not None:
        overrides["ratio_cap"] = args.big_gamma
    if overrides:
        params = AfsParams(lam=params.lam,
                           a_bar=overrides.get("a_bar", params.a_bar),
                           delta=overrides.get("delta", params.delta),
                           gamma=overrides.get("gamma", params.gamma),
                           ratio_cap=overrides.get("ratio_cap", params.ratio_cap),
                           p=params.p)
        params.validate()
    return params


def _default_x0(params: AfsParams) -> Mat2:
    x = params.a_bar + 1.0
    return Mat2(x, 1.0, -1.0, x)


def _apply_config_defaults(args, cfg: dict):
    mapping = {"lambda": ("lam", float), "a_bar": ("a_bar", float),
               "delta": ("delta", float), "gamma_cap": ("gamma_cap", float),
               "Gamma": ("big_gamma", float), "depth": ("depth", int),
               "rounds": ("rounds", int), "eps": ("eps", float),
               "eta": ("eta", float), "q": ("q", float),
               "alpha": ("alpha", float), "closeness_delta": ("closeness", float),
               "fill": ("fill", float), "seed": ("seed", int),
               "x0": ("x0", str)}
    for key, (attr, conv) in mapping.items():
        if key in cfg and getattr(args, attr, None) is None:
            setattr(args, attr, conv(cfg[key]))


def cmd_laminate_build(args) -> int:
    params = _params_from_args(args)
    x0 = _parse_x0(args.x0) if args.x0 else _default_x0(params)
    trunc = build_afs_staircase(x0, params, args.depth)
    sio.save_staircase(args.out, trunc, params)
    from .measure import barycenter
    drift = barycenter(trunc.nuN).dist(x0)
    print(f"staircase written to {args.out}: {len(trunc.nuN.atoms)} atoms, "
          f"beta_N={trunc.beta[-1]!r}, barycenter drift={drift:.3e}")
    return EXIT_OK


def cmd_laminate_verify(args) -> int:
    try:
        trunc, params = sio.load_staircase(args.path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"parse failure: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if params is None:
        print("file carries no parameter block", file=sys.stderr)
        return EXIT_USAGE

    failures = []
    n = trunc.depth
    mass = trunc.nuN.total_mass()
    if abs(mass - 1.0) > 1e-12:
        failures.append(f"mass {mass!r} != 1")
    from .measure import barycenter
    drift = barycenter(trunc.nuN).dist(trunc.X[0])
    if drift > max(1, n) * 1e-10:
        failures.append(f"barycenter drift {drift:.3e}")
    for mu in trunc.mu:
        for a in mu.atoms:
            if not in_K_Lambda_Gamma(a.matrix, params.lam, params.ratio_cap, 1e-9):
                failures.append("stage atom escaped the elliptic set")
                break
    for tree in trunc.trees:
        report = validate_construction_steps(tree, lambda m: in_U(m, params))
        if not report.ok:
            failures.append(f"{len(report.violations)} construction steps outside U")
            break

    ok_up, rep_up = check_upper_tail(trunc, params.p,
                                     rep_m(trunc, params) * (1 + 1e-9))
    ok_lo, rep_lo = check_lower_tail(trunc, params.p,
                                     max(rep_lo_fit(trunc, params) * (1 - 1e-9),
                                         1e-12))
    if not ok_up:
        failures.append(f"upper tail bound fails at t={rep_up.witness_t}")
    if not ok_lo:
        failures.append(f"lower tail bound fails at t={rep_lo.witness_t}")
    if rep_lo.m_fit <= 0:
        failures.append("fitted lower constant is not positive")

    csv_path = args.csv or (args.path + ".tails.csv")
    x0n = frobenius_norm(trunc.X[0])
    sio.write_csv(csv_path, ["t", "mass", "bound_upper", "bound_lower"],
                  rep_up.csv_rows(x0n))

    slope = fit_tail_exponent(trunc, 50.0, trunc.soar_norm() / 4.0) \
        if trunc.soar_norm() > 250 else rep_up.slope
    print(f"atoms={len(trunc.nuN.atoms)} p={params.p:.6g} slope={slope:.4f} "
          f"M_fit={rep_up.M_fit:.4f} m_fit={rep_lo.m_fit:.4f} drift={drift:.3e}")
    if failures:
        for f in failures:
            print(f"FAIL: {f}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def rep_m(trunc, params) -> float:
    _, rep = check_upper_tail(trunc, params.p, 1.0)
    return rep.M_fit


def rep_lo_fit(trunc, params) -> float:
    _, rep = check_lower_tail(trunc, params.p, 1e-12)
    return rep.m_fit


def _realize_cfg(args) -> RealizeConfig:
    cfg = RealizeConfig(eps=args.eps if args.eps is not None else 0.2,
                        eta=args.eta if args.eta is not None else 40.0,
                        q=args.q if args.q is not None else 2.0,
                        alpha=args.alpha if args.alpha is not None else 0.5,
                        closeness_delta=args.closeness if args.closeness is not None else 0.5,
                        fill=args.fill if args.fill is not None else 0.95,
                        depth=args.depth if args.depth is not None else 1,
                        rounds=args.rounds if args.rounds is not None else 0)
    cfg.validate()
    return cfg


def cmd_field_realize(args) -> int:
    params = _params_from_args(args)
    cfg = _realize_cfg(args)
    x0 = _parse_x0(args.x0) if args.x0 else _default_x0(params)
    domain = rectangle(0.0, 0.0, 1.0, 1.0)
    trunc = build_afs_staircase(x0, params, cfg.depth)
    history: list = []
    field = realize_staircase(trunc, cfg, (0.0, 0.0), domain, params,
                              max_cells=args.max_cells, history=history)
    if cfg.rounds > 0:
        field = restart_iteration(field, params, cfg, max_cells=args.max_cells,
                                  history=history)
    meta = {
        "lambda": params.lam, "depth": cfg.depth, "rounds": cfg.rounds,
        "eps": cfg.eps, "eta": cfg.eta, "q": cfg.q, "alpha": cfg.alpha,
        "closeness_delta": cfg.closeness_delta, "fill": cfg.fill,
        "seed": args.seed if args.seed is not None else 0,
        "x0": sio.mat_to_json(x0),
        "params": sio.params_to_json(params),
    }
    sio.save_field(args.out, field, meta)
    if args.svg:
        sio.field_svg(args.svg, field)
    print("stage  cells  error_integral")
    for row in history:
        label = f"stage {row['stage']}" if "stage" in row else f"round {row['round']}"
        print(f"{label:>8}  {row['cells']:>7d}  {row['error_integral']:.6e}")
    print(f"field written to {args.out}: {len(field.cells)} cells, "
          f"error integral (q={cfg.q:g}) = {error_integral(field, cfg.q):.6e}")
    return EXIT_OK


def cmd_field_verify(args) -> int:
    try:
        field, meta = sio.load_field(args.path)
        params = sio.params_from_json(meta["params"])
        x0 = sio.mat_from_json(meta["x0"])
        depth = int(meta["depth"])
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"parse failure: {exc}", file=sys.stderr)
        return EXIT_USAGE

    cfg = RealizeConfig(eps=meta.get("eps", 0.2), eta=meta.get("eta", 40.0),
                        q=meta.get("q", 2.0), alpha=meta.get("alpha", 0.5),
                        closeness_delta=meta.get("closeness_delta", 0.5),
                        fill=meta.get("fill", 0.95), depth=depth,
                        rounds=meta.get("rounds", 0))
    failures = []
    cont = continuity_defect(field, max_checks=args.max_checks)
    if cont > 1e-9:
        failures.append(f"continuity defect {cont:.3e}")
    bdry = boundary_defect(field)
    if bdry > 1e-9:
        failures.append(f"boundary defect {bdry:.3e}")
    adef = area_defect(field)
    if adef > 1e-8:
        failures.append(f"area defect {adef:.3e}")
    bad = membership_defects(field, params)
    if bad:
        failures.append(f"{len(bad)} cells violate tag membership")

    trunc = build_afs_staircase(x0, params, depth)
    emp = gradient_distribution(field, tags=("K", "active"))
    factor = cfg.c_n(depth) if depth > 0 else 1.0 + 1e-12
    try:
        ok_hist, rows = compare_distribution(emp, trunc.nuN, max(factor, 1.0 + 1e-9))
        if not ok_hist:
            failures.append("distribution sandwich fails")
    except StairlamError as exc:
        failures.append(f"distribution sandwich: {exc}")
        rows = []

    res = weak_residual(field, params, n_tests=args.n_tests,
                        seed=args.seed if args.seed is not None else 0)
    if res.max_abs_residual > res.bound:
        failures.append(f"residual {res.max_abs_residual:.3e} above bound")
    if res.max_perp_residual > 1e-8:
        failures.append(f"rotated-gradient residual {res.max_perp_residual:.3e}")

    norms = [frobenius_norm(c.X) for c in field.cells]
    hi = max(norms)
    grid = np.geomspace(1.05, max(hi * 0.9, 1.1), 48)
    tail = field_tail(field, grid, p_ref=params.p)
    if not (tail.c_lower > 0):
        failures.append("field tail lower constant vanishes")

    sup = sup_distance(field)
    if sup > cfg.closeness_delta:
        failures.append(f"sup distance {sup:.3e} above delta {cfg.closeness_delta}")

    report = {
        "continuity_defect": cont, "boundary_defect": bdry, "area_defect": adef,
        "membership_violations": len(bad),
        "histogram": [[sio.mat_to_json(m), ref, got, bool(ok)]
                      for m, ref, got, ok in rows],
        "residual": {"max": res.max_abs_residual, "bound": res.bound,
                     "perp": res.max_perp_residual, "tests": res.test_functions},
        "tail": {"slope": tail.fitted_slope, "c": tail.c_lower, "C": tail.C_upper},
        "sup_distance": sup,
        "failures": failures,
    }
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(sio.dumps(report))
            fh.write("\n")
    if args.tails:
        sio.write_csv(args.tails, ["t", "superlevel", "fit_slope"],
                      [(t, m, tail.fitted_slope) for t, m in tail.csv_rows()])
    if args.residuals:
        sio.write_csv(args.residuals, ["index", "residual", "perp_residual", "bound"],
                      res.rows)
    for f in failures:
        print(f"FAIL: {f}", file=sys.stderr)
    print(f"cells={len(field.cells)} continuity={cont:.2e} boundary={bdry:.2e} "
          f"residual={res.max_abs_residual:.2e} sup={sup:.3e} "
          f"slope={tail.fitted_slope:.3f}")
    return EXIT_FAIL if failures else EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stairlam", description=__doc__)
    sub = parser.add_subparsers(dest="group", required=True)

    def add_common(p):
        p.add_argument("--config", default=None)
        p.add_argument("--lambda", dest="lam", type=float, default=None)
        p.add_argument("--a-bar", dest="a_bar", type=float, default=None)
        p.add_argument("--delta", type=float, default=None)
        p.add_argument("--gamma-cap", dest="gamma_cap", type=float, default=None)
        p.add_argument("--Gamma", dest="big_gamma", type=float, default=None)
        p.add_argument("--x0", default=None,
                       help="4 comma-separated reals, row major")
        p.add_argument("--depth", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)

    lam = sub.add_parser("laminate").add_subparsers(dest="command", required=True)
    pb = lam.add_parser("build")
    add_common(pb)
    pb.add_argument("--out", default="staircase.json")
    pv = lam.add_parser("verify")
    pv.add_argument("path")
    pv.add_argument("--csv", default=None)

    fld = sub.add_parser("field").add_subparsers(dest="command", required=True)
    fr = fld.add_parser("realize")
    add_common(fr)
    fr.add_argument("--rounds", type=int, default=None)
    fr.add_argument("--eps", type=float, default=None)
    fr.add_argument("--eta", type=float, default=None)
    fr.add_argument("--q", type=float, default=None)
    fr.add_argument("--alpha", type=float, default=None)
    fr.add_argument("--closeness", type=float, default=None)
    fr.add_argument("--fill", type=float, default=None)
    fr.add_argument("--max-cells", type=int, default=2_000_000)
    fr.add_argument("--out", default="field.json")
    fr.add_argument("--svg", default=None)
    fv = fld.add_parser("verify")
    fv.add_argument("path")
    fv.add_argument("--n-tests", type=int, default=10)
    fv.add_argument("--seed", type=int, default=None)
    fv.add_argument("--max-checks", type=int, default=None)
    fv.add_argument("--report", default=None)
    fv.add_argument("--tails", default=None)
    fv.add_argument("--residuals", default=None)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    if getattr(args, "config", None):
        try:
            _apply_config_defaults(args, _read_config(args.config))
        except (OSError, ValueError) as exc:
            print(f"bad config: {exc}", file=sys.stderr)
            return EXIT_USAGE
    if getattr(args, "lam", None) is None and args.group != "laminate" or \
            (args.group == "laminate" and args.command == "build" and args.lam is None):
        if args.group == "field" and args.command == "verify":
            pass
        elif args.group == "field" and args.command == "realize" and args.lam is None:
            print("missing --lambda", file=sys.stderr)
            return EXIT_USAGE
        elif args.group == "laminate" and args.command == "build" and args.lam is None:
            print("missing --lambda", file=sys.stderr)
            return EXIT_USAGE

    try:
        if args.group == "laminate" and args.command == "build":
            if args.depth is None:
                args.depth = 2000
            if not args.lam or args.lam <= 1:
                print("Lambda must exceed 1", file=sys.stderr)
                return EXIT_USAGE
            if args.depth < 0:
                print("depth must be nonnegative", file=sys.stderr)
                return EXIT_USAGE
            return cmd_laminate_build(args)
        if args.group == "laminate" and args.command == "verify":
            return cmd_laminate_verify(args)
        if args.group == "field" and args.command == "realize":
            if not args.lam or args.lam <= 1:
                print("Lambda must exceed 1", file=sys.stderr)
                return EXIT_USAGE
            return cmd_field_realize(args)
        if args.group == "field" and args.command == "verify":
            return cmd_field_verify(args)
    except StairlamError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, OSError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

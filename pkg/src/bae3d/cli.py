"""Command-line interface.

    bae3d solve --geometry ellipsoid:a=1,b=0.8,c=0.4 --n 5 --sigma 0 \
        --exact quadratic --out results/
    bae3d study --geometry torus:R=0.6,r=0.3 --ell 0.1 --sigma 10 \
        --exact trig --n-list 5,6,7 --out study/

Exit codes: 0 converged, 1 configuration or geometry error, 2 GMRES did not
reach the tolerance.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .errors import ConfigError, GeometryError
from .pipeline import RunConfig, convergence_study, refinement_configs, solve
from . import reporting


def _parse_geometry(spec: str) -> tuple[str, dict]:
    kind, _, rest = spec.partition(":")
    params = {}
    if rest:
        for item in rest.split(","):
            key, _, val = item.partition("=")
            if not key or not val:
                raise ConfigError(f"bad geometry parameter {item!r} in {spec!r}")
            params[key.strip()] = float(val)
    return kind.strip(), params


def _parse_slice(spec: str) -> tuple[str, float]:
    axis, _, val = spec.partition("=")
    axis = axis.strip().lower()
    if axis not in ("x", "y", "z") or not val:
        raise ConfigError(f"slice spec must look like z=0.0; got {spec!r}")
    return axis, float(val)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--geometry", help="kind:key=val,... e.g. sphere:radius=0.5")
    p.add_argument("--sigma", type=float, help="reaction coefficient sigma >= 0")
    p.add_argument("--ell", type=float, help="auxiliary box margin")
    p.add_argument(
        "--formulation", choices=["double", "single", "direct"], help="boundary system"
    )
    p.add_argument("--tol", type=float, help="GMRES relative residual target")
    p.add_argument("--max-iter", type=int, help="GMRES iteration cap")
    p.add_argument("--exact", help="manufactured solution: quadratic | trig | zero")
    p.add_argument("--out", help="output directory")
    p.add_argument("--lgf-cache", help="directory for Green's-function tables")


def _config_from_args(args) -> RunConfig:
    cfg = (
        RunConfig.from_json(args.config)
        if args.config
        else RunConfig(exact="quadratic")
    )
    updates = {}
    if args.geometry:
        kind, params = _parse_geometry(args.geometry)
        updates["geometry"] = kind
        updates["geometry_params"] = params
    for flag, field_name in [
        ("sigma", "sigma"),
        ("ell", "ell"),
        ("formulation", "formulation"),
        ("tol", "tol"),
        ("max_iter", "max_iter"),
        ("exact", "exact"),
        ("out", "out_dir"),
        ("lgf_cache", "lgf_cache"),
    ]:
        val = getattr(args, flag, None)
        if val is not None:
            updates[field_name] = val
    if getattr(args, "n", None) is not None:
        updates["n"] = args.n
        updates["N"] = None
    return replace(cfg, **updates)


def _solve_outputs(result, out_dir: str, slice_specs) -> None:
    os.makedirs(out_dir, exist_ok=True)
    result.report.to_json(os.path.join(out_dir, "report.json"))
    reporting.write_residuals_csv(
        result.report.residual_history, os.path.join(out_dir, "residuals.csv")
    )
    reporting.plot_residuals(
        result.report.residual_history,
        os.path.join(out_dir, "residuals.png"),
        label=f"N={result.report.N}",
    )
    for spec in slice_specs or []:
        axis, value = _parse_slice(spec)
        reporting.export_slices(result, axis, value, out_dir)


def cmd_solve(args) -> int:
    cfg = _config_from_args(args)
    result = solve(cfg)
    out_dir = cfg.out_dir or "bae3d_out"
    _solve_outputs(result, out_dir, args.slice)
    if args.dump_classification:
        if result.report.N > 64:
            print("warning: classification dump skipped for N > 64", file=sys.stderr)
        else:
            with open(os.path.join(out_dir, "classification.txt"), "w") as fh:
                fh.write(result.cls.debug_dump() + "\n")
    rep = result.report
    err = "n/a" if rep.max_error is None else f"{rep.max_error:.4e}"
    print(
        f"N={rep.N} |gamma+|={rep.n_gamma_plus} |gamma-|={rep.n_gamma_minus} "
        f"iters={rep.gmres_iterations} resid={rep.gmres_final_residual:.2e} "
        f"max_error={err}"
    )
    print(f"artifacts in {out_dir}/")
    return 0 if rep.gmres_converged else 2


def cmd_study(args) -> int:
    cfg = _config_from_args(args)
    exponents = [int(v) for v in args.n_list.split(",")]
    study = convergence_study(refinement_configs(cfg, exponents))
    out_dir = cfg.out_dir or "bae3d_study"
    os.makedirs(out_dir, exist_ok=True)
    reporting.write_convergence_csv(study, os.path.join(out_dir, "convergence.csv"))
    reporting.plot_convergence(study, os.path.join(out_dir, "convergence.png"))
    histories = {}
    non_converged = False
    for res in study.results:
        rep = res.report
        run_dir = os.path.join(out_dir, f"N{rep.N}")
        _solve_outputs(res, run_dir, args.slice)
        histories[rep.N] = rep.residual_history
        non_converged |= not rep.gmres_converged
    reporting.plot_residual_family(
        histories, os.path.join(out_dir, "residuals.png")
    )
    print(f"{'N':>6} {'MaxError':>12} {'Rate':>6}")
    for row in study.rows:
        rate = "--" if row.rate is None else f"{row.rate:.2f}"
        print(f"{row.N:>6} {row.max_error:>12.4e} {rate:>6}")
    print(f"artifacts in {out_dir}/")
    return 2 if non_converged else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bae3d",
        description="Unfitted boundary algebraic equation solver "
        "(-lap u + sigma u = f on implicit geometries)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run one solve")
    _add_common_flags(p_solve)
    p_solve.add_argument("--n", type=int, help="grid exponent, N = 2^n - 1")
    p_solve.add_argument(
        "--slice",
        action="append",
        help="export a plane, e.g. z=0.0 (repeatable)",
    )
    p_solve.add_argument(
        "--dump-classification",
        action="store_true",
        help="write the per-node point-set tags (small grids only)",
    )
    p_solve.set_defaults(func=cmd_solve)

    p_study = sub.add_parser("study", help="refinement study over grid exponents")
    _add_common_flags(p_study)
    p_study.add_argument(
        "--n-list", required=True, help="comma-separated grid exponents, e.g. 5,6,7"
    )
    p_study.add_argument("--slice", action="append", help="export planes per run")
    p_study.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

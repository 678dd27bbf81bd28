"""Command-line interface: solve, certify, compare, table.

Exit codes: 0 success, 1 configuration error, 2 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import sys as _sys

import numpy as np

from . import oracle as _oracle
from . import certify as _certify
from .config import ConfigError, load_config
from .solver import (QuadratureError, build_table, solve_linear,
                     solve_semilinear)

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mufde",
        description="Neutral multi-delay fractional systems: solve, certify, compare")
    sub = ap.add_subparsers(dest="command", required=True)

    sol = sub.add_parser("solve", help="solve a problem file and write a CSV trajectory")
    sol.add_argument("config")
    sol.add_argument("--method", choices=["closed-form", "picard", "oracle"],
                     default="closed-form")
    sol.add_argument("--out", required=True, help="output CSV path")
    sol.add_argument("--grid-per-mu", type=float, default=None)
    sol.add_argument("--oracle-steps", type=int, default=None)
    sol.add_argument("--f1-variant", choices=["norm", "literal"], default=None)

    cer = sub.add_parser("certify", help="print the contraction/stability certificate")
    cer.add_argument("config")
    cer.add_argument("--convention", choices=["lumped", "per-delay"], default="lumped")
    cer.add_argument("--f1-variant", choices=["norm", "literal"], default=None)

    cmp_ = sub.add_parser("compare", help="closed-form vs reference solver error table")
    cmp_.add_argument("config")
    cmp_.add_argument("--resolutions", default="256,512,1024",
                      help="comma list of reference steps per clock unit")
    cmp_.add_argument("--target", choices=["oracle", "closed-form"], default="oracle")
    cmp_.add_argument("--out", default=None, help="CSV output path (default stdout)")
    cmp_.add_argument("--f1-variant", choices=["norm", "literal"], default=None)

    tab = sub.add_parser("table", help="dump the coefficient lattice to CSV")
    tab.add_argument("config")
    tab.add_argument("--levels", type=int, default=6)
    tab.add_argument("--out", required=True)
    return ap


def _load(args):
    return load_config(args.config, f_variant=getattr(args, "f1_variant", None))


def cmd_solve(args) -> int:
    cfg = _load(args)
    sys_, opts = cfg.system, cfg.options
    per_mu = args.grid_per_mu or opts.solver_grid_per_mu
    if args.method == "oracle":
        ocfg = opts.oracle_config(args.oracle_steps)
        traj = _oracle.solve_reference(sys_, ocfg)
    elif args.method == "picard":
        if sys_.forcing.mode != "semilinear":
            traj = solve_linear(sys_, per_mu=per_mu, nodes=opts.quad_nodes,
                                tol=opts.series_tol, level_cap=opts.level_cap)
        else:
            traj = solve_semilinear(sys_, per_mu=per_mu, nodes=opts.quad_nodes,
                                    tol=opts.picard_tol,
                                    max_iter=opts.picard_max_iter,
                                    series_tol=opts.series_tol,
                                    level_cap=opts.level_cap)
    else:
        if sys_.forcing.mode == "semilinear":
            print("closed-form method needs a linear forcing; use --method picard",
                  file=_sys.stderr)
            return EXIT_CONFIG
        traj = solve_linear(sys_, per_mu=per_mu, nodes=opts.quad_nodes,
                            tol=opts.series_tol, level_cap=opts.level_cap)

    traj.to_csv(args.out)
    traj.write_meta(args.out + ".meta")
    print(f"wrote {args.out} ({len(traj.grid)} points, method {traj.method})")
    if traj.metadata.get("rho_warning"):
        print("warning: contraction bound rho >= 1; Picard convergence not certified")
    if not traj.metadata.get("model_exact", True):
        print("note: nonlinear clock with delays; series solution is the mild form "
              "(cross-check with --method oracle)")
    bad = (traj.point_converged is not None and not bool(np.all(traj.point_converged)))
    if bad or traj.metadata.get("picard_converged") is False:
        print("non-converged diagnostics present", file=_sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_certify(args) -> int:
    cfg = _load(args)
    cert = _certify.contraction_certificate(cfg.system, convention=args.convention,
                                            level_cap=cfg.options.level_cap,
                                            norm_overrides=cfg.norm_overrides or None)
    print(cert.report())
    if not cert.unique:
        print("warning: rho >= 1, uniqueness not certified by the product bound")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load(args)
    sys_, opts = cfg.system, cfg.options
    try:
        resolutions = [int(v) for v in args.resolutions.split(",") if v.strip()]
    except ValueError:
        print("--resolutions must be a comma list of integers", file=_sys.stderr)
        return EXIT_CONFIG
    if sys_.forcing.mode == "semilinear":
        closed = solve_semilinear(sys_, per_mu=opts.solver_grid_per_mu,
                                  nodes=opts.quad_nodes, tol=opts.picard_tol,
                                  max_iter=opts.picard_max_iter)
    else:
        closed = solve_linear(sys_, per_mu=opts.solver_grid_per_mu,
                              nodes=opts.quad_nodes, tol=opts.series_tol)
    mask = closed.grid >= 0.0
    rows = []
    for N in resolutions:
        if args.target == "closed-form":
            err = 0.0
        else:
            ref = _oracle.solve_reference(sys_, opts.oracle_config(N))
            ref_vals = ref.at(closed.grid[mask])
            scale = 1.0 + float(np.max(np.abs(ref.values)))
            err = float(np.max(np.abs(closed.values[mask] - ref_vals))) / scale
        rows.append((N, err))
    lines = ["resolution,error"] + [f"{N},{err:.17g}" for N, err in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


def cmd_table(args) -> int:
    cfg = _load(args)
    table = build_table(cfg.system, level_max=max(1, args.levels))
    table.to_csv(args.out)
    print(f"wrote {args.out} ({len(table.indices)} lattice indices, "
          f"{args.levels + 1} levels)")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            return cmd_solve(args)
        if args.command == "certify":
            return cmd_certify(args)
        if args.command == "compare":
            return cmd_compare(args)
        if args.command == "table":
            return cmd_table(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except QuadratureError as exc:
        print(f"numerical error: {exc}", file=_sys.stderr)
        return EXIT_NUMERIC
    return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())

"""``singular-plap <experiment> [--config FILE] [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .experiments import EXPERIMENTS, ExperimentConfig, parse_key_values, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="singular-plap",
        description="Desk-scale experiments for u_t - Δ_p u = u^(-δ) + f(u).",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", help="flat key=value config file; flags override it")
        sp.add_argument("--p", type=float)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--grid", type=int, dest="n", metavar="N", help="nodes per axis")
        sp.add_argument("--dim", type=int, choices=(1, 2))
        sp.add_argument("--extent", help="box side(s), e.g. 1.0 or 1.0,2.0")
        sp.add_argument("--dt", type=float, help="time step; sets N = round(T/dt)")
        sp.add_argument("--T", type=float)
        sp.add_argument("--N", type=int)
        sp.add_argument("--eps0", type=float)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--reaction", dest="reaction_kind", help="none|constant|power|saturating|table")
        sp.add_argument("--reaction-params", dest="reaction_params", help="comma-separated parameters")
        sp.add_argument("--lam", type=float, help="resolvent parameter (sharpness)")
        sp.add_argument("--deltas", help="comma-separated delta list (sharpness)")
        sp.add_argument("--grids", help="comma-separated node counts (sharpness, convergence)")
        sp.add_argument("--steps", help="comma-separated step counts (convergence)")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    values = parse_key_values(Path(args.config).read_text()) if args.config else {}
    values["experiment"] = args.experiment
    skip = {"config", "experiment", "verbose", "dt"}
    for key, val in vars(args).items():
        if key not in skip and val is not None:
            values[key] = val
    cfg = ExperimentConfig().updated(values).with_defaults()
    if args.dt is not None:
        if not args.dt > 0:
            raise ValueError("--dt must be positive")
        cfg = cfg.updated({"N": max(1, round(cfg.T / args.dt))})
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        report = run(cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, ok in report.verdicts.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(json.dumps({"passed": report.passed, "wall_time": round(report.wall_time, 3), "out": cfg.out}))
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())

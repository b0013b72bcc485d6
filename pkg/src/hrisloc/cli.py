"""Command-line entry point: ``hrisloc simulate`` and ``hrisloc bounds-only``."""

from __future__ import annotations

import argparse
import sys

from .bench import ExperimentSpec, bounds_sweep, load_config, parse_values, run_sweep, with_overrides, write_results
from .errors import HrisLocError


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat YAML/JSON key-value file (reference defaults when omitted)")
    p.add_argument("--sweep", help="Pt_dBm, rho or num_scatterers")
    p.add_argument("--values", help="comma list or inclusive start:stop:step")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output CSV path (stdout when omitted)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hrisloc", description="HRIS/UE joint localization benchmark")
    sub = parser.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", help="Monte Carlo RMSE and CRB per sweep point")
    _add_common(sim)
    sim.add_argument("--noiseless", action="store_true", default=None, help="skip noise (debug)")
    sim.add_argument("--workers", type=int, help="worker processes")
    sim.add_argument("--no-crb", dest="with_crb", action="store_false", default=None)
    bnd = sub.add_parser("bounds-only", help="CRB tables without Monte Carlo")
    _add_common(bnd)
    return parser


def resolve_spec(args) -> ExperimentSpec:
    spec = load_config(args.config) if args.config else ExperimentSpec()
    changes = dict(
        sweep_var=args.sweep,
        trials=args.trials,
        seed=args.seed,
        out=args.out,
        noiseless=getattr(args, "noiseless", None),
        workers=getattr(args, "workers", None),
        with_crb=getattr(args, "with_crb", None),
    )
    if args.values is not None:
        changes["sweep_values"] = parse_values(args.values)
    elif args.sweep is not None and args.sweep != spec.sweep_var:
        raise HrisLocError("--values is required when --sweep changes the sweep variable")
    return with_overrides(spec, **changes)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = resolve_spec(args)
        table = run_sweep(spec) if args.command == "simulate" else bounds_sweep(spec)
        write_results(table, spec.out if spec.out else sys.stdout)
    except HrisLocError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

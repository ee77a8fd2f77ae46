"""CLI entry point for meshless_stokes."""

import argparse
import logging
import sys

from .config import SCENARIOS, apply_overrides, load_config
from .errors import ConfigError, GeometryError, MeshlessStokesError
from .report import load_stats, validate_stats
from .scenarios import run_scenario

EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _solve(args):
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, scenario=args.scenario, threads=args.threads, output_dir=args.out,
                              dump_debug=True if args.dump else None)
    except ConfigError as exc:
        print(f"ERROR: {exc}")
        return EXIT_CONFIG

    try:
        run_scenario(cfg, verbose=args.verbose)
    except (ConfigError, GeometryError) as exc:
        print(f"ERROR: invalid scenario setup: {exc}")
        return EXIT_CONFIG
    except MeshlessStokesError as exc:
        print(f"ERROR: solver failure: {exc}")
        return EXIT_SOLVER
    return 0


def _validate(args):
    try:
        stats = load_stats(args.path)
    except (OSError, ValueError) as exc:
        print(f"ERROR: could not read {args.path}: {exc}")
        return EXIT_CONFIG
    problems = validate_stats(stats)
    for problem in problems:
        print(f"  - {problem}")
    if problems:
        print(f"ERROR: {args.path} failed validation ({len(problems)} problem(s))")
        return EXIT_CONFIG
    print(f"{args.path}: OK ({len(stats['runs'])} run(s))")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="meshless-stokes",
        description="Adaptive meshless Stokes solver for fluid-solid interaction with a "
                    "monolithic multigrid-preconditioned GMRES.",
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    solve_parser = subparsers.add_parser("solve", help="Run one scenario")
    solve_parser.add_argument("--scenario", choices=SCENARIOS, default=None,
                              help="Scenario to run (default: scenario.name from the config)")
    solve_parser.add_argument("--config", default=None,
                              help="Path to config.toml (default: config.toml in project root)")
    solve_parser.add_argument("--threads", type=int, default=None,
                              help="Worker threads for stencils, assembly and smoothing")
    solve_parser.add_argument("--out", default=None, help="Output directory (default: scenario.output_dir)")
    solve_parser.add_argument("--dump", action="store_true",
                              help="Also write per-level stencil condition numbers and COO matrices")
    solve_parser.add_argument("--verbose", action="store_true",
                              help="Debug logging and residual histories in stats.json")

    validate_parser = subparsers.add_parser("validate", help="Check a stats.json against its schema")
    validate_parser.add_argument("path", help="Path to stats.json")

    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 1

    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.DEBUG, format="%(levelname)s %(name)s: %(message)s")
    else:
        logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "solve":
        return _solve(args)
    return _validate(args)


if __name__ == "__main__":
    sys.exit(main())

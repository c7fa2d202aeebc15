"""Command line entry point.

Exit codes: 0 success, 2 validation error, 3 solver failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import DRError, SolverError
from .experiments import RUNNERS, run_event
from .scenario import load_scenario, require

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, help="scenario INI file")
    common.add_argument("--seed", type=int, help="override the scenario seed (u64)")
    common.add_argument("--out", help="output directory (default: scenario output.dir)")
    common.add_argument("--samples", type=int, help="Monte Carlo sample count override")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="drbaseline", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("table2", parents=[common], help="baseline inflation across d")
    sub.add_parser("fig3", parents=[common], help="SO cost against calling probability")
    sub.add_parser("compare", parents=[common], help="self-report against the m/m baseline")
    ev = sub.add_parser("event", parents=[common], help="per-event settlement records")
    ev.add_argument("--events", type=int, help="number of events (default: sampling.events)")
    sub.add_parser("validate", parents=[common], help="load and check a scenario")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        sc = load_scenario(args.scenario).with_overrides(args.seed, args.samples, args.out)
        if args.command == "validate":
            for experiment in RUNNERS:
                try:
                    require(sc, experiment)
                    status = "ok"
                except DRError as exc:
                    status = f"unavailable ({exc})"
                print(f"{experiment}: {status}")
            print(f"effective p = {sc.p:.12g}; seed = {sc.seed}; hash = {sc.scenario_hash()}")
            return EXIT_OK
        if args.workers < 1:
            raise ValueError("--workers must be at least 1")
        if args.command == "event":
            out = run_event(sc, args.events, sc.output_dir, args.workers)
        else:
            out = RUNNERS[args.command](sc, sc.output_dir, args.workers)
        for path in out.files:
            print(path)
        return EXIT_OK
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DRError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

"""Command-line entry point: ``risvcom <experiment> [--config F] [--seeds N] [--out DIR] [--full-scale]``."""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .config import load_config
from .exceptions import ConfigError, InfeasibleAllocation, NoConvergence, NumericalFailure, QoSInfeasible
from .experiments import EXPERIMENTS, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("risvcom")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which is also our config-error code
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="risvcom", description="Run seeded RIS-aided vehicular MIMO experiments and write CSV results.")
    sub = p.add_subparsers(dest="experiment", required=True, parser_class=_Parser)
    for name, fn in EXPERIMENTS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or name).strip().splitlines()[0])
        sp.add_argument("--config", help="JSON config file (unknown keys are rejected)")
        sp.add_argument("--seeds", type=int, help="number of seeds (overrides the config)")
        sp.add_argument("--out", default="results", help="output directory (default: results)")
        sp.add_argument("--full-scale", action="store_true", help="start from the full-scale constants")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, full_scale=args.full_scale, seeds=args.seeds)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        table = run_experiment(args.experiment, cfg)
    except (QoSInfeasible, InfeasibleAllocation) as exc:
        print(f"infeasible scenario: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalFailure, NoConvergence, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    csv_path, man_path = table.write(args.out)
    log.info("wrote %s and %s", csv_path, man_path)
    print(csv_path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Verbs: split, featurize, fit, evaluate, run, report. Exit codes: 0 on
success, 2 for configuration problems, 3 for data/file problems, 4 for
numerical failures. ALIGNREC_WORKERS overrides the config worker count;
the --workers flag overrides both.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiment
from .errors import (
    CapacityError,
    ConfigError,
    EmptyDatasetError,
    FormatError,
    ParseError,
    SingularMatrixError,
    SolverError,
    StageError,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

_DATA_ERRORS = (ParseError, FormatError, EmptyDatasetError, FileNotFoundError, OSError, KeyError)
_NUMERICAL_ERRORS = (SolverError, SingularMatrixError, CapacityError, FloatingPointError)


def exit_code_for(exc):
    if isinstance(exc, StageError) and exc.__cause__ is not None:
        return exit_code_for(exc.__cause__)
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, _NUMERICAL_ERRORS):
        return EXIT_NUMERICAL
    if isinstance(exc, _DATA_ERRORS):
        return EXIT_DATA
    return EXIT_CONFIG if isinstance(exc, ValueError) else EXIT_DATA


def build_parser():
    parser = argparse.ArgumentParser(
        prog="alignrec",
        description="Closed-form item-item recommenders with metadata alignment",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, seed=True, workers=False):
        p.add_argument("--config", required=True, help="experiment config (YAML)")
        p.add_argument("--output", help="output directory (overrides config)")
        if seed:
            p.add_argument("--seed", type=int, help="seed override")
        if workers:
            p.add_argument("--workers", type=int, help="worker count override")

    common(sub.add_parser("split", help="build and persist the train/val/test split"))
    common(sub.add_parser("featurize", help="encode metadata attributes"), seed=False)
    common(sub.add_parser("fit", help="tune on validation and fit the final model"),
           workers=True)
    common(sub.add_parser("evaluate", help="evaluate a fitted model on the test split"),
           seed=False)
    common(sub.add_parser("run", help="end-to-end: split, featurize, fit, evaluate"),
           workers=True)

    rep = sub.add_parser("report", help="print a lift table across report files")
    rep.add_argument("reports", nargs="+", help="report JSON files (baseline first)")
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "split":
            out = experiment.run_split(args.config, seed=args.seed, output=args.output)
            print(out)
        elif args.verb == "featurize":
            out = experiment.run_featurize(args.config, output=args.output)
            print(out)
        elif args.verb == "fit":
            out = experiment.run_fit(args.config, seed=args.seed,
                                     workers=args.workers, output=args.output)
            print(out)
        elif args.verb == "evaluate":
            paths = experiment.run_evaluate(args.config, output=args.output)
            for p in paths.values():
                print(p)
        elif args.verb == "run":
            out = experiment.run_experiment(args.config, seed=args.seed,
                                            workers=args.workers, output=args.output)
            print(out)
        elif args.verb == "report":
            print(experiment.compare_reports(args.reports), end="")
    except Exception as e:
        code = exit_code_for(e)
        log.error("%s", e)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

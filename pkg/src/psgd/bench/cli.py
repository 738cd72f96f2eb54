"""``bench`` command line entry point.

Exit status: 0 on success, 1 on a configuration error, 2 when a run aborts
on a numerical failure (non-finite evaluation or a singular factorization).
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from ..errors import (
    InvalidDimensionError,
    InvalidParameterError,
    NonFiniteEvaluationError,
    OracleCapError,
    SingularityError,
)
from .experiments import EXPERIMENTS, SPECTRA, BenchSpec, run_experiment, write_result

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class _ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad arguments; that code is reserved here
    def error(self, message):
        raise _ConfigError(message)


def _seeds(text: str):
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bench", description="Run a PSGD desk-scale benchmark.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--dim", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--spectrum", choices=SPECTRA)
    p.add_argument("--noise-var", type=float, default=0.0)
    p.add_argument("--seeds", type=_seeds, default=(0,), help="comma-separated, e.g. 0,1,2")
    p.add_argument("--precision", choices=("full", "reduced"))
    p.add_argument("--steps", type=int)
    p.add_argument("--out", help="output directory (default bench_out/<experiment>)")
    p.add_argument("--baseline", choices=("sgd", "none"), default="sgd")
    p.add_argument("--cond", type=float, help="feature condition number (logreg)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _ConfigError as exc:
        print(f"bench: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = BenchSpec(args.experiment, dim=args.dim, rank=args.rank, spectrum=args.spectrum,
                         noise_var=args.noise_var, seeds=args.seeds, precision=args.precision,
                         steps=args.steps, out=args.out, baseline=args.baseline, cond=args.cond)
        result = run_experiment(spec)
    except (InvalidParameterError, InvalidDimensionError, OracleCapError) as exc:
        print(f"bench: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteEvaluationError, SingularityError) as exc:
        print(f"bench: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    path = write_result(result)
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

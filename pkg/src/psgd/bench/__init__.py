"""Benchmark problems, experiments and the ``bench`` CLI."""

from .experiments import (
    CSV_COLUMNS,
    CSV_SCHEMA,
    EXPERIMENTS,
    BenchSpec,
    ExperimentResult,
    bench_diag_compare,
    bench_fit_quadratic,
    bench_logreg,
    bench_rosenbrock,
    read_run_csv,
    run_experiment,
    sgd_run,
    tune_sgd,
    write_result,
    write_run_csv,
)

"""Desk-scale benchmark experiments and their CSV/JSON output.

Each ``bench_*`` function takes a ``BenchSpec`` and returns an
``ExperimentResult``: one ``RunRecord`` per (variant, seed) plus aggregate
statistics.  Everything is seeded, so a result replays exactly from the BenchSpec
echoed into its JSON summary.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from ..criterion import (
    FittingSample,
    closed_form_optimum,
    closed_form_sample_estimate,
    exact_fitting_loss,
)
from ..curvature import CurvaturePair, Objective
from ..errors import InvalidParameterError, RejectedUpdateError, SingularityError
from ..optimizer import PsgdConfig, RunRecord, run
from ..precond import ORACLE_CAP, DiagPreconditioner, densify, make_preconditioner
from .problems import (
    StochasticRosenbrock,
    logistic_regression,
    make_logreg_data,
    random_symmetric,
    rosenbrock,
    spectrum,
)

__all__ = [
    "EXPERIMENTS",
    "CSV_SCHEMA",
    "CSV_COLUMNS",
    "BenchSpec",
    "ExperimentResult",
    "bench_rosenbrock",
    "bench_fit_quadratic",
    "bench_diag_compare",
    "bench_logreg",
    "run_experiment",
    "sgd_run",
    "tune_sgd",
    "write_run_csv",
    "read_run_csv",
    "write_result",
]

EXPERIMENTS = ("rosenbrock", "fit-quadratic", "diag-compare", "closedform-compare", "logreg")
SPECTRA = ("uniform", "exponential", "lognormal")
CSV_SCHEMA = "psgd-bench-csv/1"
CSV_COLUMNS = ("iter", "loss", "grad_norm", "fit_loss", "refreshed")
JSON_SCHEMA = "psgd-bench-summary/1"

# Per-experiment defaults for the optional BenchSpec fields.
DEFAULTS = {
    "rosenbrock": dict(dim=2, rank=2, spectrum=None, precision="full", steps=2000),
    "fit-quadratic": dict(dim=32, rank=8, spectrum="uniform", precision="full", steps=10_000),
    "closedform-compare": dict(dim=32, rank=16, spectrum="lognormal", precision="reduced",
                               steps=10_000),
    "diag-compare": dict(dim=100, rank=0, spectrum="uniform", precision="full", steps=5000),
    "logreg": dict(dim=64, rank=10, spectrum=None, precision="full", steps=3000),
}

# Rosenbrock: Q starts at 3 I and the preconditioned gradient is clipped at 10;
# the rates stay at their defaults.
ROSEN_THETA0 = (-1.0, 1.0)
ROSEN_INIT_SCALE = 3.0
ROSEN_CLIP = 10.0
ROSEN_STOP_TOL = 1e-30
ROSEN_SGD_GRID = np.logspace(-5.0, -2.0, 10)
ROSEN_NOISE = (0.5, 1.5)

FIT_MU2 = 0.01
FIT_RECORD_POINTS = 200
DIAG_MU2 = 0.01

LOGREG_SAMPLES = 2048
LOGREG_LABEL_NOISE = 0.05
LOGREG_COND = 1e3
LOGREG_SGD_GRID = np.logspace(-1.0, 3.0, 10)
LOGREG_PSGD = dict(lr_params=1.0, lr_precond=0.1, update_prob=1.0)


@dataclass(frozen=True)
class BenchSpec:
    """What to run.  ``None`` fields take the experiment's default."""

    experiment: str
    dim: Optional[int] = None
    rank: Optional[int] = None
    spectrum: Optional[str] = None
    noise_var: float = 0.0
    seeds: Tuple[int, ...] = (0,)
    precision: Optional[str] = None
    steps: Optional[int] = None
    out: Optional[str] = None
    baseline: str = "sgd"
    cond: Optional[float] = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidParameterError(f"unknown experiment {self.experiment!r}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise InvalidParameterError("at least one seed is required")
        if self.dim is not None and self.dim < 1:
            raise InvalidParameterError(f"dimension must be >= 1, got {self.dim}")
        if self.rank is not None and self.rank < 0:
            raise InvalidParameterError(f"rank must be >= 0, got {self.rank}")
        if self.spectrum is not None and self.spectrum not in SPECTRA + ("ones",):
            raise InvalidParameterError(f"unknown spectrum {self.spectrum!r}")
        if not self.noise_var >= 0:
            raise InvalidParameterError(f"noise variance must be >= 0, got {self.noise_var}")
        if self.precision is not None and self.precision not in ("full", "reduced"):
            raise InvalidParameterError(f"unknown precision {self.precision!r}")
        if self.steps is not None and self.steps < 1:
            raise InvalidParameterError(f"steps must be >= 1, got {self.steps}")
        if self.baseline not in ("sgd", "none"):
            raise InvalidParameterError(f"unknown baseline {self.baseline!r}")
        if self.cond is not None and not self.cond >= 1:
            raise InvalidParameterError(f"condition number must be >= 1, got {self.cond}")
        if self.experiment == "rosenbrock" and self.dim not in (None, 2):
            raise InvalidParameterError("the Rosenbrock problem is two-dimensional")
        if self.experiment == "logreg" and self.dim is not None and self.dim > 512:
            raise InvalidParameterError("logreg is limited to 512 features")

    def resolved(self) -> "BenchSpec":
        fill = {k: v for k, v in DEFAULTS[self.experiment].items() if getattr(self, k) is None}
        if self.experiment == "logreg" and self.cond is None:
            fill["cond"] = LOGREG_COND
        return replace(self, **fill)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSpec":
        return cls(**dict(d, seeds=tuple(d.get("seeds", (0,)))))


@dataclass
class ExperimentResult:
    spec: BenchSpec
    runs: List[Tuple[str, RunRecord]] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)

    def records(self, name: str) -> List[RunRecord]:
        return [r for n, r in self.runs if n == name]

    def names(self) -> List[str]:
        return sorted({n for n, _ in self.runs})


def _median(xs) -> float:
    return float(np.median(np.asarray(xs, dtype=float)))


# ---------------------------------------------------------------------------
# plain gradient descent baseline


def sgd_run(obj: Objective, lr: float, theta0, n_steps: int, seed: int = 0,
            stop_tol: Optional[float] = None,
            eval_fn: Optional[Callable] = None) -> RunRecord:
    """Constant-step (stochastic) gradient descent recorded like a PSGD run.

    A non-finite loss or gradient ends the run and marks it diverged, with an
    infinite final loss; that is a data point for step tuning, not an error.
    """
    rng = np.random.default_rng(seed)
    rec = RunRecord(config={"optimizer": "sgd", "lr": float(lr)}, seed=seed)
    theta = np.array(theta0, dtype=float)
    eval_fn = eval_fn or obj.loss
    diverged = stopped = False
    t0 = time.perf_counter()
    for it in range(n_steps):
        if obj.resample is not None:
            obj.resample(rng)
        with np.errstate(all="ignore"):
            loss = float(obj.loss(theta))
            g = np.asarray(obj.gradient(theta), dtype=float)
        if not (math.isfinite(loss) and np.all(np.isfinite(g))):
            diverged = True
            break
        rec.append(loss, float(np.linalg.norm(g)), math.nan, False, it)
        if stop_tol is not None and loss < stop_tol:
            stopped = True
            break
        theta = theta - lr * g
    rec.wall_time = time.perf_counter() - t0
    with np.errstate(all="ignore"):
        final = math.inf if diverged else float(eval_fn(theta))
    if not math.isfinite(final):
        final, diverged = math.inf, True
    rec.final_theta = theta
    rec.summary = {
        "final_loss": final,
        "iterations": rec.iterations,
        "diverged": diverged,
        "stopped_early": stopped,
    }
    return rec


def tune_sgd(make_obj: Callable[[int], Objective], grid: Sequence[float], theta0, n_steps: int,
             seeds: Sequence[int], stop_tol=None, eval_fn=None):
    """Pick the grid step with the lowest median final loss over ``seeds``.

    Returns ``(best_lr, records_at_best_lr, table)`` where ``table`` maps each
    step to its median final loss.
    """
    table = {}
    best = None
    for lr in grid:
        recs = [sgd_run(make_obj(s), lr, theta0, n_steps, s, stop_tol, eval_fn) for s in seeds]
        med = _median([r.summary["final_loss"] for r in recs])
        table[repr(float(lr))] = med
        if best is None or med < best[1]:
            best = (float(lr), med, recs)
    return best[0], best[2], table


# ---------------------------------------------------------------------------
# Rosenbrock


def _rosen_objective(stochastic: bool) -> Objective:
    return StochasticRosenbrock(*ROSEN_NOISE) if stochastic else rosenbrock()


def bench_rosenbrock(spec: BenchSpec, theta0=ROSEN_THETA0,
                     variants: Sequence[str] = ("dense", "xmat", "lra")) -> ExperimentResult:
    """PSGD with several groups on deterministic and stochastic Rosenbrock.

    ``clean_final_loss`` in each summary is the noise-free loss at the final
    parameters, which is what the stochastic comparison uses.
    """
    spec = spec.resolved()
    res = ExperimentResult(spec)
    clean = StochasticRosenbrock.clean_loss
    for stochastic in (False, True):
        tag = "stochastic" if stochastic else "deterministic"
        for kind in variants:
            finals = []
            for seed in spec.seeds:
                cfg = PsgdConfig(clip=ROSEN_CLIP, seed=seed)
                pc = make_preconditioner(kind, 2, rank=spec.rank, precision=spec.precision,
                                         rng=np.random.default_rng([seed, 1]),
                                         scale=ROSEN_INIT_SCALE)
                rec = run(_rosen_objective(stochastic), cfg, theta0, spec.steps, pc,
                          stop_tol=None if stochastic else ROSEN_STOP_TOL)
                rec.config.update(problem=tag, init_scale=ROSEN_INIT_SCALE, rank=spec.rank)
                rec.summary["clean_final_loss"] = clean(rec.final_theta)
                rec.summary["distance_to_optimum"] = float(np.max(np.abs(rec.final_theta - 1.0)))
                finals.append(rec.summary["clean_final_loss"])
                res.runs.append((f"{tag}-{kind}", rec))
            res.aggregate[f"{tag}-{kind}-median_final_loss"] = _median(finals)
        if spec.baseline == "sgd":
            lr, recs, table = tune_sgd(lambda s: _rosen_objective(stochastic), ROSEN_SGD_GRID,
                                       theta0, spec.steps, spec.seeds,
                                       None if stochastic else ROSEN_STOP_TOL, clean)
            for rec in recs:
                rec.config.update(problem=tag)
                rec.summary["clean_final_loss"] = rec.summary["final_loss"]
                res.runs.append((f"{tag}-sgd", rec))
            res.aggregate[f"{tag}-sgd-best_lr"] = lr
            res.aggregate[f"{tag}-sgd-median_final_loss"] = _median(
                [r.summary["final_loss"] for r in recs])
            res.aggregate[f"{tag}-sgd-grid"] = table
    return res


# ---------------------------------------------------------------------------
# preconditioner fitting on quadratics


def _draw_hessian(spec: BenchSpec, rng: np.random.Generator, low: float) -> np.ndarray:
    if spec.dim == 1:
        return np.atleast_2d(spectrum(spec.spectrum, 1, rng, low=low))
    return random_symmetric(spectrum(spec.spectrum, spec.dim, rng, low=low), rng)


def _pair_stream(H: np.ndarray, n_pairs: int, noise_var: float, rng: np.random.Generator):
    V = rng.standard_normal((n_pairs, H.shape[0]))
    Hv = V @ H
    if noise_var > 0:
        Hv = Hv + math.sqrt(noise_var) * rng.standard_normal(Hv.shape)
    return V, Hv


def fit_stream(precond, H, V, Hv, mu2: float, rng, noise_var: float = 0.0,
               record_every: int = 1, config: Optional[dict] = None, seed: int = 0) -> RunRecord:
    """Feed the pairs ``(V[k], Hv[k])`` to ``precond`` one at a time.

    Every ``record_every`` pairs (and after the last) the record gets one row:
    ``loss`` is the population fitting loss of the densified P, ``fit_loss``
    the criterion on the pair just consumed, evaluated before the update.
    """
    rec = RunRecord(config=dict(config or {}, preconditioner=precond.kind, mu2=mu2), seed=seed)
    rejected = 0
    t0 = time.perf_counter()
    n_pairs = V.shape[0]
    for k in range(n_pairs):
        pair = CurvaturePair(V[k], Hv[k])
        a, b = precond.quad_forms(pair.v, pair.h)
        try:
            precond.update(pair, mu2, rng)
        except RejectedUpdateError:
            rejected += 1
        if (k + 1) % record_every == 0 or k + 1 == n_pairs:
            pop = exact_fitting_loss(densify(precond), H, noise_var)
            rec.append(pop, math.nan, a + b, True, k + 1)
    rec.wall_time = time.perf_counter() - t0
    rec.summary = {"final_loss": rec.loss[-1], "iterations": n_pairs, "rejected": rejected}
    return rec


def _fit_groups(spec: BenchSpec) -> List[str]:
    if spec.experiment == "closedform-compare":
        return ["lra"]
    groups = ["diag", "xmat", "lra"]
    if spec.dim <= ORACLE_CAP:
        groups.append("dense")
    return groups


def bench_fit_quadratic(spec: BenchSpec, mu2: float = FIT_MU2,
                        groups: Optional[Sequence[str]] = None) -> ExperimentResult:
    """Fit each group to a pair stream from a random H and compare against
    the closed-form estimate from the same pairs.

    ``closed_form_loss`` in the aggregate is NaN for a seed whose sample
    covariance was singular; that seed's error message is kept instead.
    """
    spec = spec.resolved()
    res = ExperimentResult(spec)
    groups = list(groups) if groups is not None else _fit_groups(spec)
    dtype = np.float32 if spec.precision == "reduced" else np.float64
    every = max(1, spec.steps // FIT_RECORD_POINTS)
    per_group: Dict[str, List[float]] = {g: [] for g in groups}
    closed, optimum = [], []
    for seed in spec.seeds:
        rng = np.random.default_rng(seed)
        H = _draw_hessian(spec, rng, low=0.1)
        V, Hv = _pair_stream(H, spec.steps, spec.noise_var, rng)
        opt_loss = exact_fitting_loss(closed_form_optimum(H, spec.noise_var), H, spec.noise_var)
        optimum.append(opt_loss)
        try:
            Pc = closed_form_sample_estimate(FittingSample.from_arrays(V, Hv), dtype=dtype)
            closed.append(exact_fitting_loss(Pc, H, spec.noise_var))
        except SingularityError as exc:
            closed.append(math.nan)
            res.aggregate.setdefault("closed_form_errors", {})[str(seed)] = str(exc)
        for g in groups:
            pc = make_preconditioner(g, spec.dim, rank=spec.rank, precision=spec.precision,
                                     rng=np.random.default_rng([seed, 1]))
            rec = fit_stream(pc, H, V, Hv, mu2, np.random.default_rng([seed, 2]),
                             spec.noise_var, every,
                             config={"spectrum": spec.spectrum, "dim": spec.dim,
                                     "rank": spec.rank, "precision": spec.precision,
                                     "noise_var": spec.noise_var},
                             seed=seed)
            rec.summary.update(optimum_loss=opt_loss, closed_form_loss=closed[-1],
                               ratio_to_optimum=rec.summary["final_loss"] / opt_loss)
            per_group[g].append(rec.summary["final_loss"])
            res.runs.append((g, rec))
    res.aggregate.update(
        optimum_loss=optimum,
        closed_form_loss=closed,
        **{f"{g}_final_loss": v for g, v in per_group.items()},
    )
    if "lra" in per_group:
        wins = [a <= b for a, b in zip(per_group["lra"], closed) if not math.isnan(b)]
        res.aggregate["lra_beats_closed_form"] = int(sum(wins))
    return res


# ---------------------------------------------------------------------------
# diagonal fitting variants


DIAG_METHODS = ("closed_form", "scalar", "elementwise")


def bench_diag_compare(spec: BenchSpec, mu2: float = DIAG_MU2,
                       record_every: Optional[int] = None) -> ExperimentResult:
    """Closed-form, scalar-step and element-wise diagonal fits on one pair
    stream per seed; H has standard-uniform eigenvalues."""
    spec = spec.resolved()
    res = ExperimentResult(spec)
    every = record_every or max(1, spec.steps // FIT_RECORD_POINTS)
    finals: Dict[str, List[float]] = {m: [] for m in DIAG_METHODS}
    for seed in spec.seeds:
        rng = np.random.default_rng(seed)
        H = _draw_hessian(spec, rng, low=0.0)
        V, Hv = _pair_stream(H, spec.steps, spec.noise_var, rng)
        for method in DIAG_METHODS:
            pc = DiagPreconditioner(spec.dim, method=method, precision=spec.precision)
            rec = fit_stream(pc, H, V, Hv, mu2, None, spec.noise_var, every,
                             config={"method": method, "dim": spec.dim,
                                     "spectrum": spec.spectrum, "noise_var": spec.noise_var},
                             seed=seed)
            rec.summary["final_p"] = [float(x) for x in pc.p]
            finals[method].append(rec.summary["final_loss"])
            res.runs.append((method, rec))
    for m, v in finals.items():
        res.aggregate[f"{m}_median_final_loss"] = _median(v)
    return res


# ---------------------------------------------------------------------------
# logistic regression


def reference_minimum(obj: Objective, w0) -> float:
    """Minimum of a smooth convex objective via Newton-CG with exact HVPs."""
    out = minimize(obj.loss, np.asarray(w0, dtype=float), jac=obj.gradient, hessp=obj.hvp,
                   method="trust-ncg", options={"gtol": 1e-10, "maxiter": 1000})
    return float(out.fun)


def bench_logreg(spec: BenchSpec) -> ExperimentResult:
    """PSGD-LRA against tuned full-batch gradient descent on synthetic data.

    Besides the raw training loss each run records ``excess_loss``, its gap
    to a Newton-CG reference minimum of the same data.
    """
    spec = spec.resolved()
    res = ExperimentResult(spec)
    n = spec.dim
    data = {}
    for seed in spec.seeds:
        X, y = make_logreg_data(n, LOGREG_SAMPLES, spec.cond, np.random.default_rng(seed),
                                label_noise=LOGREG_LABEL_NOISE)
        obj = logistic_regression(X, y)
        data[seed] = (obj, reference_minimum(obj, np.zeros(n)))
    psgd_final, psgd_excess = [], []
    for seed in spec.seeds:
        obj, ref = data[seed]
        cfg = PsgdConfig(seed=seed, **LOGREG_PSGD)
        pc = make_preconditioner("lra", n, rank=spec.rank, precision=spec.precision,
                                 rng=np.random.default_rng([seed, 1]), auto_scale=True)
        rec = run(obj, cfg, np.zeros(n), spec.steps, pc)
        rec.config.update(cond=spec.cond, samples=LOGREG_SAMPLES, rank=spec.rank)
        rec.summary.update(reference_loss=ref, excess_loss=rec.summary["final_loss"] - ref)
        psgd_final.append(rec.summary["final_loss"])
        psgd_excess.append(rec.summary["excess_loss"])
        res.runs.append(("psgd-lra", rec))
    res.aggregate.update(psgd_median_final_loss=_median(psgd_final),
                         psgd_median_excess_loss=_median(psgd_excess),
                         reference_loss=[data[s][1] for s in spec.seeds])
    if spec.baseline == "sgd":
        lr, recs, table = tune_sgd(lambda s: data[s][0], LOGREG_SGD_GRID, np.zeros(n),
                                   spec.steps, spec.seeds)
        excess = []
        for rec in recs:
            ref = data[rec.seed][1]
            rec.summary.update(reference_loss=ref, excess_loss=rec.summary["final_loss"] - ref)
            excess.append(rec.summary["excess_loss"])
            res.runs.append(("sgd", rec))
        res.aggregate.update(
            sgd_best_lr=lr,
            sgd_grid=table,
            sgd_median_final_loss=_median([r.summary["final_loss"] for r in recs]),
            sgd_median_excess_loss=_median(excess),
        )
    return res


# ---------------------------------------------------------------------------
# dispatch and output


def run_experiment(spec: BenchSpec) -> ExperimentResult:
    if spec.experiment == "rosenbrock":
        return bench_rosenbrock(spec)
    if spec.experiment in ("fit-quadratic", "closedform-compare"):
        return bench_fit_quadratic(spec)
    if spec.experiment == "diag-compare":
        return bench_diag_compare(spec)
    return bench_logreg(spec)


def _num(x) -> str:
    # repr round-trips every float exactly
    return repr(float(x))


def write_run_csv(rec: RunRecord, path: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={CSV_SCHEMA}\n")
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for i in range(rec.iterations):
            w.writerow([rec.iters[i], _num(rec.loss[i]), _num(rec.grad_norm[i]),
                        _num(rec.fit_loss[i]), rec.refreshed[i]])


def read_run_csv(path: str) -> Dict[str, list]:
    """Inverse of ``write_run_csv``; checks the schema line."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# schema={CSV_SCHEMA}":
            raise InvalidParameterError(f"{path}: unexpected schema line {first!r}")
        rows = list(csv.DictReader(fh))
    out = {c: [] for c in CSV_COLUMNS}
    for r in rows:
        out["iter"].append(int(r["iter"]))
        out["refreshed"].append(int(r["refreshed"]))
        for c in ("loss", "grad_norm", "fit_loss"):
            out[c].append(float(r[c]))
    return out


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def write_result(res: ExperimentResult, out_dir: Optional[str] = None) -> str:
    """Write one CSV per run and ``summary.json``; returns the JSON path.

    Non-finite numbers are written as the strings ``"nan"``/``"inf"``.
    """
    out_dir = out_dir or res.spec.out or os.path.join("bench_out", res.spec.experiment)
    os.makedirs(out_dir, exist_ok=True)
    runs = []
    counters: Dict[Tuple[str, int], int] = {}
    for name, rec in res.runs:
        key = (name, rec.seed)
        counters[key] = counters.get(key, 0) + 1
        suffix = "" if counters[key] == 1 else f"_{counters[key]}"
        fname = f"{name}_seed{rec.seed}{suffix}.csv"
        write_run_csv(rec, os.path.join(out_dir, fname))
        runs.append({"name": name, "seed": rec.seed, "csv": fname, "rows": rec.iterations,
                     "config": rec.config, "summary": rec.summary})
    doc = {"schema": JSON_SCHEMA, "spec": res.spec.to_dict(), "runs": runs,
           "aggregate": res.aggregate}
    path = os.path.join(out_dir, "summary.json")
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, indent=1, allow_nan=False)
    return path

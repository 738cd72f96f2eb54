"""The PSGD outer loop: curvature refresh, preconditioned step, momentum, clipping."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .curvature import Objective, exact_pair, fd_pair
from .errors import InvalidParameterError, NonFiniteEvaluationError, RejectedUpdateError
from .precond.base import Preconditioner

logger = logging.getLogger(__name__)

__all__ = ["PsgdConfig", "PsgdState", "StepReport", "RunRecord", "CLIP_PROFILES", "step", "run"]

# named clipping presets for the preconditioned gradient norm
CLIP_PROFILES = {"none": None, "mnist": 10.0, "xor": 1.0}


@dataclass(frozen=True)
class PsgdConfig:
    lr_params: float = 0.01
    lr_precond: float = 0.01
    update_prob: float = 0.1
    momentum: float = 0.9
    clip: Optional[float] = None
    hvp_mode: str = "exact"  # "exact" | "fd"
    fd_eps: Optional[float] = None
    seed: int = 0
    momentum_on: str = "preconditioned"  # or "raw"
    refresh: str = "bernoulli"  # or "stride"

    def __post_init__(self):
        if not 0.0 < self.lr_params <= 1.0:
            raise InvalidParameterError(f"lr_params must lie in (0, 1], got {self.lr_params}")
        if not 0.0 < self.lr_precond <= 1.0:
            raise InvalidParameterError(f"lr_precond must lie in (0, 1], got {self.lr_precond}")
        if not 0.0 < self.update_prob <= 1.0:
            raise InvalidParameterError(f"update_prob must lie in (0, 1], got {self.update_prob}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidParameterError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.clip is not None and not self.clip > 0:
            raise InvalidParameterError(f"clip threshold must be positive, got {self.clip}")
        if self.hvp_mode not in ("exact", "fd"):
            raise InvalidParameterError(f"unknown hvp_mode {self.hvp_mode!r}")
        if self.momentum_on not in ("preconditioned", "raw"):
            raise InvalidParameterError(f"unknown momentum_on {self.momentum_on!r}")
        if self.refresh not in ("bernoulli", "stride"):
            raise InvalidParameterError(f"unknown refresh mode {self.refresh!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PsgdState:
    theta: np.ndarray
    precond: Preconditioner
    m: np.ndarray = None
    iter: int = 0
    rng: np.random.Generator = None

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=float)
        if self.m is None:
            self.m = np.zeros_like(self.theta)
        if self.rng is None:
            self.rng = np.random.default_rng(0)
        if self.precond.n != self.theta.size:
            raise InvalidParameterError(
                f"preconditioner size {self.precond.n} != parameter size {self.theta.size}")

    @classmethod
    def create(cls, theta0, precond: Preconditioner, cfg: PsgdConfig) -> "PsgdState":
        return cls(theta0, precond, rng=np.random.default_rng(cfg.seed))


@dataclass
class StepReport:
    loss: float
    grad_norm: float
    refreshed: bool
    clipped: bool
    rejected: bool = False
    fit_loss: float = math.nan


def _refresh_due(state: PsgdState, cfg: PsgdConfig) -> bool:
    if cfg.refresh == "stride":
        stride = max(1, int(round(1.0 / cfg.update_prob)))
        return state.iter % stride == 0
    return state.rng.random() < cfg.update_prob


def step(state: PsgdState, obj: Objective, cfg: PsgdConfig) -> StepReport:
    """Advance ``state`` by one PSGD iteration, in place."""
    if obj.resample is not None:
        obj.resample(state.rng)
    theta = state.theta
    loss = float(obj.loss(theta))
    g = np.asarray(obj.gradient(theta), dtype=float)
    if not np.all(np.isfinite(g)) or not math.isfinite(loss):
        raise NonFiniteEvaluationError(
            f"non-finite loss/gradient at iteration {state.iter}", point=theta.copy())

    refreshed = _refresh_due(state, cfg)
    rejected = False
    fit = math.nan
    if refreshed:
        if cfg.hvp_mode == "exact":
            pair = exact_pair(obj, theta, state.rng)
        else:
            pair = fd_pair(obj, theta, cfg.fd_eps, state.rng, grad_at_theta=g)
        a, b = state.precond.quad_forms(pair.v, pair.h)
        fit = a + b
        try:
            state.precond.update(pair, cfg.lr_precond, state.rng)
        except RejectedUpdateError as exc:
            rejected = True
            logger.warning("iteration %d: preconditioner update rejected (%s)", state.iter, exc)

    beta = cfg.momentum
    if cfg.momentum_on == "preconditioned":
        direction = state.precond.precond_grad(g).astype(float)
        state.m = beta * state.m + (1.0 - beta) * direction
        m = state.m
    else:
        state.m = beta * state.m + (1.0 - beta) * g
        m = state.precond.precond_grad(state.m).astype(float)

    clipped = False
    if cfg.clip is not None:
        norm = float(np.linalg.norm(m))
        if norm > cfg.clip:
            m = m * (cfg.clip / norm)
            if cfg.momentum_on == "preconditioned":
                state.m = m
            clipped = True

    state.theta = theta - cfg.lr_params * m
    state.iter += 1
    return StepReport(loss, float(np.linalg.norm(g)), refreshed, clipped, rejected, fit)


@dataclass
class RunRecord:
    """Per-iteration trajectory of one run plus a config echo and summary."""

    config: dict
    seed: int
    iters: List[int] = field(default_factory=list)
    loss: List[float] = field(default_factory=list)
    grad_norm: List[float] = field(default_factory=list)
    fit_loss: List[float] = field(default_factory=list)
    refreshed: List[int] = field(default_factory=list)
    snapshots: Dict[int, np.ndarray] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    final_theta: Optional[np.ndarray] = None
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.loss)

    @property
    def refresh_count(self) -> int:
        return int(sum(self.refreshed))

    def append(self, loss, grad_norm, fit_loss, refreshed, it: Optional[int] = None):
        self.iters.append(len(self.iters) if it is None else int(it))
        self.loss.append(float(loss))
        self.grad_norm.append(float(grad_norm))
        self.fit_loss.append(float(fit_loss))
        self.refreshed.append(int(bool(refreshed)))


def run(obj: Objective, cfg: PsgdConfig, theta0, n_steps: int, precond: Preconditioner,
        stop_tol: Optional[float] = None, snapshot_every: Optional[int] = None,
        snapshot_fn=None) -> RunRecord:
    """Iterate ``step`` up to ``n_steps`` times, stopping once ``loss < stop_tol``.

    The loss checked against ``stop_tol`` is the one evaluated at the start of
    each step.  On an early stop the returned parameters are the ones at which
    the tolerance was met.  The loss at the final parameters goes into the
    summary only, so the series hold exactly one row per step taken.
    ``snapshot_fn(precond)`` (default: a copy) is stored every
    ``snapshot_every`` steps and after the last one.
    """
    if n_steps < 1:
        raise InvalidParameterError(f"n_steps must be >= 1, got {n_steps}")
    state = PsgdState.create(theta0, precond, cfg)
    rec = RunRecord(config=dict(cfg.to_dict(), preconditioner=precond.kind), seed=cfg.seed)
    snap = snapshot_fn or (lambda p: p.copy())
    t0 = time.perf_counter()
    stopped = False
    for _ in range(n_steps):
        theta_before = state.theta
        rep = step(state, obj, cfg)
        rec.append(rep.loss, rep.grad_norm, rep.fit_loss, rep.refreshed, state.iter - 1)
        if stop_tol is not None and rep.loss < stop_tol:
            # the tolerance was met at the point the loss was measured
            state.theta = theta_before
            stopped = True
            break
        if snapshot_every and state.iter % snapshot_every == 0:
            rec.snapshots[state.iter] = snap(state.precond)
    rec.wall_time = time.perf_counter() - t0
    rec.snapshots[state.iter] = snap(state.precond)
    final_loss = float(obj.loss(state.theta))
    rec.final_theta = state.theta.copy()
    rec.summary = {
        "final_loss": final_loss,
        "best_loss": min(min(rec.loss), final_loss),
        "iterations": rec.iterations,
        "refresh_count": rec.refresh_count,
        "stopped_early": stopped,
        "momentum_on": cfg.momentum_on,
    }
    return rec

"""Diagonal (Jacobi) preconditioner: closed-form fit and two iterative variants.

For the diagonal group the square root Q = diag(sqrt(p)) is unambiguous, so
the state keeps p, the diagonal of P, directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..curvature import CurvaturePair
from ..errors import (
    DivisionHazardError,
    InvalidDimensionError,
    InvalidParameterError,
    RejectedUpdateError,
)
from .base import Preconditioner, canonical_pair, check_step, resolve_dtype

__all__ = [
    "DiagState",
    "DiagPreconditioner",
    "diag_closed_form",
    "diag_accumulate",
    "diag_update_scalar_step",
    "diag_update_elementwise",
]

METHODS = ("closed_form", "scalar", "elementwise")


@dataclass
class DiagState:
    p: np.ndarray
    running_v2: np.ndarray = None
    running_h2: np.ndarray = None
    count: int = 0
    decay: Optional[float] = None  # None: plain running mean; else EMA factor

    def __post_init__(self):
        self.p = np.asarray(self.p)
        if self.p.ndim != 1 or self.p.size == 0:
            raise InvalidDimensionError(f"p must be a nonempty vector, got shape {self.p.shape}")
        if np.any(self.p <= 0):
            raise InvalidParameterError("diagonal preconditioner must be strictly positive")
        if self.running_v2 is None:
            self.running_v2 = np.zeros_like(self.p)
        if self.running_h2 is None:
            self.running_h2 = np.zeros_like(self.p)
        if self.decay is not None and not 0.0 < self.decay < 1.0:
            raise InvalidParameterError(f"EMA decay must lie in (0, 1), got {self.decay}")

    @classmethod
    def identity(cls, n: int, scale: float = 1.0, dtype=np.float64, decay=None) -> "DiagState":
        return cls(np.full(n, scale, dtype=dtype), decay=decay)


def diag_accumulate(state: DiagState, pair: CurvaturePair) -> None:
    """Fold ``v*v`` and ``h*h`` into the running second moments."""
    if pair.n != state.p.size:
        raise InvalidDimensionError(f"pair has length {pair.n}, state has {state.p.size}")
    dt = state.p.dtype
    v2 = (pair.v * pair.v).astype(dt)
    h2 = (pair.h * pair.h).astype(dt)
    state.count += 1
    if state.decay is None:
        w = dt.type(1.0 / state.count)
    else:
        # bias-corrected EMA so the first pair is not shrunk toward zero
        w = dt.type(max(1.0 - state.decay, 1.0 / state.count))
    state.running_v2 = state.running_v2 + w * (v2 - state.running_v2)
    state.running_h2 = state.running_h2 + w * (h2 - state.running_h2)


def diag_closed_form(state: DiagState) -> np.ndarray:
    """``sqrt(E[v*v] / E[h*h])`` from the accumulators; the state is not touched."""
    if state.count < 1:
        raise DivisionHazardError("no pairs accumulated yet")
    bad = np.flatnonzero(~(state.running_h2 > 0))
    if bad.size:
        raise DivisionHazardError(
            f"E[h*h] vanishes at coordinate {int(bad[0])}", coordinate=int(bad[0])
        )
    return np.sqrt(state.running_v2 / state.running_h2)


def _diag_gradient(p, v, h):
    return h * h * p - v * v / p


def diag_update_scalar_step(state: DiagState, pair: CurvaturePair, mu2: float) -> bool:
    """``p <- p - mu (h^2 p - v^2 / p) p`` with ``mu = mu2 / max|h^2 p - v^2 / p|``."""
    mu2 = check_step(mu2)
    v, h = canonical_pair(pair, state.p.size, state.p.dtype)
    grad = _diag_gradient(state.p, v, h)
    gmax = np.max(np.abs(grad))
    if gmax == 0:
        return False
    mu = state.p.dtype.type(mu2) / gmax
    p_new = state.p - mu * grad * state.p
    if not np.all(p_new > 0):
        raise RejectedUpdateError("scalar-step update would make p nonpositive")
    state.p = p_new
    return True


def diag_update_elementwise(state: DiagState, pair: CurvaturePair, mu2: float) -> bool:
    """Sign update ``p <- p - mu2 sign(h^2 p - v^2 / p) p`` per coordinate."""
    mu2 = check_step(mu2, closed=False)
    v, h = canonical_pair(pair, state.p.size, state.p.dtype)
    s = np.sign(_diag_gradient(state.p, v, h))
    if not np.any(s):
        return False
    state.p = state.p - state.p.dtype.type(mu2) * s * state.p
    return True


class DiagPreconditioner(Preconditioner):
    """Diagonal preconditioner with a selectable fitting ``method``.

    ``closed_form`` re-solves p from the accumulated moments after every pair
    (keeping p unchanged while some E[h*h] is still zero); ``scalar`` and
    ``elementwise`` take one normalized step per pair.  Moments are
    accumulated in every mode.
    """

    kind = "diag"

    def __init__(self, n: int, method: str = "scalar", scale: float = 1.0,
                 precision="full", decay: Optional[float] = None):
        if method not in METHODS:
            raise InvalidParameterError(f"unknown diagonal fitting method {method!r}")
        self.dtype = resolve_dtype(precision)
        self.method = method
        self.state = DiagState.identity(n, scale, self.dtype, decay)

    @classmethod
    def from_p(cls, p, method: str = "scalar", precision="full") -> "DiagPreconditioner":
        p = np.asarray(p, dtype=float)
        obj = cls(p.size, method=method, precision=precision)
        obj.state = DiagState(p.astype(obj.dtype))
        return obj

    @property
    def n(self) -> int:
        return self.state.p.size

    @property
    def p(self) -> np.ndarray:
        return self.state.p

    def precond_grad(self, g):
        g = self._check_len(g)
        return self.state.p * g

    def quad_forms(self, v, h) -> Tuple[float, float]:
        v, h = self._check_len(v), self._check_len(h)
        p = self.state.p
        return float(np.sum(p * h * h)), float(np.sum(v * v / p))

    def update(self, pair, mu2, rng=None) -> bool:
        diag_accumulate(self.state, pair)
        if self.method == "scalar":
            return diag_update_scalar_step(self.state, pair, mu2)
        if self.method == "elementwise":
            return diag_update_elementwise(self.state, pair, mu2)
        if not np.all(self.state.running_h2 > 0):
            return False
        p = diag_closed_form(self.state)
        if not np.all(p > 0):
            return False
        self.state.p = p
        return True

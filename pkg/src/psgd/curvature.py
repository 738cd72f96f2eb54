"""Curvature sampling: probe vectors and Hessian-vector product pairs.

Every preconditioner fit in this package consumes ``CurvaturePair`` objects,
i.e. a probe ``v`` together with an estimate ``h`` of ``H @ v``.  Pairs come
either from an exact Hessian-vector product callback or from a finite
difference of two gradient evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (
    InvalidDimensionError,
    InvalidParameterError,
    NonFiniteEvaluationError,
    UnsupportedOperationError,
)

__all__ = [
    "CurvaturePair",
    "Objective",
    "sample_probe",
    "exact_pair",
    "fd_pair",
    "default_fd_scale",
]


@dataclass(frozen=True)
class CurvaturePair:
    """A probe ``v`` and its (possibly noisy) Hessian-vector product ``h``."""

    v: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v)
        h = np.asarray(self.h)
        if v.ndim != 1 or h.ndim != 1 or v.shape != h.shape or v.size == 0:
            raise InvalidDimensionError(
                f"pair vectors must be 1-D of equal nonzero length, got {v.shape} and {h.shape}"
            )
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(h))):
            raise NonFiniteEvaluationError("curvature pair has non-finite entries")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "h", h)

    @property
    def n(self) -> int:
        return self.v.shape[0]

    def scaled(self, s: float) -> "CurvaturePair":
        return CurvaturePair(s * self.v, s * self.h)


@dataclass
class Objective:
    """Callback bundle describing the problem to minimize.

    ``resample`` is an optional hook invoked once per optimizer step, before
    the gradient, so stochastic objectives can draw their sample (minibatch,
    noise, ...) and evaluate gradient and Hessian-vector product on the same
    sample.
    """

    dim: int
    loss: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hvp: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    resample: Optional[Callable[[np.random.Generator], None]] = None

    def __post_init__(self):
        if int(self.dim) < 1:
            raise InvalidDimensionError(f"objective dimension must be >= 1, got {self.dim}")
        self.dim = int(self.dim)


def sample_probe(n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. standard normal entries."""
    if n < 1:
        raise InvalidDimensionError(f"probe dimension must be >= 1, got {n}")
    return rng.standard_normal(n)


def _checked_gradient(obj: Objective, theta: np.ndarray) -> np.ndarray:
    g = np.asarray(obj.gradient(theta), dtype=float)
    if g.shape != (obj.dim,):
        raise InvalidDimensionError(f"gradient has shape {g.shape}, expected ({obj.dim},)")
    if not np.all(np.isfinite(g)):
        raise NonFiniteEvaluationError("non-finite gradient", point=np.array(theta, copy=True))
    return g


def exact_pair(obj: Objective, theta: np.ndarray, rng: np.random.Generator) -> CurvaturePair:
    if obj.hvp is None:
        raise UnsupportedOperationError(
            "objective has no Hessian-vector product; use fd_pair for finite differences"
        )
    v = sample_probe(obj.dim, rng)
    h = np.asarray(obj.hvp(theta, v), dtype=float)
    if h.shape != v.shape:
        raise InvalidDimensionError(f"hvp returned shape {h.shape}, expected {v.shape}")
    if not np.all(np.isfinite(h)):
        raise NonFiniteEvaluationError("non-finite Hessian-vector product", point=np.array(theta, copy=True))
    return CurvaturePair(v, h)


def default_fd_scale(theta: np.ndarray) -> float:
    # balances truncation against roundoff in the gradient difference
    return float(np.sqrt(np.finfo(float).eps) * (1.0 + np.max(np.abs(theta), initial=0.0)))


def fd_pair(
    obj: Objective,
    theta: np.ndarray,
    eps: Optional[float],
    rng: np.random.Generator,
    grad_at_theta: Optional[np.ndarray] = None,
) -> CurvaturePair:
    """Finite-difference pair ``(v, g(theta + v) - g(theta))`` with ``v ~ N(0, eps^2 I)``.

    The pair is not rescaled back by ``1/eps``: the fitting criterion's optimum
    does not depend on a joint scaling of ``(v, h)``.  ``grad_at_theta`` may be
    passed to reuse a gradient the caller already holds.
    """
    theta = np.asarray(theta, dtype=float)
    if eps is None:
        eps = default_fd_scale(theta)
    if not eps > 0:
        raise InvalidParameterError(f"finite-difference scale must be positive, got {eps}")
    v = eps * sample_probe(obj.dim, rng)
    g0 = _checked_gradient(obj, theta) if grad_at_theta is None else grad_at_theta
    g1 = _checked_gradient(obj, theta + v)
    return CurvaturePair(v, g1 - g0)

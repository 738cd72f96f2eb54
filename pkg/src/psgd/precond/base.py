"""Common surface of the Lie-group preconditioners."""

from __future__ import annotations

import abc
import copy
from typing import Optional, Tuple

import numpy as np

from ..curvature import CurvaturePair
from ..errors import InvalidDimensionError, InvalidParameterError

PRECISIONS = {"full": np.float64, "reduced": np.float32}


def resolve_dtype(precision) -> type:
    if precision in PRECISIONS:
        return PRECISIONS[precision]
    dt = np.dtype(precision).type
    if dt not in (np.float64, np.float32):
        raise InvalidParameterError(f"unsupported precision {precision!r}")
    return dt


def check_step(mu2: float, *, closed: bool = True) -> float:
    mu2 = float(mu2)
    ok = 0.0 < mu2 <= 1.0 if closed else 0.0 < mu2 < 1.0
    if not ok:
        bound = "(0, 1]" if closed else "(0, 1)"
        raise InvalidParameterError(f"preconditioner step must lie in {bound}, got {mu2}")
    return mu2


def canonical_pair(pair: CurvaturePair, n: int, dtype) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(v, h)`` jointly divided by ``max|v|`` and cast to ``dtype``.

    Iterative updates are invariant to a joint rescaling of the pair, so this
    changes nothing mathematically; it keeps squared quantities away from
    over/underflow, which matters for finite-difference pairs and float32.
    """
    if pair.n != n:
        raise InvalidDimensionError(f"pair has length {pair.n}, preconditioner has {n}")
    s = np.max(np.abs(pair.v))
    if s == 0.0:
        s = np.max(np.abs(pair.h))
    if s == 0.0:
        return pair.v.astype(dtype), pair.h.astype(dtype)
    return (pair.v / s).astype(dtype), (pair.h / s).astype(dtype)


class Preconditioner(abc.ABC):
    """P = Q^T Q stored through the group parameterization of Q.

    Subclasses never form P; everything goes through ``precond_grad`` and
    ``quad_forms``.
    """

    kind: str = "abstract"
    dtype: type = np.float64

    @property
    @abc.abstractmethod
    def n(self) -> int: ...

    @abc.abstractmethod
    def precond_grad(self, g: np.ndarray) -> np.ndarray:
        """Return ``Q^T (Q g)``."""

    @abc.abstractmethod
    def quad_forms(self, v: np.ndarray, h: np.ndarray) -> Tuple[float, float]:
        """Return ``(h^T P h, v^T P^{-1} v)``."""

    @abc.abstractmethod
    def update(
        self, pair: CurvaturePair, mu2: float, rng: Optional[np.random.Generator] = None
    ) -> bool:
        """Fit the preconditioner to one pair, in place.

        Returns False when the gradient vanished and nothing changed.  Raises
        ``RejectedUpdateError`` (state untouched) if the step would leave
        the group.
        """

    def copy(self):
        return copy.deepcopy(self)

    def _check_len(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != (self.n,):
            raise InvalidDimensionError(f"expected vector of length {self.n}, got shape {x.shape}")
        return x

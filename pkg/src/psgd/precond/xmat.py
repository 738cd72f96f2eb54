"""X-shape matrix group: Q = diag(a) + adiag(b).

``adiag(b)`` puts ``b[i]`` at position ``(i, n-1-i)``, so ``Q x = a*x + b*flip(x)``.
For odd ``n`` the centre of ``b`` is pinned to zero, which makes the
representation unique.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..curvature import CurvaturePair
from ..errors import InvalidDimensionError, RejectedUpdateError, SingularityError
from .base import Preconditioner, canonical_pair, check_step, resolve_dtype

__all__ = [
    "XMatState",
    "XMatPreconditioner",
    "xmat_apply",
    "xmat_apply_transpose",
    "xmat_solve_transpose",
    "xmat_compose",
    "xmat_inverse",
    "xmat_determinant_terms",
    "xmat_to_dense",
    "xmat_update",
]

SINGULAR_FLOOR = 1e-30


@dataclass
class XMatState:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a)
        self.b = np.asarray(self.b)
        if self.a.ndim != 1 or self.a.shape != self.b.shape or self.a.size == 0:
            raise InvalidDimensionError(f"a and b must be equal-length vectors, got {self.a.shape}, {self.b.shape}")
        n = self.a.size
        if n % 2 == 1 and self.b[n // 2] != 0:
            raise InvalidDimensionError("central element of b must be zero for odd n")

    @property
    def n(self) -> int:
        return self.a.size

    @classmethod
    def identity(cls, n: int, scale: float = 1.0, dtype=np.float64) -> "XMatState":
        return cls(np.full(n, scale, dtype=dtype), np.zeros(n, dtype=dtype))


def xmat_determinant_terms(s: XMatState) -> np.ndarray:
    """``c = a*flip(a) - b*flip(b)``; Q is invertible iff no entry is zero."""
    return s.a * s.a[::-1] - s.b * s.b[::-1]


def _check_invertible(c: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~(np.abs(c) >= SINGULAR_FLOOR))
    if bad.size:
        raise SingularityError(f"{what}: X-matrix is singular at index {int(bad[0])}")


def xmat_apply(s: XMatState, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != s.a.shape:
        raise InvalidDimensionError(f"length mismatch: {x.shape} vs {s.a.shape}")
    return s.a * x + s.b * x[::-1]


def xmat_apply_transpose(s: XMatState, x: np.ndarray) -> np.ndarray:
    # Q^T = diag(a) + adiag(flip(b))
    x = np.asarray(x)
    if x.shape != s.a.shape:
        raise InvalidDimensionError(f"length mismatch: {x.shape} vs {s.a.shape}")
    return s.a * x + s.b[::-1] * x[::-1]


def xmat_solve_transpose(s: XMatState, x: np.ndarray) -> np.ndarray:
    """``Q^{-T} x = (flip(a)*x - flip(b)*flip(x)) / c``."""
    x = np.asarray(x)
    c = xmat_determinant_terms(s)
    _check_invertible(c, "solve")
    return (s.a[::-1] * x - s.b[::-1] * x[::-1]) / c


def xmat_compose(s1: XMatState, s2: XMatState) -> XMatState:
    """Matrix product ``T(a, b) T(u, w)`` expressed in group coordinates."""
    if s1.n != s2.n:
        raise InvalidDimensionError(f"size mismatch: {s1.n} vs {s2.n}")
    a, b, u, w = s1.a, s1.b, s2.a, s2.b
    out = XMatState(a * u + b * w[::-1], a * w + b * u[::-1])
    _check_invertible(xmat_determinant_terms(out), "compose")
    return out


def xmat_inverse(s: XMatState) -> XMatState:
    c = xmat_determinant_terms(s)
    _check_invertible(c, "inverse")
    return XMatState(s.a[::-1] / c, -s.b / c)


def xmat_to_dense(s: XMatState) -> np.ndarray:
    n = s.n
    Q = np.diag(s.a).astype(s.a.dtype)
    Q[np.arange(n), np.arange(n)[::-1]] += s.b
    return Q


def xmat_update(s: XMatState, pair: CurvaturePair, mu2: float) -> bool:
    """One normalized gradient step on the X-matrix group, in place."""
    mu2 = check_step(mu2)
    v, h = canonical_pair(pair, s.n, s.a.dtype)
    a, b = s.a, s.b
    c = xmat_determinant_terms(s)
    _check_invertible(c, "update")

    Qh = a * h + b * h[::-1]
    Qtinv_v = (a[::-1] * v - b[::-1] * v[::-1]) / c
    grad_a = Qh * Qh - Qtinv_v * Qtinv_v
    grad_b = Qh * Qh[::-1] - Qtinv_v * Qtinv_v[::-1]
    n = s.n
    if n % 2 == 1:
        grad_b[n // 2] = 0

    gmax = max(np.max(np.abs(grad_a)), np.max(np.abs(grad_b)))
    if gmax == 0:
        return False
    mu = a.dtype.type(mu2) / gmax
    a_new = a - mu * (grad_a * a + grad_b * b[::-1])
    b_new = b - mu * (grad_a * b + grad_b * a[::-1])

    c_new = a_new * a_new[::-1] - b_new * b_new[::-1]
    if not np.all(np.abs(c_new) >= SINGULAR_FLOOR):
        raise RejectedUpdateError("X-matrix update would make Q singular")
    s.a, s.b = a_new, b_new
    return True


class XMatPreconditioner(Preconditioner):
    kind = "xmat"

    def __init__(self, n: int, scale: float = 1.0, precision="full", auto_scale: bool = False):
        self.dtype = resolve_dtype(precision)
        self.state = XMatState.identity(n, scale, self.dtype)
        self._pending_auto_scale = auto_scale

    @classmethod
    def from_ab(cls, a, b, precision="full") -> "XMatPreconditioner":
        obj = cls(len(a), precision=precision)
        obj.state = XMatState(np.asarray(a, dtype=obj.dtype), np.asarray(b, dtype=obj.dtype))
        return obj

    @property
    def n(self) -> int:
        return self.state.n

    def precond_grad(self, g):
        g = self._check_len(g)
        return xmat_apply_transpose(self.state, xmat_apply(self.state, g))

    def quad_forms(self, v, h) -> Tuple[float, float]:
        v, h = self._check_len(v), self._check_len(h)
        Qh = xmat_apply(self.state, h)
        w = xmat_solve_transpose(self.state, v)
        return float(Qh @ Qh), float(w @ w)

    def update(self, pair, mu2, rng=None) -> bool:
        if self._pending_auto_scale:
            self._pending_auto_scale = False
            scale = auto_scale_from_pair(pair)
            if scale is not None:
                self.state = XMatState.identity(self.n, scale, self.dtype)
        return xmat_update(self.state, pair, mu2)


def auto_scale_from_pair(pair: CurvaturePair) -> Optional[float]:
    """Scale for Q ~ scale * I so that P matches ``sqrt(mean v^2 / mean h^2)``."""
    mv = float(np.mean(pair.v * pair.v))
    mh = float(np.mean(pair.h * pair.h))
    if mv > 0 and mh > 0:
        return (mv / mh) ** 0.25
    return None

"""Low-rank approximation preconditioner Q = (I + U V^T) diag(d).

All solves go through the Woodbury identity with a single pivoted LU
factorization of the r x r matrix ``I + V^T U``; nothing of size n x n is
ever formed.  ``d`` is fitted on the positive diagonal group, while ``U``
and ``V`` live on two "twin" groups and are updated one at a time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla

from ..curvature import CurvaturePair
from ..errors import (
    InvalidDimensionError,
    InvalidParameterError,
    RejectedUpdateError,
    SingularityError,
)
from .base import Preconditioner, canonical_pair, check_step, resolve_dtype

__all__ = [
    "LraState",
    "LraPreconditioner",
    "lra_apply_Q",
    "lra_apply_Qt",
    "lra_solve_Q",
    "lra_solve_Qt",
    "lra_precond_grad",
    "lra_to_dense",
    "lra_update",
    "lra_update_flops",
]

DEFAULT_RANK = 10
SOLVE_TOL = 1e-12


@dataclass
class LraState:
    d: np.ndarray
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.d = np.asarray(self.d)
        n = self.d.size
        self.U = np.asarray(self.U, dtype=self.d.dtype).reshape(n, -1)
        self.V = np.asarray(self.V, dtype=self.d.dtype).reshape(n, -1)
        if self.d.ndim != 1 or n == 0:
            raise InvalidDimensionError(f"d must be a nonempty vector, got shape {self.d.shape}")
        if self.U.shape != self.V.shape:
            raise InvalidDimensionError(f"U and V shapes differ: {self.U.shape} vs {self.V.shape}")
        if np.any(self.d <= 0):
            raise InvalidParameterError("d must be strictly positive")

    @property
    def n(self) -> int:
        return self.d.size

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @classmethod
    def initial(cls, n: int, rank: int, rng: np.random.Generator, scale: float = 1.0,
                dtype=np.float64) -> "LraState":
        if rank < 0:
            raise InvalidParameterError(f"rank must be >= 0, got {rank}")
        # small random factors: with U = V = 0 both factor gradients vanish forever
        std = 1.0 / np.sqrt(n * rank) if rank else 0.0
        U = (std * rng.standard_normal((n, rank))).astype(dtype)
        V = (std * rng.standard_normal((n, rank))).astype(dtype)
        return cls(np.full(n, scale, dtype=dtype), U, V)


def _factor(U: np.ndarray, V: np.ndarray):
    """Pivoted LU of ``I + V^T U``; None when the rank is zero."""
    r = U.shape[1]
    if r == 0:
        return None
    M = np.eye(r, dtype=U.dtype) + V.T @ U
    with warnings.catch_warnings():
        # an exactly zero pivot is reported below as a SingularityError
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(M, check_finite=False)
    pivots = np.abs(np.diag(lu))
    scale = max(float(np.max(np.abs(M))), 1.0)
    if not np.all(np.isfinite(lu)) or np.min(pivots) <= SOLVE_TOL * scale:
        raise SingularityError("I + V^T U is singular")
    return lu, piv


def _solve_small(fac, rhs, trans=0):
    lu, piv = fac
    return sla.lu_solve((lu, piv), rhs, trans=trans, check_finite=False).astype(rhs.dtype, copy=False)


def _check_vec(s: LraState, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (s.n,):
        raise InvalidDimensionError(f"expected vector of length {s.n}, got shape {x.shape}")
    return x


def lra_apply_Q(s: LraState, x) -> np.ndarray:
    y = s.d * _check_vec(s, x)
    return y + s.U @ (s.V.T @ y)


def lra_apply_Qt(s: LraState, x) -> np.ndarray:
    x = _check_vec(s, x)
    return s.d * (x + s.V @ (s.U.T @ x))


def _ipuvt_solve(U, V, fac, x):
    # (I + U V^T)^{-1} x
    if fac is None:
        return x
    return x - U @ _solve_small(fac, V.T @ x)


def _ipvut_solve(U, V, fac, x):
    # (I + V U^T)^{-1} x; its small system is (I + U^T V) = (I + V^T U)^T
    if fac is None:
        return x
    return x - V @ _solve_small(fac, U.T @ x, trans=1)


def lra_solve_Q(s: LraState, x) -> np.ndarray:
    x = _check_vec(s, x)
    return _ipuvt_solve(s.U, s.V, _factor(s.U, s.V), x) / s.d


def lra_solve_Qt(s: LraState, x) -> np.ndarray:
    """``Q^{-T} x = (I + V U^T)^{-1} (x / d)``."""
    x = _check_vec(s, x)
    return _ipvut_solve(s.U, s.V, _factor(s.U, s.V), x / s.d)


def lra_precond_grad(s: LraState, g) -> np.ndarray:
    return lra_apply_Qt(s, lra_apply_Q(s, g))


def lra_to_dense(s: LraState) -> np.ndarray:
    return (np.eye(s.n, dtype=s.d.dtype) + s.U @ s.V.T) * s.d


def _rank2_fro(a, alpha, b, beta):
    # || a alpha^T - b beta^T ||_F without forming the outer products
    sq = (a @ a) * (alpha @ alpha) + (b @ b) * (beta @ beta) - 2 * (a @ b) * (alpha @ beta)
    return np.sqrt(np.abs(sq))


def lra_update(s: LraState, pair: CurvaturePair, mu2: float, update_u: bool) -> bool:
    """One fitting step; ``update_u`` selects which twin factor moves.

    All new values are computed first and committed together, so a rejected
    step leaves the state exactly as it was.
    """
    mu2 = check_step(mu2)
    v, h = canonical_pair(pair, s.n, s.d.dtype)
    d, U, V = s.d, s.U, s.V
    mu2 = d.dtype.type(mu2)
    fac = _factor(U, V)

    Qh = d * h + U @ (V.T @ (d * h))
    Ph = d * (Qh + V @ (U.T @ Qh))
    Qtinv_v = _ipvut_solve(U, V, fac, v / d)
    Pinv_v = _ipuvt_solve(U, V, fac, Qtinv_v) / d

    changed = False
    d_new = d
    grad_d = Ph * h - v * Pinv_v
    gmax = np.max(np.abs(grad_d))
    if gmax > 0:
        d_new = d - (mu2 / gmax) * d * grad_d
        if not np.all(d_new > 0):
            raise RejectedUpdateError("d update would leave the positive diagonal group")
        changed = True

    U_new, V_new = U, V
    a, b = Qh, Qtinv_v
    if s.rank:
        if update_u:
            atV, btV = a @ V, b @ V
            norm = _rank2_fro(a, V @ atV, b, V @ btV)
            if norm > 0:
                IpVtU = np.eye(s.rank, dtype=U.dtype) + V.T @ U
                U_new = U - (mu2 / norm) * (np.outer(a, atV @ IpVtU) - np.outer(b, btV @ IpVtU))
                changed = True
        else:
            atU, btU = a @ U, b @ U
            norm = _rank2_fro(U @ atU, a, U @ btU, b)
            if norm > 0:
                V_new = V - (mu2 / norm) * (np.outer(a + V @ atU, atU) - np.outer(b + V @ btU, btU))
                changed = True

    if not changed:
        return False
    if s.rank:
        try:
            _factor(U_new, V_new)
        except SingularityError:
            raise RejectedUpdateError("low-rank update would make I + V^T U singular") from None
    s.d, s.U, s.V = d_new, U_new, V_new
    return True


def lra_update_flops(n: int, r: int) -> int:
    """Multiply-add count of one ``lra_update`` call (U branch, the costlier one).

    Mirrors the statements of ``lra_update`` term by term; used to document
    that the work is O(n r + r^3).
    """
    fac = n * r * r + (2 * r ** 3) // 3  # V^T U and LU
    fwd = n + 2 * n * r + n  # d*h, V^T(dh), U(.)
    ph = 2 * n * r + 2 * n  # U^T Qh, V(.), d*()
    solves = 2 * (2 * n * r + 2 * r * r) + 2 * n  # two Woodbury solves
    gd = 3 * n + 3 * n
    uv = 2 * n * r + 2 * n * r + 4 * n + 2 * r * r  # a^T V, b^T V, V(.), norms, (.)(I+V^T U)
    step = 2 * n * r + 2 * n * r
    check = n * r * r + (2 * r ** 3) // 3
    return fac + fwd + ph + solves + gd + uv + step + check


class LraPreconditioner(Preconditioner):
    """``alternate`` is ``"random"`` (fair coin per update) or ``"strict"``
    (U, V, U, ... deterministically; not the published rule, meant for tests)."""

    kind = "lra"

    def __init__(self, n: int, rank: int = DEFAULT_RANK, scale: float = 1.0, precision="full",
                 alternate: str = "random", rng: Optional[np.random.Generator] = None,
                 auto_scale: bool = False):
        if alternate not in ("random", "strict"):
            raise InvalidParameterError(f"unknown alternation mode {alternate!r}")
        self.dtype = resolve_dtype(precision)
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self.state = LraState.initial(n, rank, self._rng, scale, self.dtype)
        self.alternate = alternate
        self._next_u = True
        self._pending_auto_scale = auto_scale

    @classmethod
    def from_factors(cls, d, U, V, precision="full", alternate="random",
                     rng=None) -> "LraPreconditioner":
        d = np.asarray(d, dtype=float)
        obj = cls(d.size, rank=0, precision=precision, alternate=alternate, rng=rng)
        dt = obj.dtype
        obj.state = LraState(d.astype(dt), np.asarray(U, dtype=dt).reshape(d.size, -1),
                             np.asarray(V, dtype=dt).reshape(d.size, -1))
        return obj

    @property
    def n(self) -> int:
        return self.state.n

    @property
    def rank(self) -> int:
        return self.state.rank

    def precond_grad(self, g):
        return lra_precond_grad(self.state, g)

    def quad_forms(self, v, h) -> Tuple[float, float]:
        Qh = lra_apply_Q(self.state, h)
        w = lra_solve_Qt(self.state, v)
        return float(Qh @ Qh), float(w @ w)

    def update(self, pair, mu2, rng=None) -> bool:
        if self._pending_auto_scale:
            self._pending_auto_scale = False
            mv, mh = float(np.mean(pair.v ** 2)), float(np.mean(pair.h ** 2))
            if mv > 0 and mh > 0:
                self.state.d = np.full(self.n, (mv / mh) ** 0.25, dtype=self.dtype)
        if self.alternate == "strict":
            update_u = self._next_u
        else:
            update_u = (rng if rng is not None else self._rng).random() < 0.5
        applied = lra_update(self.state, pair, mu2, update_u)
        if self.alternate == "strict":
            self._next_u = not self._next_u
        return applied

"""Dense preconditioner on the general linear group, plus ``densify``.

Only meant for small n: it is the iterative reference the sparse groups are
checked against.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from ..curvature import CurvaturePair
from ..errors import InvalidDimensionError, OracleCapError, RejectedUpdateError, SingularityError
from .base import Preconditioner, canonical_pair, check_step, resolve_dtype

__all__ = ["DensePreconditioner", "dense_update", "densify", "ORACLE_CAP"]

ORACLE_CAP = 128


def _solve_t(Q: np.ndarray, x: np.ndarray) -> np.ndarray:
    try:
        y = np.linalg.solve(Q.T, x)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("dense Q is singular") from exc
    return y


def _is_invertible(Q: np.ndarray) -> bool:
    if not np.all(np.isfinite(Q)):
        return False
    sign, logdet = np.linalg.slogdet(Q.astype(np.float64))
    return sign != 0 and np.isfinite(logdet)


def dense_update(Q: np.ndarray, pair: CurvaturePair, mu2: float) -> Optional[np.ndarray]:
    """Return the updated Q, or None when the group gradient vanishes.

    ``G = (Qh)(Qh)^T - (Q^{-T}v)(Q^{-T}v)^T`` and ``Q <- Q - mu2/||G||_F * G Q``.
    G has rank <= 2, so its Frobenius norm overestimates the spectral norm by
    at most sqrt(2).
    """
    mu2 = check_step(mu2)
    n = Q.shape[0]
    v, h = canonical_pair(pair, n, Q.dtype)
    a = Q @ h
    b = _solve_t(Q, v)
    norm = np.sqrt(np.abs((a @ a) ** 2 + (b @ b) ** 2 - 2 * (a @ b) ** 2))
    if norm == 0:
        return None
    mu = Q.dtype.type(mu2) / norm
    # G Q = a (a^T Q) - b (b^T Q)
    Q_new = Q - mu * (np.outer(a, a @ Q) - np.outer(b, b @ Q))
    if not _is_invertible(Q_new):
        raise RejectedUpdateError("dense update would make Q singular")
    return Q_new


class DensePreconditioner(Preconditioner):
    kind = "dense"

    def __init__(self, n: int, scale: float = 1.0, precision="full", cap: int = ORACLE_CAP,
                 auto_scale: bool = False):
        if n > cap:
            raise OracleCapError(f"dense preconditioner limited to n <= {cap}, got {n}")
        self.dtype = resolve_dtype(precision)
        self.Q = scale * np.eye(n, dtype=self.dtype)
        self._pending_auto_scale = auto_scale

    @classmethod
    def from_matrix(cls, Q, precision="full") -> "DensePreconditioner":
        Q = np.asarray(Q, dtype=float)
        obj = cls(Q.shape[0], precision=precision, cap=max(ORACLE_CAP, Q.shape[0]))
        obj.Q = Q.astype(obj.dtype)
        return obj

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def precond_grad(self, g):
        g = self._check_len(g)
        return self.Q.T @ (self.Q @ g)

    def quad_forms(self, v, h) -> Tuple[float, float]:
        v, h = self._check_len(v), self._check_len(h)
        a = self.Q @ h
        b = _solve_t(self.Q, v)
        return float(a @ a), float(b @ b)

    def update(self, pair, mu2, rng=None) -> bool:
        if self._pending_auto_scale:
            self._pending_auto_scale = False
            mv, mh = float(np.mean(pair.v ** 2)), float(np.mean(pair.h ** 2))
            if mv > 0 and mh > 0:
                self.Q = (mv / mh) ** 0.25 * np.eye(self.n, dtype=self.dtype)
        Q_new = dense_update(self.Q, pair, mu2)
        if Q_new is None:
            return False
        self.Q = Q_new
        return True


def densify(precond: Preconditioner, cap: int = ORACLE_CAP) -> np.ndarray:
    """Explicit P = Q^T Q, built column by column from ``precond_grad``."""
    n = precond.n
    if n > cap:
        raise OracleCapError(f"densify limited to n <= {cap}, got {n}")
    eye = np.eye(n, dtype=precond.dtype)
    P = np.column_stack([precond.precond_grad(eye[:, j]) for j in range(n)]).astype(np.float64)
    return 0.5 * (P + P.T)

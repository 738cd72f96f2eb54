"""Preconditioner fitting criterion and dense closed-form references.

The criterion is ``c(P) = E[h^T P h + v^T P^{-1} v]``.  For ``h = H v + e`` with
``v ~ N(0, I)`` its unique SPD minimizer is ``(H^2 + E[e e^T])^{-1/2}``.  The
dense helpers below are oracles for small n only; they use a symmetric
eigendecomposition for every matrix function.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .curvature import CurvaturePair
from .errors import InvalidDimensionError, InvalidParameterError, OracleCapError, SingularityError
from .precond.base import Preconditioner
from .precond.dense import ORACLE_CAP

__all__ = [
    "FittingSample",
    "as_dense_symmetric",
    "fitting_loss",
    "exact_fitting_loss",
    "closed_form_optimum",
    "closed_form_sample_estimate",
    "sym_matrix_power",
]

SYM_TOL = 1e-12


@dataclass(frozen=True)
class FittingSample:
    pairs: Sequence[CurvaturePair]

    def __post_init__(self):
        if len(self.pairs) == 0:
            raise InvalidDimensionError("fitting sample is empty")
        n = self.pairs[0].n
        if any(p.n != n for p in self.pairs):
            raise InvalidDimensionError("pairs in a fitting sample must share one dimension")

    @property
    def n(self) -> int:
        return self.pairs[0].n

    @classmethod
    def from_arrays(cls, V: np.ndarray, Hv: np.ndarray) -> "FittingSample":
        """Rows of ``V`` and ``Hv`` are probes and their products."""
        return cls([CurvaturePair(v, h) for v, h in zip(V, Hv)])

    def stacked(self):
        return (np.stack([p.v for p in self.pairs]), np.stack([p.h for p in self.pairs]))


def as_dense_symmetric(A, cap: int = ORACLE_CAP) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidDimensionError(f"expected a square matrix, got shape {A.shape}")
    if A.shape[0] > cap:
        raise OracleCapError(f"dense oracle limited to n <= {cap}, got {A.shape[0]}")
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.max(np.abs(A - A.T)) > SYM_TOL * scale:
        raise InvalidParameterError("matrix is not symmetric")
    return 0.5 * (A + A.T)


def sym_matrix_power(A, power: float, *, what: str = "matrix") -> np.ndarray:
    """``A^power`` for symmetric positive definite ``A`` via ``eigh``."""
    w, E = np.linalg.eigh(A)
    if not np.all(w > 0):
        raise SingularityError(f"{what} is not positive definite (min eigenvalue {w.min():.3e})")
    return (E * w ** power) @ E.T


def fitting_loss(precond: Preconditioner, sample: FittingSample) -> float:
    """Empirical mean of ``h^T P h + v^T P^{-1} v`` over the sample pairs."""
    if not isinstance(sample, FittingSample):
        sample = FittingSample(list(sample))
    if sample.n != precond.n:
        raise InvalidDimensionError(f"sample dimension {sample.n} != preconditioner {precond.n}")
    total = 0.0
    for pair in sample.pairs:
        a, b = precond.quad_forms(pair.v, pair.h)
        total += a + b
    return total / len(sample.pairs)


def exact_fitting_loss(P, H, noise_var: float = 0.0) -> float:
    """Population criterion ``tr(P (H^2 + noise_var I)) + tr(P^{-1})``."""
    if noise_var < 0:
        raise InvalidParameterError(f"noise variance must be >= 0, got {noise_var}")
    P = as_dense_symmetric(P)
    H = as_dense_symmetric(H)
    if P.shape != H.shape:
        raise InvalidDimensionError(f"shape mismatch {P.shape} vs {H.shape}")
    Pinv = sym_matrix_power(P, -1.0, what="P")
    return float(np.trace(P @ H @ H) + noise_var * np.trace(P) + np.trace(Pinv))


def closed_form_optimum(H, noise_var: float = 0.0) -> np.ndarray:
    """``(H^2 + noise_var I)^{-1/2}``; depends on H only through ``|H|``."""
    if noise_var < 0:
        raise InvalidParameterError(f"noise variance must be >= 0, got {noise_var}")
    H = as_dense_symmetric(H)
    w, E = np.linalg.eigh(H)
    m = w * w + noise_var
    if not np.all(m > 0):
        raise SingularityError("H^2 + noise is singular")
    return (E * m ** -0.5) @ E.T


def closed_form_sample_estimate(sample: FittingSample, dtype=np.float64,
                                cap: int = ORACLE_CAP) -> np.ndarray:
    """``(mean h h^T)^{-1/2}`` from the sample, with no regularization.

    With ``dtype=np.float32`` the covariance and its eigendecomposition are
    carried out in single precision, as a reduced-precision baseline.
    """
    if not isinstance(sample, FittingSample):
        sample = FittingSample(list(sample))
    if sample.n > cap:
        raise OracleCapError(f"dense oracle limited to n <= {cap}, got {sample.n}")
    _, Hs = sample.stacked()
    Hs = Hs.astype(dtype)
    C = (Hs.T @ Hs) / dtype(len(sample.pairs))
    C = dtype(0.5) * (C + C.T)
    w, E = np.linalg.eigh(C)
    if not np.all(w > np.finfo(dtype).eps * max(float(np.max(np.abs(w))), np.finfo(dtype).tiny) * sample.n):
        raise SingularityError("sample covariance of h is singular")
    P = ((E * w ** dtype(-0.5)) @ E.T).astype(np.float64)
    return 0.5 * (P + P.T)

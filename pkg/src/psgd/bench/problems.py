"""Test problems with analytic gradients and Hessian-vector products."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..curvature import Objective
from ..errors import InvalidParameterError

__all__ = [
    "quadratic",
    "rosenbrock",
    "StochasticRosenbrock",
    "rosenbrock_hessian",
    "random_orthogonal",
    "spectrum",
    "random_symmetric",
    "make_logreg_data",
    "logistic_regression",
]


def quadratic(H: np.ndarray, center: Optional[np.ndarray] = None) -> Objective:
    """``f(x) = 0.5 (x - c)^T H (x - c)``."""
    H = np.asarray(H, dtype=float)
    c = np.zeros(H.shape[0]) if center is None else np.asarray(center, dtype=float)

    def loss(x):
        r = x - c
        return 0.5 * float(r @ H @ r)

    return Objective(H.shape[0], loss, lambda x: H @ (x - c), lambda x, v: H @ v)


def _rosen_parts(x, scale):
    u, w = x
    r = w - u * u
    loss = (1 - u) ** 2 + 100 * scale * r * r
    grad = np.array([-2 * (1 - u) - 400 * scale * u * r, 200 * scale * r])
    return loss, grad


def rosenbrock_hessian(x, scale: float = 1.0) -> np.ndarray:
    u, w = x
    return np.array([
        [2 - 400 * scale * (w - 3 * u * u), -400 * scale * u],
        [-400 * scale * u, 200 * scale],
    ])


def rosenbrock() -> Objective:
    """Deterministic ``R(u, w) = (1 - u)^2 + 100 (w - u^2)^2``."""
    return Objective(
        2,
        lambda x: float(_rosen_parts(x, 1.0)[0]),
        lambda x: _rosen_parts(x, 1.0)[1],
        lambda x, v: rosenbrock_hessian(x) @ v,
    )


class StochasticRosenbrock(Objective):
    """``(1 - u)^2 + 100 e (w - u^2)^2`` with ``e ~ U[lo, hi]`` redrawn per step.

    ``lo = hi = 1`` recovers the deterministic function.  ``clean_loss``
    evaluates the noise-free objective, which is what benchmarks report.
    """

    def __init__(self, lo: float = 0.5, hi: float = 1.5):
        if lo > hi:
            raise InvalidParameterError(f"noise interval [{lo}, {hi}] is empty")
        self.lo, self.hi = lo, hi
        self.eps = 1.0
        super().__init__(
            2,
            lambda x: float(_rosen_parts(x, self.eps)[0]),
            lambda x: _rosen_parts(x, self.eps)[1],
            lambda x, v: rosenbrock_hessian(x, self.eps) @ v,
            self._resample,
        )

    def _resample(self, rng):
        self.eps = self.lo if self.lo == self.hi else float(rng.uniform(self.lo, self.hi))

    @staticmethod
    def clean_loss(x) -> float:
        return float(_rosen_parts(x, 1.0)[0])


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix from the QR of a Gaussian matrix."""
    Z = rng.standard_normal((n, n))
    Qm, R = np.linalg.qr(Z)
    return Qm * np.sign(np.diag(R))


def spectrum(kind: str, n: int, rng: np.random.Generator, *, low: float = 0.1,
             high: float = 1.0, sigma: float = 1.0) -> np.ndarray:
    """Eigenvalues for synthetic Hessians.

    ``uniform`` draws from U[low, high]; ``exponential`` from Exp(1);
    ``lognormal`` from LogNormal(0, sigma); ``ones`` is all ones.
    """
    if kind == "uniform":
        return rng.uniform(low, high, n)
    if kind == "exponential":
        return rng.exponential(1.0, n)
    if kind == "lognormal":
        return rng.lognormal(0.0, sigma, n)
    if kind == "ones":
        return np.ones(n)
    raise InvalidParameterError(f"unknown spectrum {kind!r}")


def random_symmetric(eigenvalues, rng: np.random.Generator) -> np.ndarray:
    lam = np.asarray(eigenvalues, dtype=float)
    E = random_orthogonal(lam.size, rng)
    H = (E * lam) @ E.T
    return 0.5 * (H + H.T)


def make_logreg_data(n_features: int, n_samples: int, cond: float, rng: np.random.Generator,
                     rotate: bool = True, label_noise: float = 0.05):
    """Synthetic binary classification data with a controlled feature covariance.

    Feature standard deviations are log-spaced from 1 down to ``cond**-0.5``,
    so the covariance has condition number ``cond``.  The true weight vector
    gives every feature direction an equal share of the margin, which keeps
    the weakly scaled directions relevant to the fit.  ``label_noise`` is the
    fraction of labels flipped at random.
    """
    if n_features < 1 or n_samples < 1:
        raise InvalidParameterError("logistic regression needs at least one feature and one sample")
    if cond < 1:
        raise InvalidParameterError(f"condition number must be >= 1, got {cond}")
    scales = np.logspace(0.0, -0.5 * np.log10(cond), n_features)
    Z = rng.standard_normal((n_samples, n_features))
    X = Z * scales
    w_true = rng.choice([-1.0, 1.0], n_features) / scales * (4.0 / np.sqrt(n_features))
    if rotate:
        R = random_orthogonal(n_features, rng)
        X = X @ R.T
        w_true = R @ w_true
    y = (X @ w_true > 0).astype(float)
    flip = rng.random(n_samples) < label_noise
    y[flip] = 1.0 - y[flip]
    return X, y


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def logistic_regression(X: np.ndarray, y: np.ndarray) -> Objective:
    """Mean binary cross-entropy, full batch, with analytic gradient and HVP."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    m, n = X.shape
    if n == 0 or m == 0:
        raise InvalidParameterError("logistic regression needs at least one feature and one sample")

    def loss(w):
        z = X @ w
        # log(1 + e^z) - y z, computed stably
        return float(np.mean(np.logaddexp(0.0, z) - y * z))

    def grad(w):
        return X.T @ (_sigmoid(X @ w) - y) / m

    def hvp(w, v):
        s = _sigmoid(X @ w)
        return X.T @ (s * (1 - s) * (X @ v)) / m

    return Objective(n, loss, grad, hvp)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psgd.bench.problems import quadratic, random_symmetric, rosenbrock
from psgd.curvature import (
    CurvaturePair,
    Objective,
    default_fd_scale,
    exact_pair,
    fd_pair,
    sample_probe,
)
from psgd.errors import (
    InvalidDimensionError,
    InvalidParameterError,
    NonFiniteEvaluationError,
    UnsupportedOperationError,
)


def central_difference_hessian(grad, x, step=1e-5):
    """Independent oracle: column j is (g(x + s e_j) - g(x - s e_j)) / 2s."""
    n = x.size
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        cols.append((grad(x + e) - grad(x - e)) / (2 * step))
    return np.column_stack(cols)


def test_pair_validation():
    with pytest.raises(InvalidDimensionError):
        CurvaturePair(np.ones(2), np.ones(3))
    with pytest.raises(InvalidDimensionError):
        CurvaturePair(np.ones(0), np.ones(0))
    with pytest.raises(NonFiniteEvaluationError):
        CurvaturePair(np.array([1.0, np.nan]), np.ones(2))
    p = CurvaturePair([1.0, 2.0], [3.0, 4.0])
    assert p.n == 2
    np.testing.assert_array_equal(p.scaled(2.0).h, [6.0, 8.0])


def test_objective_rejects_zero_dimension():
    with pytest.raises(InvalidDimensionError):
        Objective(0, lambda x: 0.0, lambda x: x)


def test_probe_deterministic_under_seed():
    u = sample_probe(3, np.random.default_rng(7))
    w = sample_probe(3, np.random.default_rng(7))
    np.testing.assert_array_equal(u, w)


def test_probe_distinct_seeds_differ():
    u = sample_probe(2, np.random.default_rng(1))
    w = sample_probe(2, np.random.default_rng(2))
    assert not np.array_equal(u, w)


def test_probe_moments():
    rng = np.random.default_rng(0)
    x = np.array([sample_probe(1, rng)[0] for _ in range(100_000)])
    assert abs(x.mean()) < 3 * 10 ** -2.5
    assert abs(x.var() - 1.0) < 0.05


def test_probe_zero_dimension():
    with pytest.raises(InvalidDimensionError):
        sample_probe(0, np.random.default_rng(0))


def test_exact_pair_identity_hessian():
    obj = quadratic(np.eye(3))
    pair = exact_pair(obj, np.array([1.0, -2.0, 0.5]), np.random.default_rng(0))
    np.testing.assert_array_equal(pair.h, pair.v)


def test_exact_pair_diagonal_hessian():
    obj = quadratic(np.diag([2.0, 0.5]))
    np.testing.assert_array_equal(obj.hvp(np.zeros(2), np.array([1.0, 1.0])), [2.0, 0.5])


def test_rosenbrock_hvp_against_central_differences():
    obj = rosenbrock()
    x = np.array([1.0, 1.0])
    h = obj.hvp(x, np.array([1.0, 0.0]))
    oracle = central_difference_hessian(obj.gradient, x)[:, 0]
    np.testing.assert_allclose(h, oracle, rtol=1e-6)
    np.testing.assert_allclose(h, [802.0, -400.0])


def test_exact_pair_without_hvp():
    obj = Objective(2, lambda x: 0.0, lambda x: x)
    with pytest.raises(UnsupportedOperationError, match="fd_pair"):
        exact_pair(obj, np.zeros(2), np.random.default_rng(0))


@pytest.mark.parametrize("n", [1, 8, 64])
@pytest.mark.parametrize("eps", [1.0, 0.1, 0.01])
def test_fd_pair_matches_exact_on_quadratics(n, eps):
    rng = np.random.default_rng(n)
    H = random_symmetric(rng.uniform(-2, 2, n), rng)
    obj = quadratic(H)
    theta = rng.standard_normal(n)
    fd = fd_pair(obj, theta, eps, np.random.default_rng(11))
    # the exact product at the shared probe
    h = obj.hvp(theta, fd.v)
    np.testing.assert_allclose(fd.v, eps * sample_probe(n, np.random.default_rng(11)), rtol=0)
    assert np.linalg.norm(fd.h - h) <= 1e-12 * np.linalg.norm(h)


def test_fd_pair_default_scale_roundoff_law():
    # at the default scale the gradient difference loses ~eps_mach/eps relative accuracy
    rng = np.random.default_rng(3)
    n = 16
    H = random_symmetric(rng.uniform(0.5, 2, n), rng)
    obj = quadratic(H)
    theta = rng.standard_normal(n)
    fd = fd_pair(obj, theta, None, np.random.default_rng(4))
    h = obj.hvp(theta, fd.v)
    eps = default_fd_scale(theta)
    bound = 10 * n * np.finfo(float).eps * np.linalg.norm(H @ theta) / np.linalg.norm(h)
    assert np.linalg.norm(fd.h - h) <= bound * np.linalg.norm(h)
    assert np.max(np.abs(fd.v)) < 10 * eps


def test_fd_pair_quartic():
    obj = Objective(1, lambda x: float(x[0] ** 4 / 4), lambda x: x ** 3)
    pair = fd_pair(obj, np.array([1.0]), 1e-4, np.random.default_rng(0))
    assert abs(pair.h[0] / pair.v[0] - 3.0) < 1e-3


@pytest.mark.parametrize("eps", [0.0, -1e-3])
def test_fd_pair_rejects_nonpositive_scale(eps):
    obj = quadratic(np.eye(2))
    with pytest.raises(InvalidParameterError):
        fd_pair(obj, np.zeros(2), eps, np.random.default_rng(0))


def test_fd_pair_nonfinite_gradient_reports_point():
    def grad(x):
        return np.array([np.inf]) if x[0] > 0.5 else x

    obj = Objective(1, lambda x: 0.0, grad)
    with pytest.raises(NonFiniteEvaluationError) as info:
        fd_pair(obj, np.array([1.0]), 1e-3, np.random.default_rng(0))
    assert info.value.point is not None and info.value.point[0] == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_hvp_linearity(n, alpha, beta, seed):
    rng = np.random.default_rng(seed)
    obj = quadratic(random_symmetric(rng.uniform(-2, 2, n), rng))
    theta, v1, v2 = rng.standard_normal((3, n))
    lhs = obj.hvp(theta, alpha * v1 + beta * v2)
    rhs = alpha * obj.hvp(theta, v1) + beta * obj.hvp(theta, v2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_pair_stream_reproducible():
    obj = rosenbrock()
    thetas = [np.array([-1.0, 1.0]), np.array([0.0, 0.5]), np.array([1.2, 1.4])]

    def stream(seed):
        rng = np.random.default_rng(seed)
        return [exact_pair(obj, t, rng) for t in thetas] + [fd_pair(obj, t, None, rng) for t in thetas]

    for a, b in zip(stream(5), stream(5)):
        np.testing.assert_array_equal(a.v, b.v)
        np.testing.assert_array_equal(a.h, b.h)

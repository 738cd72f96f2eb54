import numpy as np
import pytest

from psgd.bench.problems import random_symmetric
from psgd.criterion import closed_form_optimum
from psgd.curvature import CurvaturePair
from psgd.errors import OracleCapError, RejectedUpdateError
from psgd.precond import (
    DensePreconditioner,
    DiagPreconditioner,
    LraPreconditioner,
    XMatPreconditioner,
    dense_update,
    densify,
    lra_to_dense,
    xmat_to_dense,
)


def indefinite_hessian(n, rng):
    lam = rng.uniform(0.5, 2.0, n) * np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    return random_symmetric(lam, rng)


def stream_fit(pc, H, n_pairs, mu2, rng, noise_var=0.0):
    n = H.shape[0]
    for _ in range(n_pairs):
        v = rng.standard_normal(n)
        h = H @ v
        if noise_var:
            h = h + np.sqrt(noise_var) * rng.standard_normal(n)
        pc.update(CurvaturePair(v, h), mu2)
    return densify(pc)


def test_fixed_point_at_identity():
    v = np.array([1.0, -2.0, 0.5])
    assert dense_update(np.eye(3), CurvaturePair(v, v), 0.1) is None
    pc = DensePreconditioner(3)
    assert pc.update(CurvaturePair(v, v), 0.1) is False
    np.testing.assert_array_equal(pc.Q, np.eye(3))


@pytest.mark.parametrize("mu2", [0.01, 0.5, 0.9])
def test_scalar_example(mu2):
    Q = dense_update(np.eye(1), CurvaturePair([1.0], [2.0]), mu2)
    assert Q[0, 0] == pytest.approx(1.0 - mu2, rel=1e-15)


def test_update_matches_group_step():
    rng = np.random.default_rng(0)
    Q = np.eye(5) + 0.2 * rng.standard_normal((5, 5))
    v, h = rng.standard_normal(5), rng.standard_normal(5)
    Q_new = dense_update(Q, CurvaturePair(v, h), 0.03)
    m = np.max(np.abs(v))
    a, b = Q @ (h / m), np.linalg.solve(Q.T, v / m)
    G = np.outer(a, a) - np.outer(b, b)
    np.testing.assert_allclose(Q_new, Q - 0.03 / np.linalg.norm(G) * G @ Q, atol=1e-12)
    # the Frobenius estimate is within sqrt(2) of the spectral norm
    assert np.linalg.norm(G, 2) <= np.linalg.norm(G) <= np.sqrt(2) * np.linalg.norm(G, 2) + 1e-12


def test_rejected_singular_update():
    pc = DensePreconditioner(1)
    with pytest.raises(RejectedUpdateError):
        pc.update(CurvaturePair([0.0], [1.0]), 1.0)
    np.testing.assert_array_equal(pc.Q, [[1.0]])


@pytest.mark.xfail(strict=True, reason=(
    "at mu2 = 0.02 the final iterate fluctuates around a ~0.1 relative-error floor; "
    "the fit first reaches 0.1 within ~10^3 updates but the last iterate is a coin flip"))
def test_streaming_fit_indefinite_final_iterate():
    rng = np.random.default_rng(0)
    H = indefinite_hessian(8, rng)
    assert np.any(np.linalg.eigvalsh(H) < 0)
    P = stream_fit(DensePreconditioner(8), H, 30_000, 0.02, rng)
    target = closed_form_optimum(H)
    assert np.linalg.norm(P - target) / np.linalg.norm(target) <= 0.1


def test_streaming_fit_indefinite_reaches_tolerance():
    rng = np.random.default_rng(0)
    H = indefinite_hessian(8, rng)
    target = closed_form_optimum(H)
    pc = DensePreconditioner(8)
    errs = []
    for k in range(5000):
        v = rng.standard_normal(8)
        pc.update(CurvaturePair(v, H @ v), 0.02)
        if k % 100 == 99:
            errs.append(np.linalg.norm(densify(pc) - target) / np.linalg.norm(target))
    assert min(errs) <= 0.1
    # and it stays in the neighbourhood afterwards
    assert max(errs[-20:]) <= 0.2


def test_noise_damping():
    rng = np.random.default_rng(1)
    H = random_symmetric([2.0, 0.5, 1.0, 4.0], rng)
    P = stream_fit(DensePreconditioner(4), H, 30_000, 0.01, rng, noise_var=1.0)
    damped = closed_form_optimum(H, 1.0)
    undamped = closed_form_optimum(H)
    lam = np.linalg.eigvalsh(P)
    np.testing.assert_allclose(lam, np.linalg.eigvalsh(damped), rtol=0.1)
    assert np.all(lam <= 1.05 * np.linalg.eigvalsh(undamped))


def test_densify_examples():
    np.testing.assert_array_equal(densify(DiagPreconditioner.from_p([2.0, 3.0])), np.diag([2.0, 3.0]))
    x = XMatPreconditioner.from_ab([1.0, 1.0], [1.0, -1.0])
    np.testing.assert_allclose(densify(x), 2 * np.eye(2), atol=1e-15)
    d = np.array([0.5, 3.0, 1.5])
    lra = LraPreconditioner.from_factors(d, np.zeros((3, 0)), np.zeros((3, 0)))
    np.testing.assert_array_equal(densify(lra), np.diag(d ** 2))


@pytest.mark.parametrize("n", [1, 2, 5, 8])
def test_densify_agrees_with_group_algebra(n):
    rng = np.random.default_rng(n)
    for _ in range(20):
        a = 1 + 0.3 * rng.standard_normal(n)
        b = 0.3 * rng.standard_normal(n)
        if n % 2:
            b[n // 2] = 0.0
        x = XMatPreconditioner.from_ab(a, b)
        Qx = xmat_to_dense(x.state)
        np.testing.assert_allclose(densify(x), Qx.T @ Qx, atol=1e-12)
        r = min(n, 3)
        lra = LraPreconditioner.from_factors(np.exp(0.3 * rng.standard_normal(n)),
                                             0.3 * rng.standard_normal((n, r)),
                                             0.3 * rng.standard_normal((n, r)))
        Ql = lra_to_dense(lra.state)
        np.testing.assert_allclose(densify(lra), Ql.T @ Ql, atol=1e-12)
        Qd = np.eye(n) + 0.3 * rng.standard_normal((n, n))
        np.testing.assert_allclose(densify(DensePreconditioner.from_matrix(Qd)), Qd.T @ Qd, atol=1e-12)


def test_oracle_cap():
    with pytest.raises(OracleCapError):
        DensePreconditioner(129)
    with pytest.raises(OracleCapError):
        densify(DiagPreconditioner(10), cap=5)

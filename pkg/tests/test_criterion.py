import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psgd.bench.problems import random_symmetric
from psgd.criterion import (
    FittingSample,
    as_dense_symmetric,
    closed_form_optimum,
    closed_form_sample_estimate,
    exact_fitting_loss,
    fitting_loss,
)
from psgd.curvature import CurvaturePair
from psgd.errors import (
    InvalidDimensionError,
    InvalidParameterError,
    OracleCapError,
    SingularityError,
)
from psgd.precond import DensePreconditioner, DiagPreconditioner, LraPreconditioner, XMatPreconditioner


def diag_sample(hdiag, n_pairs, rng, noise_var=0.0):
    V = rng.standard_normal((n_pairs, len(hdiag)))
    Hv = V * np.asarray(hdiag)
    if noise_var:
        Hv = Hv + np.sqrt(noise_var) * rng.standard_normal(Hv.shape)
    return FittingSample.from_arrays(V, Hv)


def test_identity_preconditioner_single_pair():
    s = FittingSample([CurvaturePair([1.0, 1.0], [1.0, 1.0])])
    assert fitting_loss(DiagPreconditioner(2), s) == 4.0


def test_empirical_loss_at_inverse_hessian():
    s = diag_sample([2.0, 0.5], 10_000, np.random.default_rng(0))
    loss = fitting_loss(DiagPreconditioner.from_p([0.5, 2.0]), s)
    assert abs(loss - 5.0) <= 0.05 * 5.0


def test_empty_sample():
    with pytest.raises(InvalidDimensionError):
        FittingSample([])


def test_mixed_dimensions():
    with pytest.raises(InvalidDimensionError):
        FittingSample([CurvaturePair([1.0], [1.0]), CurvaturePair([1.0, 2.0], [1.0, 2.0])])


def test_dimension_mismatch_with_preconditioner():
    s = FittingSample([CurvaturePair([1.0, 1.0], [1.0, 1.0])])
    with pytest.raises(InvalidDimensionError):
        fitting_loss(DiagPreconditioner(3), s)


def test_loss_strictly_positive():
    rng = np.random.default_rng(1)
    s = diag_sample([3.0, -1.0, 0.2], 10, rng)
    for pc in (DiagPreconditioner(3), XMatPreconditioner(3), LraPreconditioner(3, rank=1),
               DensePreconditioner(3)):
        assert fitting_loss(pc, s) > 0


@pytest.mark.parametrize("s", [0.5, 3.0, 17.0])
def test_loss_scales_quadratically_with_pairs(s):
    rng = np.random.default_rng(2)
    V = rng.standard_normal((5, 4))
    Hv = rng.standard_normal((5, 4))
    pc = DensePreconditioner.from_matrix(np.eye(4) + 0.1 * rng.standard_normal((4, 4)))
    base = fitting_loss(pc, FittingSample.from_arrays(V, Hv))
    scaled = fitting_loss(pc, FittingSample.from_arrays(s * V, s * Hv))
    np.testing.assert_allclose(scaled, s * s * base, rtol=1e-14)


def test_exact_loss_identity():
    for n in (1, 3, 7):
        assert exact_fitting_loss(np.eye(n), np.eye(n)) == 2 * n


def test_exact_loss_diagonal_arithmetic():
    assert exact_fitting_loss(np.diag([0.5, 2.0]), np.diag([2.0, 0.5])) == pytest.approx(5.0, rel=1e-15)


def test_exact_loss_rejects_indefinite_p():
    with pytest.raises(SingularityError):
        exact_fitting_loss(np.diag([1.0, -1.0]), np.eye(2))


def test_exact_loss_shape_and_symmetry_checks():
    with pytest.raises(InvalidDimensionError):
        exact_fitting_loss(np.eye(2), np.eye(3))
    with pytest.raises(InvalidParameterError):
        as_dense_symmetric(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(OracleCapError):
        as_dense_symmetric(np.eye(4), cap=3)


def test_diagonal_minimizer_beats_random_diagonals():
    rng = np.random.default_rng(3)
    H = random_symmetric(rng.uniform(0.1, 3.0, 8), rng)
    # per-coordinate minimizer of sum_i p_i (H^2)_ii + 1/p_i
    p_star = 1.0 / np.sqrt(np.diag(H @ H))
    best = exact_fitting_loss(np.diag(p_star), H)
    for _ in range(100):
        p = np.exp(rng.normal(np.log(p_star), 1.0))
        assert best <= exact_fitting_loss(np.diag(p), H)


@pytest.mark.parametrize("n", [1, 4, 8])
def test_optimum_minimizes_exact_loss(n):
    rng = np.random.default_rng(n)
    H = random_symmetric(rng.uniform(-2, 2, n) + 0.1 * np.sign(rng.standard_normal(n)), rng)
    P = closed_form_optimum(H)
    best = exact_fitting_loss(P, H)
    for _ in range(20):
        A = 0.1 * rng.standard_normal((n, n))
        E = np.eye(n) + A
        Pp = E @ P @ E.T
        assert exact_fitting_loss(0.5 * (Pp + Pp.T), H) >= best - 1e-10


def test_optimum_value_is_twice_trace_abs_h():
    rng = np.random.default_rng(4)
    lam = np.array([-3.0, -0.5, 0.2, 1.0, 4.0])
    H = random_symmetric(lam, rng)
    assert exact_fitting_loss(closed_form_optimum(H), H) == pytest.approx(2 * np.abs(lam).sum(), rel=1e-12)


def test_optimum_examples():
    np.testing.assert_allclose(closed_form_optimum(np.eye(3)), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(closed_form_optimum(np.diag([-3.0, 2.0])), np.diag([1 / 3, 1 / 2]), atol=1e-15)
    np.testing.assert_allclose(closed_form_optimum(np.array([[1.0]]), 3.0), [[0.5]], atol=1e-15)


def test_optimum_errors():
    with pytest.raises(SingularityError):
        closed_form_optimum(np.diag([1.0, 0.0]))
    with pytest.raises(InvalidParameterError):
        closed_form_optimum(np.eye(2), -1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.floats(0.01, 10.0), st.integers(0, 2**31 - 1))
def test_noise_shrinks_optimum(n, noise_var, seed):
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0.1, 3, n) * rng.choice([-1, 1], n)
    H = random_symmetric(lam, rng)
    clean = closed_form_optimum(H)
    noisy = closed_form_optimum(H, noise_var)
    # the eigenvectors are shared, so the ordering holds eigenvalue-wise and in Loewner order
    assert np.all(np.linalg.eigvalsh(clean - noisy) >= -1e-12)
    np.testing.assert_array_less(np.linalg.eigvalsh(noisy), np.linalg.eigvalsh(clean) + 1e-12)


def test_noisy_optimum_minimizes_noisy_loss():
    rng = np.random.default_rng(5)
    H = random_symmetric(rng.uniform(0.2, 2, 5), rng)
    P = closed_form_optimum(H, 0.7)
    best = exact_fitting_loss(P, H, 0.7)
    for _ in range(20):
        E = np.eye(5) + 0.05 * rng.standard_normal((5, 5))
        assert exact_fitting_loss(E @ P @ E.T, H, 0.7) >= best - 1e-10


def test_sample_estimate_identity_hessian():
    rng = np.random.default_rng(6)
    V = rng.standard_normal((10_000, 4))
    P = closed_form_sample_estimate(FittingSample.from_arrays(V, V))
    assert np.linalg.norm(P - np.eye(4)) < 0.1


def test_sample_estimate_single_pair_is_singular():
    s = FittingSample([CurvaturePair([1.0, 2.0], [1.0, 2.0])])
    with pytest.raises(SingularityError):
        closed_form_sample_estimate(s)


def test_sample_estimate_diagonal_hessian():
    P = closed_form_sample_estimate(diag_sample([2.0, 0.5], 10_000, np.random.default_rng(7)))
    np.testing.assert_allclose(np.diag(P), [0.5, 2.0], rtol=0.1)
    assert abs(P[0, 1]) < 0.1 * 0.5


def test_sample_estimate_reduced_precision_close_to_full():
    s = diag_sample([3.0, 1.0, 0.3], 2000, np.random.default_rng(8))
    P64 = closed_form_sample_estimate(s)
    P32 = closed_form_sample_estimate(s, dtype=np.float32)
    np.testing.assert_array_equal(P32, P32.T)
    np.testing.assert_allclose(P32, P64, rtol=1e-4, atol=1e-5)


def test_sample_estimate_cap():
    s = diag_sample(np.ones(5), 10, np.random.default_rng(9))
    with pytest.raises(OracleCapError):
        closed_form_sample_estimate(s, cap=4)

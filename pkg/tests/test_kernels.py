import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvgp.errors import DomainError, ShapeError
from mvgp.kernels import KernelParams, KernelSpec, eval_kernel, eval_kernel_diag, kernel_param_grads


def test_matern_zero_distance_equals_variance():
    spec = KernelSpec("matern32", (0,), is_correlation=False)
    X = np.array([[0.3]])
    for ls in (0.1, 1.0, 17.0):
        assert eval_kernel(spec, KernelParams([ls], 2.0), X)[0, 0] == pytest.approx(2.0, abs=1e-15)


def test_gaussian_unit_distance():
    spec = KernelSpec("gaussian", (0,))
    K = eval_kernel(spec, KernelParams([1.0]), np.array([[0.0]]), np.array([[1.0]]))
    assert K[0, 0] == pytest.approx(0.60653065971263342, rel=1e-14)


def test_matern_two_dimensional_value():
    spec = KernelSpec("matern32", (0, 1))
    K = eval_kernel(spec, KernelParams([1.0, 1.0]), np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]))
    # (1 + sqrt 3) exp(-sqrt 3) from mpmath at 30 digits
    assert K[0, 0] == pytest.approx(0.48335772459650765, rel=1e-14)


def test_linear_zero_input():
    spec = KernelSpec("linear", (0,), is_correlation=False)
    K = eval_kernel(spec, KernelParams(None, 3.0), np.array([[0.0]]), np.array([[5.0]]))
    assert K[0, 0] == 0.0


def test_categorical_exact_match():
    spec = KernelSpec("categorical", (0,), is_correlation=False)
    X = np.array([[0.0], [1.0], [1.0], [2.0]])
    K = eval_kernel(spec, KernelParams(None, 1.5), X)
    assert np.array_equal(K, 1.5 * (X[:, 0][:, None] == X[:, 0][None, :]))
    with pytest.raises(DomainError):
        eval_kernel(spec, KernelParams(None, 1.0), np.array([[0.5]]))


def test_reads_only_selected_columns(rng):
    X = rng.normal(size=(6, 4))
    spec = KernelSpec("gaussian", (1, 3))
    K1 = eval_kernel(spec, KernelParams([0.7, 1.3]), X)
    X2 = X.copy()
    X2[:, [0, 2]] = rng.normal(size=(6, 2))
    assert np.array_equal(K1, eval_kernel(spec, KernelParams([0.7, 1.3]), X2))


@pytest.mark.parametrize("family", ["matern32", "gaussian", "linear", "categorical"])
def test_log_variance_derivative_is_kernel(family, rng):
    spec = KernelSpec(family, (0,), is_correlation=False)
    X = rng.integers(0, 3, size=(5, 1)).astype(float) if family == "categorical" else rng.normal(size=(5, 1))
    p = KernelParams([0.8] if spec.n_lengthscales else None, 2.5)
    grads = dict(kernel_param_grads(spec, p, X))
    assert np.array_equal(grads["variance"], eval_kernel(spec, p, X))


@pytest.mark.parametrize("family", ["matern32", "gaussian"])
def test_lengthscale_gradient_finite_difference(family, rng):
    spec = KernelSpec(family, (0, 1), is_correlation=False)
    X = rng.normal(size=(7, 2))
    X2 = rng.normal(size=(4, 2))
    ls = np.array([0.9, 1.7])
    p = KernelParams(ls, 1.3)
    grads = kernel_param_grads(spec, p, X, X2)
    h = 1e-5
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        Kp = eval_kernel(spec, KernelParams(ls * np.exp(e), 1.3), X, X2)
        Km = eval_kernel(spec, KernelParams(ls * np.exp(-e), 1.3), X, X2)
        fd = (Kp - Km) / (2 * h)
        np.testing.assert_allclose(grads[d][1], fd, rtol=1e-6, atol=1e-10)


def test_diag_matches_full(rng):
    X = rng.normal(size=(8, 3))
    for fam in ("matern32", "gaussian", "linear"):
        spec = KernelSpec(fam, (0, 2), is_correlation=False)
        p = KernelParams([1.0, 2.0] if spec.n_lengthscales else None, 0.7)
        np.testing.assert_allclose(eval_kernel_diag(spec, p, X), np.diag(eval_kernel(spec, p, X)),
                                   rtol=1e-14)


def test_invalid_parameters():
    with pytest.raises(DomainError):
        KernelSpec("rbf", (0,))
    spec = KernelSpec("matern32", (0,))
    with pytest.raises(DomainError):
        eval_kernel(spec, KernelParams([-1.0]), np.zeros((2, 1)))
    with pytest.raises(ShapeError):
        eval_kernel(spec, KernelParams([1.0, 1.0]), np.zeros((2, 1)))
    with pytest.raises(ShapeError):
        eval_kernel(KernelSpec("matern32", (3,)), KernelParams([1.0]), np.zeros((2, 1)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["matern32", "gaussian", "linear"]))
def test_kernel_matrix_symmetric_psd(seed, family):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(10, 2))
    spec = KernelSpec(family, (0, 1))
    p = KernelParams(rng.uniform(0.2, 3.0, 2) if spec.n_lengthscales else None)
    K = eval_kernel(spec, p, X)
    assert np.array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() > -1e-10 * max(1.0, np.abs(K).max())
    if family != "linear":
        assert np.all(K <= 1.0 + 1e-15) and np.allclose(np.diag(K), 1.0)

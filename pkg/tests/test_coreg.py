import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from conftest import make_coreg, make_layout, random_corr
from mvgp.coreg import (CoregSet, Layout, LMCTerm, assemble_cross_cov, assemble_lmc_cov,
                        assemble_prior_diag, corr_delta_grads, corr_log_density, corr_prior_logpdf,
                        corr_to_delta, cov_grads, delta_to_corr, log_abs_jacobian, n_pairs,
                        pair_indices)
from mvgp.errors import DomainError, ShapeError, SizeError
from mvgp.kernels import KernelParams, KernelSpec, eval_kernel


# -- transform -----------------------------------------------------------


def test_zero_coordinates_give_identity():
    for J in (1, 2, 3, 6):
        assert np.array_equal(delta_to_corr(np.zeros(n_pairs(J)), J).R, np.eye(J))
        assert np.array_equal(corr_to_delta(np.eye(J)), np.zeros(n_pairs(J)))


def test_saturation_stays_positive_definite():
    R = delta_to_corr([20.0], 2).R
    assert 1 - 1e-8 < R[0, 1] < 1.0
    np.linalg.cholesky(R)
    R = delta_to_corr(np.full(n_pairs(5), 15.0), 5).R
    np.linalg.cholesky(R)


def test_scalar_inversion():
    R = np.array([[1.0, 0.6], [0.6, 1.0]])
    assert corr_to_delta(R)[0] == pytest.approx(np.log(4.0), rel=1e-14)


@pytest.mark.parametrize("J", [2, 3, 5, 8])
def test_round_trip_from_coordinates(J, rng):
    for _ in range(100):
        d = rng.normal(0, 1.5, n_pairs(J))
        np.testing.assert_allclose(corr_to_delta(delta_to_corr(d, J).R), d, atol=1e-10)


def test_round_trip_from_matrix(rng):
    for _ in range(20):
        R = random_corr(5, rng)
        np.testing.assert_allclose(delta_to_corr(corr_to_delta(R), 5).R, R, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_transform_gives_valid_correlation(J, seed):
    d = np.random.default_rng(seed).normal(0, 3, n_pairs(J))
    R = delta_to_corr(d, J).R
    assert np.array_equal(np.diag(R), np.ones(J))
    assert np.allclose(R, R.T, atol=0)
    assert np.linalg.eigvalsh(R).min() > 0
    assert np.all(np.abs(R) <= 1)


def test_invalid_matrices():
    with pytest.raises(DomainError):
        corr_to_delta(np.array([[1.0, 1.2], [1.2, 1.0]]))
    with pytest.raises(DomainError):
        corr_to_delta(np.array([[2.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(ShapeError):
        delta_to_corr(np.zeros(2), 3)


def test_corr_gradient_finite_difference(rng):
    J = 4
    d = rng.normal(0, 1, n_pairs(J))
    G = corr_delta_grads(d, J)
    h = 1e-6
    for k in range(d.size):
        e = np.zeros_like(d)
        e[k] = h
        fd = (delta_to_corr(d + e, J).R - delta_to_corr(d - e, J).R) / (2 * h)
        np.testing.assert_allclose(G[k], fd, atol=1e-8)


# -- prior ---------------------------------------------------------------


def test_two_species_density_is_one_half():
    for rho in (-0.99, -0.3, 0.0, 0.5, 0.97):
        R = np.array([[1.0, rho], [rho, 1.0]])
        assert np.exp(corr_log_density(R)) == pytest.approx(0.5, rel=1e-13)


def test_two_species_density_integrates_in_coordinates():
    val, _ = quad(lambda d: np.exp(corr_prior_logpdf(delta_to_corr([d], 2))[0]), -35, 35,
                 limit=200)
    assert val == pytest.approx(1.0, abs=1e-9)


def test_jacobian_matches_finite_difference_determinant(rng):
    J = 4
    d = rng.normal(0, 1, n_pairs(J))
    rows, cols = pair_indices(J)
    G = corr_delta_grads(d, J)[:, rows, cols]
    val, _ = log_abs_jacobian(d, J)
    assert val == pytest.approx(np.linalg.slogdet(G)[1], abs=1e-10)


@pytest.mark.parametrize("v", [None, 2.0, 7.5])
def test_prior_gradient_finite_difference(v, rng):
    J = 4
    d = rng.normal(0, 1, n_pairs(J))
    _, g = corr_prior_logpdf(delta_to_corr(d, J), v)
    h = 1e-6
    fd = np.empty_like(d)
    for k in range(d.size):
        e = np.zeros_like(d)
        e[k] = h
        fd[k] = (corr_prior_logpdf(delta_to_corr(d + e, J), v)[0]
                 - corr_prior_logpdf(delta_to_corr(d - e, J), v)[0]) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


# -- assembly ------------------------------------------------------------


def _kron_oracle(coreg, layout, n):
    """Sigma_0 (x) 1 + sum_l U_l (x) K_l built with np.kron on a balanced design."""
    J = coreg.J
    pts = layout.points[:n]
    C = np.kron(np.diag(coreg.offset_var), np.ones((n, n)))
    for t in coreg.terms:
        Lf = t.chol()
        for l in range(J):
            K = eval_kernel(t.kernel, KernelParams(t.lengthscales[l]), pts)
            C += np.kron(np.outer(Lf[:, l], Lf[:, l]), K)
    return C


def test_balanced_design_matches_kronecker(rng):
    J, n = 3, 12
    coreg = make_coreg(J, rng, coupled=True, n_cov=2)
    layout = make_layout(n, J, rng, n_cov=2, balanced=True)
    C = assemble_lmc_cov(coreg, layout)
    np.testing.assert_allclose(C, _kron_oracle(coreg, layout, n), atol=1e-12)


def test_uncoupled_is_block_diagonal(rng):
    J = 3
    coreg = make_coreg(J, rng, coupled=False)
    layout = make_layout(8, J, rng)
    C = assemble_lmc_cov(coreg, layout)
    s = layout.species
    assert np.all(C[s[:, None] != s[None, :]] == 0.0)


def test_single_species_reduces_to_univariate_sum(rng):
    coreg = make_coreg(1, rng)
    layout = make_layout(10, 1, rng)
    P = layout.points
    expected = coreg.offset_var[0] * np.ones((10, 10))
    for t in coreg.terms:
        expected += t.variances[0] * eval_kernel(t.kernel, KernelParams(t.lengthscales[0]), P)
    np.testing.assert_allclose(assemble_lmc_cov(coreg, layout), expected, atol=1e-14)


def test_cross_cov_diagonal_term_has_single_block_column(rng):
    J = 3
    coreg = make_coreg(J, rng, coupled=False)
    train = make_layout(6, J, rng)
    test = Layout(np.array([1, 1]), rng.uniform(0, 3, (2, 3)))
    K = assemble_cross_cov(coreg, test, train, target="x1")
    assert np.all(K[:, train.species != 1] == 0.0)
    assert np.all(K[:, train.species == 1] != 0.0)


def test_cross_cov_coupled_rows_match_lmc_formula(rng):
    J = 3
    coreg = make_coreg(J, rng, coupled=True)
    train = make_layout(5, J, rng)
    x = rng.uniform(0, 3, (1, 3))
    t = coreg.term("x1")
    Lf = t.chol()
    for j in range(J):
        K = assemble_cross_cov(coreg, Layout([j], x), train, target="x1")[0]
        expected = np.zeros(len(train))
        for l in range(J):
            k = eval_kernel(t.kernel, KernelParams(t.lengthscales[l]), x, train.points)[0]
            expected += Lf[j, l] * Lf[train.species, l] * k
        np.testing.assert_allclose(K, expected, atol=1e-14)


def test_cross_cov_monte_carlo(rng):
    """Empirical covariance of LMC draws agrees with the assembled covariance."""
    J, n = 2, 5
    coreg = make_coreg(J, rng, coupled=True, n_cov=0)
    t = coreg.terms[0]
    layout = Layout(np.repeat(np.arange(J), n), rng.uniform(0, 3, (J * n, 2)))
    Lf = t.chol()
    draws = np.zeros((1_000_000, J * n))
    for l in range(J):
        K = eval_kernel(t.kernel, KernelParams(t.lengthscales[l]), layout.points)
        g = rng.multivariate_normal(np.zeros(J * n), K, size=1_000_000, method="cholesky")
        draws += g * Lf[layout.species, l]
    emp = np.cov(draws, rowvar=False)
    C = assemble_lmc_cov(coreg, layout, target="spatial")
    big = np.abs(C) > 0.3
    np.testing.assert_allclose(emp[big], C[big], rtol=0.02)


def test_components_sum_to_full(rng):
    J = 3
    coreg = make_coreg(J, rng, coupled=True, n_cov=2)
    layout = make_layout(6, J, rng, n_cov=2)
    parts = sum(assemble_lmc_cov(coreg, layout, target=t) for t in ("offset", "spatial", "x1", "x2"))
    np.testing.assert_allclose(parts, assemble_lmc_cov(coreg, layout), atol=1e-13)
    np.testing.assert_allclose(assemble_prior_diag(coreg, layout),
                               np.diag(assemble_lmc_cov(coreg, layout)), atol=1e-13)
    with pytest.raises(DomainError):
        assemble_lmc_cov(coreg, layout, target="nope")


def test_unshared_covariate_structural_zeros(rng):
    J = 3
    coreg = make_coreg(J, rng, coupled=True, members=[True, False, True])
    layout = make_layout(5, J, rng)
    C = assemble_lmc_cov(coreg, layout, target="x1")
    assert np.all(C[layout.species == 1] == 0.0)
    assert np.all(C[:, layout.species == 1] == 0.0)
    t = coreg.term("x1")
    assert t.active_pairs().tolist() == [False, True, False]


def test_size_guard(rng):
    coreg = make_coreg(2, rng)
    layout = make_layout(10, 2, rng)
    with pytest.raises(SizeError):
        assemble_lmc_cov(coreg, layout, max_elements=100)


def test_cov_grads_finite_difference(rng):
    """Each derivative block against a finite difference of the assembled covariance."""
    J = 3
    coreg = make_coreg(J, rng, coupled=True, members=[True, True, False])
    layout = make_layout(4, J, rng)
    n = len(layout)
    h = 1e-6

    def perturbed(key, s):
        import copy
        c = copy.deepcopy(coreg)
        if key[0] == "offset":
            c.offset_var[key[1]] *= np.exp(s)
            return c
        t = c.term(key[0])
        if key[1] == "variance":
            t.variances[key[2]] *= np.exp(s)
        elif key[1] == "lengthscale":
            t.lengthscales[key[2]][key[3]] *= np.exp(s)
        else:
            t.delta[key[2]] += s
        return c

    seen = set()
    for g in cov_grads(coreg, layout):
        seen.add(g.key)
        fd = (assemble_lmc_cov(perturbed(g.key, h), layout)
              - assemble_lmc_cov(perturbed(g.key, -h), layout)) / (2 * h)
        np.testing.assert_allclose(g.full(n), fd, atol=1e-8, err_msg=str(g.key))
    # masked pairs involving the non-member species produce no derivative
    assert ("x1", "delta", 0) in seen
    assert ("x1", "delta", 1) not in seen and ("x1", "delta", 2) not in seen
    assert ("spatial", "delta", 2) in seen


def test_term_lookup():
    t = LMCTerm("spatial", KernelSpec("matern32", (0, 1)), [True], [1.0], [np.ones(2)], role="spatial")
    c = CoregSet([1.0], [t])
    assert c.sigma_eps is t and c.term("spatial") is t and c.sigma_h == []


def test_five_species_marginals_are_uniform():
    """Metropolis draws in coordinate space give uniform pairwise correlations."""
    from scipy import stats

    from mvgp.coreg import corr_prior_logpdf_batch

    rng = np.random.default_rng(55)
    J, chains = 5, 5000
    d = rng.normal(0, 1, (chains, n_pairs(J)))
    lp = corr_prior_logpdf_batch(d, J)
    for _ in range(600):
        prop = d + 0.9 * rng.standard_normal(d.shape)
        lq = corr_prior_logpdf_batch(prop, J)
        acc = np.log(rng.uniform(size=chains)) < lq - lp
        d[acc], lp[acc] = prop[acc], lq[acc]
    rows, cols = pair_indices(J)
    Rs = np.array([delta_to_corr(x, J).R for x in d])
    for k in (0, len(rows) - 1):
        rho = Rs[:, rows[k], cols[k]]
        assert stats.kstest(rho, stats.uniform(-1, 2).cdf).statistic < 0.05

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mvgp.errors import DomainError
from mvgp.likelihoods import (JointLikelihood, ObsModel, loglik, loglik_d3, loglik_grad_hess,
                              loglik_param_derivs, validate)


def test_binomial_symmetric_value():
    v = loglik(ObsModel("binomial"), 3, 10, 0.0)
    assert v == pytest.approx(np.log(120) - 10 * np.log(2), rel=1e-14)
    # the commonly quoted rounding -2.1442 is off in the fourth decimal
    assert v == pytest.approx(-2.1442, abs=5e-4)


def test_negbin_poisson_limit():
    v = loglik(ObsModel("negbin", r=1e8), 2, 1, 0.0)
    assert v == pytest.approx(np.log(1 / (2 * np.e)), abs=1e-6)


def test_poisson_zero_count():
    assert loglik(ObsModel("poisson"), 0, 1, 0.0) == pytest.approx(-1.0, abs=1e-15)


@pytest.mark.parametrize("kind", ["binomial", "negbin", "poisson", "gaussian"])
def test_matches_scipy(kind, rng):
    f = rng.normal(0, 1.5, 50)
    z = rng.integers(1, 20, 50).astype(float)
    if kind == "binomial":
        y = rng.binomial(z.astype(int), 0.4).astype(float)
        ref = stats.binom.logpmf(y, z, 1 / (1 + np.exp(-f)))
        m = ObsModel(kind)
    elif kind == "negbin":
        y = rng.poisson(3, 50).astype(float)
        mu = z * np.exp(f)
        ref = stats.nbinom.logpmf(y, 2.5, 2.5 / (2.5 + mu))
        m = ObsModel(kind, r=2.5)
    elif kind == "poisson":
        y = rng.poisson(3, 50).astype(float)
        ref = stats.poisson.logpmf(y, z * np.exp(f))
        m = ObsModel(kind)
    else:
        y = rng.normal(size=50)
        ref = stats.norm.logpdf(y, f, np.sqrt(0.7))
        m = ObsModel(kind, noise=0.7)
    np.testing.assert_allclose(loglik(m, y, z, f), ref, rtol=1e-11, atol=1e-12)


def test_binomial_gradient_zero_at_half():
    g, _ = loglik_grad_hess(ObsModel("binomial"), 5, 10, 0.0)
    assert g == 0.0


def test_gaussian_derivatives_exact():
    m = ObsModel("gaussian", noise=0.5)
    g, h = loglik_grad_hess(m, 1.3, 1, 0.2)
    assert g == pytest.approx((1.3 - 0.2) / 0.5, rel=1e-15) and h == -2.0
    assert loglik_d3(m, 1.3, 1, 0.2) == 0.0


def _fd(fun, x, h):
    return (fun(x + h) - fun(x - h)) / (2 * h)


@pytest.mark.parametrize("kind", ["binomial", "negbin", "poisson"])
def test_derivatives_finite_difference(kind, rng):
    n = 100
    f = rng.normal(0, 2, n)
    z = rng.integers(1, 15, n).astype(float)
    r = rng.uniform(0.3, 30, n)
    y = np.minimum(rng.poisson(4, n), z).astype(float)
    h = 1e-5
    for i in range(n):
        m = ObsModel(kind, r=r[i]) if kind == "negbin" else ObsModel(kind)
        g, H = loglik_grad_hess(m, y[i], z[i], f[i])
        d3 = loglik_d3(m, y[i], z[i], f[i])
        assert g == pytest.approx(_fd(lambda t: loglik(m, y[i], z[i], t), f[i], h), rel=1e-6, abs=1e-8)
        assert H == pytest.approx(_fd(lambda t: loglik_grad_hess(m, y[i], z[i], t)[0], f[i], h),
                                  rel=1e-6, abs=1e-8)
        assert d3 == pytest.approx(_fd(lambda t: loglik_grad_hess(m, y[i], z[i], t)[1], f[i], h),
                                   rel=1e-6, abs=1e-8)


@pytest.mark.parametrize("kind,value", [("negbin", 3.0), ("gaussian", 0.4)])
def test_parameter_derivatives_finite_difference(kind, value, rng):
    f = rng.normal(0, 1, 20)
    y = rng.poisson(2, 20).astype(float) if kind == "negbin" else rng.normal(size=20)
    z = np.ones(20)
    m = ObsModel(kind, **{ObsModel(kind, r=1, noise=1).param_name: value})
    dlp, dd1, dd2 = loglik_param_derivs(m, y, z, f)
    h = 1e-5
    mp, mm = m.with_param(value * np.exp(h)), m.with_param(value * np.exp(-h))
    np.testing.assert_allclose(dlp, (loglik(mp, y, z, f) - loglik(mm, y, z, f)) / (2 * h), rtol=1e-6)
    gp, hp = loglik_grad_hess(mp, y, z, f)
    gm, hm = loglik_grad_hess(mm, y, z, f)
    np.testing.assert_allclose(dd1, (gp - gm) / (2 * h), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(dd2, (hp - hm) / (2 * h), rtol=1e-6, atol=1e-9)
    assert loglik_param_derivs(ObsModel("binomial"), y, z, f) is None


def test_extreme_latent_values_are_finite():
    for m, y, z in [(ObsModel("binomial"), 3, 5), (ObsModel("negbin", r=2.0), 4, 1)]:
        for f in (-700.0, 700.0):
            assert np.isfinite(loglik(m, y, z, f))
            assert all(np.isfinite(loglik_grad_hess(m, y, z, f)))


def test_validation():
    with pytest.raises(DomainError):
        validate(ObsModel("binomial"), [3, 6], [5, 5])
    with pytest.raises(DomainError):
        validate(ObsModel("poisson"), [1.5], [1])
    with pytest.raises(DomainError):
        validate(ObsModel("negbin", r=1.0), [-1], [1])
    with pytest.raises(DomainError):
        ObsModel("negbin")
    with pytest.raises(DomainError):
        ObsModel("weibull")
    assert ObsModel("binomial-logit").kind == "binomial"
    assert ObsModel("negative-binomial", r=2).kind == "negbin"


def test_joint_likelihood_groups(rng):
    models = [ObsModel("binomial"), ObsModel("negbin", r=2.0)]
    species = np.array([0, 1, 0, 1, 1])
    y = np.array([1, 4, 0, 0, 2.0])
    z = np.array([3, 1, 2, 1, 1.0])
    lik = JointLikelihood(models, species, y, z)
    f = rng.normal(size=5)
    manual = [loglik(models[s], y[i], z[i], f[i]) for i, s in enumerate(species)]
    np.testing.assert_allclose(lik.pointwise(f), manual, rtol=1e-14)
    keys = [k for k, *_ in lik.param_grads(f)]
    assert keys == [("lik", 1)]
    with pytest.raises(DomainError):
        JointLikelihood(models, species, np.array([4, 4, 0, 0, 2.0]), z)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 50), st.integers(1, 50), st.floats(-30, 30), st.floats(0.05, 1e4))
def test_log_concave_in_latent(y, z, f, r):
    """All count likelihoods have non-positive curvature in f."""
    y = min(y, z)
    for m in (ObsModel("binomial"), ObsModel("poisson"), ObsModel("negbin", r=r)):
        _, H = loglik_grad_hess(m, float(y), float(z), f)
        assert H <= 0.0

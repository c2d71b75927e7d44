import numpy as np
import pytest

from mvgp import MVGP, simulate
from mvgp.errors import DomainError
from mvgp.simulate import sample_latent


def test_seed_fixed_runs_are_bitwise_identical():
    for kind in ("spatial-two-species", "lmc-generic"):
        a, b = simulate(kind, seed=11, n_per_species=20), simulate(kind, seed=11, n_per_species=20)
        assert np.array_equal(a.data.y, b.data.y) and np.array_equal(a.f, b.f)
        assert np.array_equal(a.data.coords, b.data.coords) and np.array_equal(a.x, b.x)
    c = simulate("lmc-generic", seed=12, n_per_species=20)
    assert not np.array_equal(a.f, c.f)


def test_independent_fields_have_small_empirical_correlation():
    """Sampling band of a correlation over 200 nearly independent sites."""
    inside = []
    for seed in range(200):
        sim = simulate("spatial-two-species", seed=seed, rho=0.0, lengthscale=0.3,
                       n_per_species=200, shared_sites=True)
        f = sim.f
        inside.append(abs(np.corrcoef(f[:200], f[200:])[0, 1]) < 0.2)
    assert np.mean(inside) >= 0.95


def test_latent_marginal_variance_matches_prior(rng):
    sim = simulate("lmc-generic", seed=5, n_per_species=10)
    m = MVGP(sim.config, sim.data, x=sim.x)
    coreg, _ = m.params()
    C = m.prior_cov(coreg)
    # offset + spatial + both covariate components at every site
    expected = np.full(len(sim.data), 0.25 + 0.3 + 2 * 1.5)
    np.testing.assert_allclose(np.diag(C), expected, rtol=1e-6)
    F = sample_latent(C, rng, 10_000)
    v = F.var(axis=1)
    # chi-square band: sd of a variance estimate is sqrt(2 / n) relative
    assert np.all(np.abs(v / expected - 1) < 5 * np.sqrt(2 / 10_000))


def test_truth_vector_encodes_generator_settings():
    sim = simulate("spatial-two-species", seed=0, rho=0.6, variance=2.0, lengthscale=1.5)
    m = MVGP(sim.config, sim.data, x=sim.x)
    assert m.correlation("spatial")[0, 1] == pytest.approx(0.6, abs=1e-12)
    d = m.describe()
    assert d["spatial/variance/0"] == pytest.approx(2.0)
    assert d["spatial/lengthscale/1/0"] == pytest.approx(1.5)


def test_observations_respect_models():
    sim = simulate("lmc-generic", seed=2, n_per_species=[15, 15, 10],
                   models=["binomial", "negbin", "gaussian"])
    ds = sim.data
    b = ds.species == 0
    assert np.all((ds.y[b] >= 0) & (ds.y[b] <= ds.z[b]))
    assert np.all(ds.y[ds.species == 1] == np.round(ds.y[ds.species == 1]))
    assert len(ds) == 40 and sim.regions.max() <= 4


def test_errors(rng):
    with pytest.raises(DomainError):
        simulate("unknown")
    with pytest.raises(DomainError):
        sample_latent(-np.eye(3), rng)
    with pytest.raises(DomainError):
        simulate("lmc-generic", n_per_species=[5, 6, 5], shared_sites=True)

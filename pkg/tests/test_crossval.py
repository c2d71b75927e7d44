import json

import numpy as np
import pytest
from scipy import stats

from mvgp import (MVGP, CVReport, Dataset, FoldSpec, ModelConfig, SpeciesConfig, kfold_cv,
                  log_predictive_density, loo_cv_laplace, paired_difference, simulate,
                  structured_folds)
from mvgp.errors import FoldError
from mvgp.likelihoods import ObsModel


def _spatial_dataset(rng, n_per, kinds, noise=0.3):
    J = len(kinds)
    species = np.repeat(np.arange(J), n_per)
    coords = rng.uniform(0, 5, (J * n_per, 2))
    f = np.sin(coords[:, 0]) + 0.5 * np.cos(coords[:, 1]) + 0.3 * species
    y = np.empty(f.size)
    z = np.ones(f.size)
    for j, k in enumerate(kinds):
        idx = species == j
        if k == "gaussian":
            y[idx] = f[idx] + np.sqrt(noise) * rng.standard_normal(idx.sum())
        elif k == "binomial":
            z[idx] = 6
            y[idx] = rng.binomial(6, 1 / (1 + np.exp(-f[idx])))
        else:
            y[idx] = rng.poisson(np.exp(f[idx]))
    names = [f"sp{j}" for j in range(J)]
    ds = Dataset(names, species, [f"s{i}" for i in range(f.size)], coords, y, z, np.zeros((f.size, 0)), [])
    cfg = ModelConfig([SpeciesConfig(n, k, noise=noise) for n, k in zip(names, kinds)], [],
                      include_predictors=False, couple_spatial=True)
    return cfg, ds


def test_lpd_gaussian_closed_form_and_quadrature_agree():
    y, m, v = np.array([0.3, -1.0]), np.array([0.1, 0.4]), np.array([0.5, 2.0])
    ref = stats.norm.logpdf(y, m, np.sqrt(v + 0.2))
    np.testing.assert_allclose(log_predictive_density(ObsModel("gaussian", noise=0.2), y, 1, m, v), ref,
                               rtol=1e-14)


@pytest.mark.parametrize("kind", ["binomial", "negbin", "poisson"])
def test_lpd_quadrature_against_adaptive_integration(kind, rng):
    from scipy.integrate import quad
    from mvgp.likelihoods import loglik
    model = ObsModel(kind, r=3.0) if kind == "negbin" else ObsModel(kind)
    for _ in range(10):
        m, v = rng.normal(0, 1.5), rng.uniform(0.01, 4)
        z = 7.0 if kind == "binomial" else 2.0
        y = float(rng.integers(0, 7))
        ref = np.log(quad(lambda f: np.exp(loglik(model, y, z, f)) * stats.norm.pdf(f, m, np.sqrt(v)),
                          -40, 40, epsabs=1e-15, epsrel=1e-12, limit=200, points=[m])[0])
        assert log_predictive_density(model, y, z, m, v)[0] == pytest.approx(ref, abs=1e-9)


def test_loo_gaussian_equals_exact(rng):
    cfg, ds = _spatial_dataset(rng, 20, ["gaussian", "gaussian"])
    model = MVGP(cfg, ds).update()
    rep = loo_cv_laplace(model)
    K = model.state.C + np.diag(np.full(len(ds), 0.3))
    Ki = np.linalg.inv(K)
    alpha = Ki @ ds.y
    mu = ds.y - alpha / np.diag(Ki)
    s2 = 1 / np.diag(Ki)
    np.testing.assert_allclose(rep.lpd, stats.norm.logpdf(ds.y, mu, np.sqrt(s2)), rtol=1e-8)
    assert not rep.flagged.any()


def test_loo_binomial_close_to_refit(rng):
    cfg, ds = _spatial_dataset(rng, 30, ["binomial"])
    model = MVGP(cfg, ds)
    model.fit()
    approx = loo_cv_laplace(model)
    brute = kfold_cv(cfg, ds, FoldSpec.loo(len(ds)), refit=False, x=model.x)
    assert np.mean(np.abs(approx.lpd - brute.lpd)) < 0.05


def test_flat_site_cavity_equals_marginal(rng):
    cfg, ds = _spatial_dataset(rng, 10, ["gaussian"])
    # an (almost) flat likelihood: W = 1e-8 at every site
    cfg.species[0].noise = 1e8
    model = MVGP(cfg, ds).update()
    rep = loo_cv_laplace(model)
    np.testing.assert_allclose(rep.pred_mean, model.state.f_hat, atol=1e-6)
    np.testing.assert_allclose(rep.pred_var, model.state.posterior_diag(), rtol=1e-6)


def test_single_fold_without_training_gives_prior_predictive(rng):
    cfg, ds = _spatial_dataset(rng, 8, ["poisson", "binomial"])
    rep = kfold_cv(cfg, ds, FoldSpec(np.zeros(len(ds), int)), refit=False)
    model = MVGP(cfg, ds)
    prior_var = np.diag(model.prior_cov(model.params()[0]))
    np.testing.assert_allclose(rep.pred_mean, 0.0, atol=0)
    np.testing.assert_allclose(rep.pred_var, prior_var, rtol=1e-7)
    with pytest.raises(FoldError):
        kfold_cv(cfg, ds, FoldSpec(np.zeros(len(ds), int)), refit=True)


def test_kfold_is_deterministic(rng):
    sim = simulate("lmc-generic", seed=3, n_per_species=15)
    folds = structured_folds(sim.data, sim.regions)
    a = kfold_cv(sim.config, sim.data, folds, fit_kwargs={"max_iter": 15})
    b = kfold_cv(sim.config, sim.data, folds, fit_kwargs={"max_iter": 15})
    assert np.array_equal(a.lpd, b.lpd)
    assert a.lpd.shape == (45,) and np.all(np.isfinite(a.lpd))


def test_structured_fold_labels(rng):
    ds = Dataset(["a"], np.zeros(10, int), [f"s{i}" for i in range(10)], rng.uniform(size=(10, 2)),
                 np.zeros(10), np.ones(10), np.zeros((10, 0)), [])
    labels = np.array(list("ABCDEABCDE"))
    spec = structured_folds(ds, labels)
    assert spec.n_folds == 5 and spec.labels == list("ABCDE")
    for k, test, _ in spec.folds():
        assert set(labels[test]) == {spec.labels[k]}
    one = structured_folds(ds, ["x"] * 10)
    assert one.degenerate and np.isnan(one.min_distance)
    with pytest.raises(FoldError):
        structured_folds(ds, {f"s{i}": "A" for i in range(9)})
    with pytest.raises(FoldError):
        structured_folds(ds, ["A"] * 9 + [""])


def test_cluster_gap_is_min_distance():
    left = np.column_stack([np.linspace(0, 1, 6), np.zeros(6)])
    right = np.column_stack([np.linspace(3.5, 5, 6), np.zeros(6)])
    ds = Dataset(["a"], np.zeros(12, int), [f"s{i}" for i in range(12)], np.vstack([left, right]),
                 np.zeros(12), np.ones(12), np.zeros((12, 0)), [])
    spec = structured_folds(ds, ["L"] * 6 + ["R"] * 6)
    assert spec.min_distance == pytest.approx(2.5, abs=1e-15)


def test_report_statistics_and_serialization(tmp_path):
    lpd = np.array([-1.0, -2.0, -0.5, -1.5])
    rep = CVReport(lpd, np.array([0, 1, 0, 1]), ["a", "b"], np.arange(4), "loo")
    assert rep.mean == -1.25
    assert rep.se == pytest.approx(np.std(lpd, ddof=1) / 2, rel=1e-15)
    assert rep.per_species()["a"] == (2, -0.75, pytest.approx(0.25))
    rep.to_csv(tmp_path / "r.csv")
    assert json.loads(rep.to_json(tmp_path / "r.json"))["n"] == 4
    other = CVReport(lpd - 0.5, rep.species, rep.species_names, rep.fold, "loo")
    m, s = paired_difference(rep, other)
    assert m == 0.5 and s == 0.0

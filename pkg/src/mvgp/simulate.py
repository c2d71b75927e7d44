"""Synthetic data from the multivariate additive GP prior."""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky
from scipy.special import expit

from .config import CovariateConfig, ModelConfig, SpeciesConfig, expand_variant
from .coreg import corr_to_delta
from .datasets import Dataset
from .errors import DomainError
from .hyperopt import ParamSchema

KINDS = ("spatial-two-species", "lmc-generic")


@dataclass
class SimResult:
    """Simulated dataset with the generating truth.

    Attributes
    ----------
    data : Dataset
    f : ndarray
        True latent values at the observations.
    config : ModelConfig
        Model configuration matching the generating process.
    x : ndarray
        True parameter vector under ``config``'s schema.
    regions : ndarray of int
        Spatial block label of each observation.
    params : dict
        Generator settings.
    """

    data: Dataset
    f: np.ndarray
    config: ModelConfig
    x: np.ndarray
    regions: np.ndarray
    params: dict = field(default_factory=dict)


def sample_latent(C, rng, n_draws=None, jitter=1e-10):
    """Draw from N(0, C) through a Cholesky factor.

    Raises
    ------
    DomainError
        If `C` is not positive definite even after a tiny jitter.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    try:
        L = cholesky(C + jitter * max(np.mean(np.diag(C)), 1e-300) * np.eye(n), lower=True)
    except np.linalg.LinAlgError:
        raise DomainError("requested covariance is not positive definite") from None
    shape = (n,) if n_draws is None else (n, n_draws)
    return L @ rng.standard_normal(shape)


def _observe(kind, f, z, rng, r=None, noise=None):
    if kind == "binomial":
        return rng.binomial(z.astype(int), expit(f)).astype(float)
    if kind == "negbin":
        m = z * np.exp(f)
        return rng.negative_binomial(r, r / (r + m)).astype(float)
    if kind == "poisson":
        return rng.poisson(z * np.exp(f)).astype(float)
    return f + np.sqrt(noise) * rng.standard_normal(f.size)


def _true_vector(model, spec):
    """Packed parameter vector from a dict of constrained values."""
    coreg, models = model.schema.unpack(model.x)
    for j, v in enumerate(spec.get("offset_var", [])):
        coreg.offset_var[j] = v
    for t in coreg.terms:
        ts = spec.get("terms", {}).get(t.role if t.role == "spatial" else "covariate", {})
        if "variance" in ts:
            t.variances[t.members] = np.asarray(ts["variance"], float)[t.members]
        if "lengthscale" in ts:
            for j in t.member_index:
                if t.lengthscales[j] is not None:
                    t.lengthscales[j][:] = ts["lengthscale"]
        if "corr" in ts and t.coupled:
            R = np.asarray(ts["corr"], float)
            idx = t.member_index
            sub = corr_to_delta(R[np.ix_(idx, idx)])
            t.delta[t.active_pairs()] = sub
    for j, s in enumerate(model.config.species):
        models[j] = s.obs_model()
    return ParamSchema(coreg, models).pack(coreg, models), coreg


def simulate(kind, seed=0, **params):
    """Simulate a dataset from the multivariate GP prior.

    Parameters
    ----------
    kind : {"spatial-two-species", "lmc-generic"}
        ``spatial-two-species``: a binomial and a negative binomial species
        with a coupled spatial effect (Gaussian kernel) and no covariates.
        ``lmc-generic``: J species with continuous covariates whose
        responses are coupled across species, plus a coupled Matern spatial
        effect.
    seed : int
    **params
        Overrides of the generator settings (see the ``defaults`` dictionaries
        in the source); the effective settings are returned in
        ``SimResult.params``.

    Returns
    -------
    SimResult
    """
    from .model import MVGP

    if kind not in KINDS:
        raise DomainError(f"unknown simulation kind {kind!r}; choose from {KINDS}")
    rng = np.random.default_rng(seed)
    if kind == "spatial-two-species":
        p = dict(n_per_species=100, rho=0.8, lengthscale=2.0, variance=1.5, offset_var=0.25,
                 intercepts=(-0.5, 1.0), trials=10, r=5.0, extent=10.0, n_regions=5,
                 shared_sites=False)
        p.update(params)
        J = 2
        species_cfg = [SpeciesConfig("species1", "binomial"), SpeciesConfig("species2", "negbin", r=p["r"])]
        cfg = ModelConfig(species_cfg, [], include_spatial=True, include_predictors=False,
                          couple_spatial=True, spatial_kernel="gaussian")
        cov_names = []
        rho = np.array([[1.0, p["rho"]], [p["rho"], 1.0]])
        truth = dict(offset_var=[p["offset_var"]] * J,
                     terms={"spatial": dict(variance=[p["variance"]] * J,
                                            lengthscale=p["lengthscale"], corr=rho)})
        n_j = [p["n_per_species"]] * J
        X = None
    else:
        p = dict(J=3, n_per_species=60, n_covariates=2, rho_h=0.9, rho_eps=0.5,
                 h_variance=1.5, h_lengthscale=1.0, eps_variance=0.3, eps_lengthscale=3.0,
                 offset_var=0.25, intercepts=None, models=None, trials=10, r=5.0, noise=0.2,
                 extent=10.0, n_regions=5, shared_sites=False)
        p.update(params)
        J = int(p["J"])
        kinds = p["models"] or ["binomial"] * J
        species_cfg = [SpeciesConfig(f"sp{j + 1}", kinds[j], r=p["r"], noise=p["noise"])
                       for j in range(J)]
        cov_names = [f"x{k + 1}" for k in range(p["n_covariates"])]
        cfg = ModelConfig(species_cfg, [CovariateConfig(c, "gaussian") for c in cov_names],
                          variant=3)
        cfg = expand_variant(cfg)

        def unif_corr(r):
            R = np.full((J, J), r)
            np.fill_diagonal(R, 1.0)
            return R

        truth = dict(offset_var=[p["offset_var"]] * J,
                     terms={"covariate": dict(variance=[p["h_variance"]] * J,
                                              lengthscale=p["h_lengthscale"],
                                              corr=unif_corr(p["rho_h"])),
                            "spatial": dict(variance=[p["eps_variance"]] * J,
                                            lengthscale=p["eps_lengthscale"],
                                            corr=unif_corr(p["rho_eps"]))})
        n_j = (list(p["n_per_species"]) if np.ndim(p["n_per_species"])
               else [p["n_per_species"]] * J)
        X = None
    n = int(sum(n_j))
    species = np.repeat(np.arange(J), n_j)
    if p["shared_sites"]:
        # every species observed at the same sites
        if len(set(n_j)) != 1:
            raise DomainError("shared_sites needs equal n_per_species")
        site = rng.uniform(0.0, p["extent"], size=(n_j[0], 2))
        coords = np.tile(site, (J, 1))
        site_id = np.tile(np.array([f"s{i}" for i in range(n_j[0])]), J)
    else:
        coords = rng.uniform(0.0, p["extent"], size=(n, 2))
        site_id = np.array([f"s{i}" for i in range(n)])
    if cov_names:
        # covariates vary smoothly in space with site-level noise
        base = site if p["shared_sites"] else coords
        X = np.column_stack([
            np.sin(base[:, 0] / p["extent"] * np.pi * (k + 1) + rng.uniform(0, 2 * np.pi))
            * 1.5 + 0.5 * rng.standard_normal(base.shape[0])
            for k in range(len(cov_names))
        ])
        if p["shared_sites"]:
            X = np.tile(X, (J, 1))
    else:
        X = np.zeros((n, 0))
    z = np.full(n, float(p["trials"]))
    z[np.array([species_cfg[j].model != "binomial" for j in species])] = 1.0
    data = Dataset([s.name for s in species_cfg], species, site_id, coords, np.zeros(n), z, X,
                   cov_names)
    if cov_names:
        # standardize with exact moments so the true length-scale refers to
        # standardized covariates
        data = data.with_standardization()
    model = MVGP(cfg, data)
    x_true, coreg = _true_vector(model, truth)
    C = model.prior_cov(coreg)
    f = sample_latent(C, rng)
    if p.get("intercepts") is not None:
        f = f + np.asarray(p["intercepts"], float)[species]
    y = np.empty(n)
    for j, s in enumerate(species_cfg):
        idx = species == j
        y[idx] = _observe(s.model, f[idx], z[idx], rng, r=s.r, noise=s.noise)
    data.y = y
    nr = int(p["n_regions"])
    regions = np.minimum((coords[:, 0] / p["extent"] * nr).astype(int), nr - 1)
    return SimResult(data, f, cfg, x_true, regions, p)

"""Shared builders for small synthetic instances."""

import numpy as np
import pytest

from mvgp.coreg import CoregSet, Layout, LMCTerm, corr_to_delta, n_pairs
from mvgp.kernels import KernelSpec
from mvgp.likelihoods import JointLikelihood, ObsModel


def random_corr(J, rng):
    A = rng.standard_normal((J, J + 2))
    S = A @ A.T
    d = np.sqrt(np.diag(S))
    return S / np.outer(d, d)


def make_layout(n_per, J, rng, n_cov=1, balanced=False):
    """Species-major layout with 2 coordinates followed by `n_cov` covariates."""
    if balanced:
        pts = rng.uniform(0, 3, size=(n_per, 2 + n_cov))
        P = np.vstack([pts] * J)
    else:
        P = rng.uniform(0, 3, size=(n_per * J, 2 + n_cov))
    species = np.repeat(np.arange(J), n_per)
    return Layout(species, P)


def make_coreg(J, rng, coupled=True, n_cov=1, members=None, spatial="matern32"):
    """Spatial term plus one Gaussian-kernel covariate term per covariate."""
    terms = [LMCTerm("spatial", KernelSpec(spatial, (0, 1)), np.ones(J, bool),
                     rng.uniform(0.5, 1.5, J), [rng.uniform(0.7, 2.0, 2) for _ in range(J)],
                     coupled, corr_to_delta(random_corr(J, rng)) if coupled else None,
                     role="spatial")]
    for k in range(n_cov):
        mem = np.ones(J, bool) if members is None else np.asarray(members, bool)
        ls = [rng.uniform(0.7, 2.0, 1) if m else None for m in mem]
        delta = rng.normal(0, 0.7, n_pairs(J)) if coupled else None
        terms.append(LMCTerm(f"x{k + 1}", KernelSpec("gaussian", (2 + k,)), mem,
                             mem * rng.uniform(0.5, 1.5, J), ls, coupled, delta))
    return CoregSet(rng.uniform(0.2, 0.6, J), terms)


def mixed_likelihood(species, f, rng, kinds=("binomial", "negbin", "gaussian")):
    models = []
    for k in kinds:
        if k == "negbin":
            models.append(ObsModel("negbin", r=3.0))
        elif k == "gaussian":
            models.append(ObsModel("gaussian", noise=0.3))
        else:
            models.append(ObsModel(k))
    y = np.empty(species.size)
    z = np.ones(species.size)
    for j, m in enumerate(models):
        idx = species == j
        fj = f[idx]
        if m.kind == "binomial":
            z[idx] = 5
            y[idx] = rng.binomial(5, 1 / (1 + np.exp(-fj)))
        elif m.kind == "negbin":
            mu = np.exp(fj)
            y[idx] = rng.negative_binomial(m.r, m.r / (m.r + mu))
        elif m.kind == "poisson":
            y[idx] = rng.poisson(np.exp(fj))
        else:
            y[idx] = fj + np.sqrt(m.noise) * rng.standard_normal(fj.size)
    return JointLikelihood(models, species, y, z)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)

"""Prediction over raster grids."""

import numpy as np
import pandas as pd
from scipy.special import expit

from .errors import SchemaError

RASTER_COLUMNS = ("cell_x", "cell_y", "species", "mean", "variance", "median")


def expected_value_transform(model, f, z):
    """Expected observation given the latent value: the inverse link times effort."""
    if model.kind == "binomial":
        return z * expit(f)
    if model.kind in ("negbin", "poisson"):
        return z * np.exp(f)
    return f


def sample_median(obs_model, mean, var, z, n_samples=2000, rng=None):
    """Median of the expected observation under N(mean, var) latent draws."""
    rng = np.random.default_rng(0) if rng is None else rng
    draws = mean[:, None] + np.sqrt(np.maximum(var, 0.0))[:, None] * rng.standard_normal(
        (mean.size, n_samples))
    return np.median(expected_value_transform(obs_model, draws, np.asarray(z, float)[:, None]
                                              if np.ndim(z) else z), axis=1)


def predict_to_grid(model, grid, species=None, z=1.0, n_samples=2000, seed=0, batch_size=1000,
                    scenario=None, include_training=True, path=None):
    """Predict every species at every grid cell.

    Parameters
    ----------
    model : MVGP
        Fitted model.
    grid : RasterGrid
        Raw covariate values; the model's standardization is applied.
    species : list of str, optional
        Species to predict (default all).
    z : float
        Trials / effort of the hypothetical new observation.
    n_samples : int
        Latent draws for the median.
    scenario : Dataset, optional
        Condition on these observations (see :meth:`MVGP.scenario`).
    path : str, optional
        Write the raster CSV here.

    Returns
    -------
    pandas.DataFrame
        Columns ``cell_x, cell_y, species, mean, variance, median,
        latent_mean, latent_var``.
    """
    names = model.species_names if species is None else list(species)
    for s in names:
        if s not in model.species_names:
            raise SchemaError(f"unknown species {s!r}")
    _, models = model.params()
    cov = {c: grid.covariates[:, k] for k, c in enumerate(grid.covariate_names)}
    frames = []
    ncell = len(grid)
    coords = np.column_stack([grid.cell_x, grid.cell_y])
    for s in names:
        j = model.species_names.index(s)
        lm = np.empty(ncell)
        lv = np.empty(ncell)
        for lo in range(0, ncell, batch_size):
            sl = slice(lo, min(lo + batch_size, ncell))
            sub = {k: v[sl] for k, v in cov.items()}
            layout = model.make_layout(np.full(sl.stop - sl.start, j), coords[sl], covariates=sub)
            if scenario is not None and len(scenario):
                pred, _ = model.scenario(scenario, layout, include_training=include_training)
            else:
                pred = model.predict(layout)
            lm[sl], lv[sl] = pred.mean, pred.var
        zz = np.full(ncell, float(z))
        mean, var = model.observation_moments(np.full(ncell, j), lm, lv, zz)
        # per-species stream so results do not depend on which species are requested
        med = sample_median(models[j], lm, lv, zz, n_samples, np.random.default_rng([seed, j]))
        frames.append(pd.DataFrame({"cell_x": grid.cell_x, "cell_y": grid.cell_y, "species": s,
                                    "mean": mean, "variance": var, "median": med,
                                    "latent_mean": lm, "latent_var": lv}))
    df = pd.concat(frames, ignore_index=True)
    if path is not None:
        df.to_csv(path, index=False, float_format="%.17g")
    return df

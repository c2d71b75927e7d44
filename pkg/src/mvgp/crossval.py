"""Cross-validation with log predictive densities.

Two protocols are provided.  Leave-one-out uses the fitted Laplace
approximation at the full-data hyperparameters and removes one Gaussian site
at a time from the posterior marginal (no refitting).  K-fold refits the
hyperparameters for each training set (optional) and predicts the held-out
observations.  Both score observations by

    log p(y_i | D_-i) = log int p(y_i | f) N(f | m, v) df

evaluated by Gauss-Hermite quadrature centred at the mode of the integrand.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import FoldError
from .laplace import find_latent_map, predict_latent
from .likelihoods import JointLikelihood, _derivs, loglik

N_GH = 32
_GH_T, _GH_W = np.polynomial.hermite.hermgauss(N_GH)
_GH_LOGW = np.log(_GH_W) + _GH_T**2


def log_predictive_density(model, y, z, mean, var):
    """log int p(y | f) N(f | mean, var) df, point by point.

    Gaussian likelihoods use the closed form; others use 32-node
    Gauss-Hermite quadrature centred at the mode of the integrand and scaled
    by its curvature.
    """
    y, z, mean, var = np.broadcast_arrays(*(np.atleast_1d(np.asarray(a, float))
                                            for a in (y, z, mean, var)))
    if model.kind == "gaussian":
        s = var + model.noise
        return -0.5 * np.log(2 * np.pi * s) - 0.5 * (y - mean) ** 2 / s
    var = np.maximum(var, 1e-300)
    f = mean.copy()
    for _ in range(50):
        d1, d2, _ = _derivs(model, y, z, f)
        g = d1 - (f - mean) / var
        h = d2 - 1.0 / var
        step = np.clip(-g / h, -5 * np.sqrt(var), 5 * np.sqrt(var))
        f = f + step
        if np.all(np.abs(step) < 1e-12 * (1 + np.abs(f))):
            break
    _, d2, _ = _derivs(model, y, z, f)
    s = np.sqrt(1.0 / (1.0 / var - d2))
    nodes = f[:, None] + np.sqrt(2.0) * s[:, None] * _GH_T[None, :]
    logp = loglik(model, y[:, None], z[:, None], nodes)
    logn = -0.5 * np.log(2 * np.pi * var[:, None]) - 0.5 * (nodes - mean[:, None]) ** 2 / var[:, None]
    return logsumexp(logp + logn + _GH_LOGW[None, :], axis=1) + np.log(np.sqrt(2.0) * s)


def _lpd_by_species(models, species, y, z, mean, var):
    out = np.empty(species.size)
    for j in np.unique(species):
        idx = species == j
        out[idx] = log_predictive_density(models[j], y[idx], z[idx], mean[idx], var[idx])
    return out


# ---------------------------------------------------------------------------
# folds and reports
# ---------------------------------------------------------------------------


@dataclass
class FoldSpec:
    """Assignment of observations to folds.

    Attributes
    ----------
    assignment : ndarray of int
        Fold id of each observation.
    mode : {"loo", "kfold"}
    degenerate : bool
        True when there is only one fold.
    min_distance : float
        Smallest distance between observations in different folds (NaN if
        unknown or single fold).
    labels : list
        Original label of each fold id.
    """

    assignment: np.ndarray
    mode: str = "kfold"
    degenerate: bool = False
    min_distance: float = float("nan")
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=int)
        if self.mode not in ("loo", "kfold"):
            raise FoldError(f"unknown fold mode {self.mode!r}")
        if self.assignment.size and self.assignment.min() < 0:
            raise FoldError("fold ids must be nonnegative")
        self.degenerate = self.n_folds <= 1

    @property
    def n_folds(self):
        return int(np.unique(self.assignment).size)

    def folds(self):
        """(fold id, test indices, training indices) in increasing fold id."""
        for k in np.unique(self.assignment):
            test = np.flatnonzero(self.assignment == k)
            train = np.flatnonzero(self.assignment != k)
            yield int(k), test, train

    @classmethod
    def loo(cls, n):
        return cls(np.arange(n), mode="loo")

    @classmethod
    def random(cls, n, k, seed=0):
        rng = np.random.default_rng(seed)
        return cls(rng.permutation(np.arange(n) % k), mode="kfold")


def structured_folds(data, labels):
    """One fold per region label.

    Parameters
    ----------
    data : Dataset
    labels : array_like or dict
        Region label per observation, or a mapping from site id to label.

    Returns
    -------
    FoldSpec
        With `min_distance` set to the smallest distance between sites of
        different folds.

    Raises
    ------
    FoldError
        If any observation lacks a label.
    """
    if isinstance(labels, dict):
        missing = [s for s in data.site_id if s not in labels]
        if missing:
            raise FoldError(f"no region label for site {missing[0]!r}")
        labels = [labels[s] for s in data.site_id]
    labels = pd.Series(list(labels), dtype=object)
    if labels.size != len(data):
        raise FoldError(f"expected {len(data)} region labels, got {labels.size}")
    bad = labels.isna() | (labels.astype(str).str.strip() == "")
    if bad.any():
        raise FoldError(f"missing region label at observation {int(np.flatnonzero(bad.to_numpy())[0])}")
    codes, uniques = pd.factorize(labels.astype(str), sort=True)
    spec = FoldSpec(codes, mode="kfold", labels=list(uniques))
    if spec.n_folds > 1:
        dmin = np.inf
        for a in range(spec.n_folds):
            for b in range(a + 1, spec.n_folds):
                d = cdist(data.coords[codes == a], data.coords[codes == b])
                dmin = min(dmin, float(d.min()))
        spec.min_distance = dmin
    return spec


@dataclass
class CVReport:
    """Point-wise log predictive densities and summaries.

    ``mean`` is (1/n) sum_i log p(y_i | D_-k(i)); ``se`` the sample standard
    deviation of the point values divided by sqrt(n).
    """

    lpd: np.ndarray
    species: np.ndarray
    species_names: list
    fold: np.ndarray
    mode: str
    flagged: np.ndarray = None
    pred_mean: np.ndarray = None
    pred_var: np.ndarray = None

    def __post_init__(self):
        self.lpd = np.asarray(self.lpd, dtype=float)
        if self.flagged is None:
            self.flagged = np.zeros(self.lpd.size, dtype=bool)

    @staticmethod
    def _stats(v):
        n = v.size
        if n == 0:
            return float("nan"), float("nan")
        se = float(np.std(v, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
        return float(np.mean(v)), se

    @property
    def mean(self):
        return self._stats(self.lpd)[0]

    @property
    def se(self):
        return self._stats(self.lpd)[1]

    def per_species(self):
        """Species name -> (count, mean, se)."""
        out = {}
        for j, name in enumerate(self.species_names):
            v = self.lpd[self.species == j]
            m, s = self._stats(v)
            out[name] = (int(v.size), m, s)
        return out

    def summary(self):
        return {
            "mode": self.mode,
            "n": int(self.lpd.size),
            "mean": self.mean,
            "se": self.se,
            "n_flagged": int(np.sum(self.flagged)),
            "species": {k: {"n": n, "mean": m, "se": s} for k, (n, m, s) in self.per_species().items()},
        }

    def to_frame(self):
        df = pd.DataFrame({
            "index": np.arange(self.lpd.size),
            "species": [self.species_names[j] for j in self.species],
            "fold": self.fold,
            "lpd": self.lpd,
            "flagged": self.flagged.astype(int),
        })
        if self.pred_mean is not None:
            df["latent_mean"] = self.pred_mean
            df["latent_var"] = self.pred_var
        return df

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    def to_json(self, path=None):
        text = json.dumps(self.summary(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def paired_difference(a, b):
    """Mean and standard error of the point-wise difference a - b.

    Both reports must score the same observations in the same order.
    """
    if a.lpd.shape != b.lpd.shape:
        raise FoldError("reports cover different observations")
    d = a.lpd - b.lpd
    return CVReport._stats(d)


# ---------------------------------------------------------------------------
# leave-one-out and K-fold
# ---------------------------------------------------------------------------


def loo_cv_laplace(model):
    """Approximate LOO-CV at the current hyperparameters of a fitted model.

    The Gaussian site of observation i (precision W_ii and natural location
    W_ii f_i + grad_i) is divided out of the posterior marginal of f_i.
    When the resulting cavity precision is not positive the point is refit
    without observation i and flagged.

    Returns
    -------
    CVReport
    """
    state = model._require_state()
    _, models = model.params()
    data = model.data
    var = state.posterior_diag()
    f = state.f_hat
    W, d1 = state.W, state.grad_ll
    tau = 1.0 / var - W
    nu = f / var - (W * f + d1)
    ok = tau > 1e-12 * (1.0 / var)
    m_c = np.where(ok, nu / np.where(ok, tau, 1.0), np.nan)
    v_c = np.where(ok, 1.0 / np.where(ok, tau, 1.0), np.nan)
    for i in np.flatnonzero(~ok):
        keep = np.flatnonzero(np.arange(len(data)) != i)
        st = find_latent_map(state.C[np.ix_(keep, keep)], state.lik.subset(keep),
                             tol=model.config.optimizer.newton_tol)
        p = predict_latent(st, state.C[i, keep][None, :], state.C[i, i:i + 1])
        m_c[i], v_c[i] = p.mean[0], p.var[0]
    lpd = _lpd_by_species(models, data.species, data.y, data.z, m_c, v_c)
    return CVReport(lpd, data.species.copy(), model.species_names, np.arange(len(data)), "loo",
                    flagged=~ok, pred_mean=m_c, pred_var=v_c)


def kfold_cv(config, data, folds, refit=True, x=None, fit_kwargs=None, model_cls=None):
    """K-fold cross-validation.

    Parameters
    ----------
    config : ModelConfig
    data : Dataset
        Full data; standardization constants of `data` are used for every
        fold.
    folds : FoldSpec
    refit : bool
        Re-estimate hyperparameters on each training set (starting from `x`
        or the default start).  Otherwise `x` (or the default start) is
        used as is.
    x : ndarray, optional
        Parameter vector.
    fit_kwargs : dict, optional
        Passed to :meth:`MVGP.fit`.

    Raises
    ------
    FoldError
        If refitting and a training set has no observations of a species
        that has data.
    """
    from .model import MVGP

    cls = MVGP if model_cls is None else model_cls
    if folds.assignment.size != len(data):
        raise FoldError("fold assignment does not cover the dataset")
    full = cls(config, data, x=x)
    names = full.species_names
    n = len(full.data)
    lpd = np.empty(n)
    pm = np.empty(n)
    pv = np.empty(n)
    present = set(np.unique(full.data.species))
    for k, test, train in folds.folds():
        if refit:
            have = set(np.unique(full.data.species[train]))
            lost = present - have
            if lost:
                raise FoldError(f"fold {k}: training set has no observations of species "
                                + ", ".join(names[j] for j in sorted(lost)))
        m = cls(full.config, full.data.subset(train), x=full.x)
        if refit and train.size:
            m.fit(**(fit_kwargs or {}))
        else:
            m.update()
        layout = full.layout.subset(test)
        pred = m.predict(layout)
        _, models = m.params()
        pm[test], pv[test] = pred.mean, pred.var
        lpd[test] = _lpd_by_species(models, full.data.species[test], full.data.y[test],
                                    full.data.z[test], pred.mean, pred.var)
    return CVReport(lpd, full.data.species.copy(), names, folds.assignment.copy(), folds.mode,
                    pred_mean=pm, pred_var=pv)

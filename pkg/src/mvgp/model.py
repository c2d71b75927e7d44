"""The multivariate additive GP model tying the building blocks together."""

import numpy as np

from .config import ModelConfig, expand_variant
from .coreg import (CoregSet, Layout, LMCTerm, assemble_cross_cov, assemble_lmc_cov,
                    assemble_prior_diag, cov_grads)
from .errors import ConfigError, DomainError, SchemaError
from .hyperopt import ParamSchema, PriorSpec, optimize_map, prior_logpdf_grad
from .kernels import KernelSpec
from .laplace import conditional_scenario, find_latent_map, marginal_grad, predict_latent
from .likelihoods import JointLikelihood
from .moments import predictive_moments


class MVGP:
    """Additive multivariate GP with Laplace inference.

    Parameters
    ----------
    config : ModelConfig
    data : Dataset
        Training data.  Species are matched to the configuration by name.
    x : ndarray, optional
        Initial unconstrained parameter vector (defaults to unit variances
        and length-scales, identity correlations and the initial likelihood
        parameters of the configuration).

    Attributes
    ----------
    schema : ParamSchema
    x : ndarray
        Current parameter vector.
    state : LaplaceState or None
        Laplace approximation at `x`, available after :meth:`fit` or
        :meth:`update`.
    """

    def __init__(self, config, data, x=None):
        if not isinstance(config, ModelConfig):
            raise ConfigError("config must be a ModelConfig")
        self.config = expand_variant(config)
        names = [s.name for s in self.config.species]
        unknown = set(data.species_names) - set(names)
        if unknown:
            raise SchemaError(f"data contains species {sorted(unknown)} absent from the configuration")
        data = data.reorder_species(names)
        cats = [c.name for c in self.config.covariates if c.categorical]
        missing = [c.name for c in self.config.covariates if c.name not in data.covariate_names]
        if missing and self.config.include_predictors:
            raise SchemaError(f"data lacks covariate column(s) {missing}")
        if self.config.include_predictors and not data.standardization:
            cont = [c.name for c in self.config.covariates if not c.categorical]
            if cont:
                data = data.with_standardization(cats)
        self.data = data
        self.models0 = [s.obs_model() for s in self.config.species]
        data.validate({s.name: m for s, m in zip(self.config.species, self.models0)})
        self._build_features()
        self.coreg0 = self._build_coreg()
        self.schema = ParamSchema(self.coreg0, self.models0)
        p = self.config.prior
        self.prior = PriorSpec(p.variance_scale2, p.variance_df, p.lengthscale_scale2,
                               p.lengthscale_df, p.corr_df, p.lik_prior)
        self.layout = self.make_layout(data.species, data.coords, data)
        self.x = self.schema.pack(self.coreg0, self.models0) if x is None else np.asarray(x, float)
        self.state = None
        self.opt_result = None
        self._params = None

    # -- structure -----------------------------------------------------

    @property
    def J(self):
        return self.config.J

    @property
    def species_names(self):
        return [s.name for s in self.config.species]

    def _build_features(self):
        cfg = self.config
        feats = []  # (feature name, covariate name, power)
        if cfg.include_predictors:
            for c in cfg.covariates:
                if c.categorical or not cfg.quadratic:
                    feats.append((c.name, c.name, 1))
                else:
                    feats.append((c.name, c.name, 1))
                    feats.append((c.name + "^2", c.name, 2))
        self.features = feats

    def _build_coreg(self):
        cfg = self.config
        J = cfg.J
        terms = []
        if cfg.include_spatial:
            fam = cfg.spatial_kernel
            terms.append(LMCTerm("spatial", KernelSpec(fam, (0, 1)), np.ones(J, bool), np.ones(J),
                                 [np.ones(2) for _ in range(J)], cfg.couple_spatial, role="spatial"))
        kinds = {c.name: c.kernel for c in cfg.covariates}
        for k, (fname, cname, power) in enumerate(self.features):
            members = np.array([cname in cfg.species_covariates(j) for j in range(J)])
            if not members.any():
                continue
            fam = "linear" if (cfg.quadratic and kinds[cname] != "categorical") else kinds[cname]
            spec = KernelSpec(fam, (2 + k,))
            ls = [np.ones(spec.n_lengthscales) if (m and spec.n_lengthscales) else None for m in members]
            terms.append(LMCTerm(fname, spec, members, members.astype(float), ls,
                                 cfg.couple_predictors, role="covariate"))
        return CoregSet(np.ones(J), terms)

    def make_layout(self, species, coords, source=None, covariates=None):
        """Layout (species codes + feature matrix) for arbitrary inputs.

        Parameters
        ----------
        species : array_like of int
        coords : array_like, shape (m, 2)
        source : Dataset, optional
            Provides raw covariate columns by name.
        covariates : dict, optional
            Covariate name -> raw values (alternative to `source`).
        """
        species = np.asarray(species, dtype=int)
        coords = np.asarray(coords, dtype=float).reshape(-1, 2)
        m = species.size
        P = np.empty((m, 2 + len(self.features)))
        P[:, :2] = coords * self.config.coord_scale
        std = self.data.standardization
        for k, (_, cname, power) in enumerate(self.features):
            if covariates is not None and cname in covariates:
                raw = np.asarray(covariates[cname], dtype=float)
            elif source is not None and cname in source.covariate_names:
                raw = source.covariate(cname)
            else:
                raw = np.full(m, np.nan)
            x = raw
            if cname in std:
                mu, sd = std[cname]
                x = (raw - mu) / sd
            P[:, 2 + k] = x**power
            users = np.array([cname in self.config.species_covariates(j) for j in range(self.J)])
            need = users[species] if m else np.zeros(0, bool)
            if np.any(need & ~np.isfinite(P[:, 2 + k])):
                i = int(np.flatnonzero(need & ~np.isfinite(P[:, 2 + k]))[0])
                raise SchemaError(f"missing value of covariate {cname!r} at point {i}")
        return Layout(species, P)

    # -- parameters and objective ----------------------------------------

    def params(self, x=None):
        """``(coreg, models)`` for a parameter vector (default: current)."""
        return self.schema.unpack(self.x if x is None else x)

    def likelihood(self, models=None, data=None):
        data = self.data if data is None else data
        return JointLikelihood(self.models0 if models is None else models, data.species, data.y,
                               data.z, validate_data=False)

    def prior_cov(self, coreg, layout=None):
        layout = self.layout if layout is None else layout
        C = assemble_lmc_cov(coreg, layout, max_elements=self.config.max_elements)
        if C.size:
            C[np.diag_indices_from(C)] += self.config.jitter * np.mean(np.diag(C))
        return C

    def laplace(self, x=None):
        coreg, models = self.params(x)
        opt = self.config.optimizer
        C = self.prior_cov(coreg)
        return find_latent_map(C, self.likelihood(models), tol=opt.newton_tol,
                               max_iter=opt.newton_max_iter)

    def objective(self, x, with_prior=True):
        """Log marginal likelihood (+ log prior) and its gradient at `x`."""
        coreg, models = self.params(x)
        opt = self.config.optimizer
        C = self.prior_cov(coreg)
        lik = self.likelihood(models)
        state = find_latent_map(C, lik, tol=opt.newton_tol, max_iter=opt.newton_max_iter)
        g = marginal_grad(state, cov_grads(coreg, self.layout), lik.param_grads(state.f_hat))
        val = state.log_q
        grad = self.schema.vector_from_dict(g)
        if with_prior:
            lp, gp = prior_logpdf_grad(self.prior, self.schema, x)
            val += lp
            grad = grad + gp
        return val, grad

    def update(self, x=None):
        """Set parameters and recompute the Laplace approximation."""
        if x is not None:
            self.x = np.asarray(x, dtype=float)
        self.state = self.laplace(self.x)
        return self

    def fit(self, x0=None, **kwargs):
        """MAP estimate of the hyperparameters by scaled conjugate gradients.

        Keyword arguments override the optimizer settings of the
        configuration.

        Returns
        -------
        OptResult
        """
        opt = self.config.optimizer
        settings = dict(gtol=opt.gtol, max_iter=opt.max_iter, n_restarts=opt.n_restarts,
                        restart_scale=opt.restart_scale, seed=opt.seed)
        settings.update(kwargs)
        start = self.x if x0 is None else np.asarray(x0, dtype=float)
        res = optimize_map(self.objective, start, **settings)
        self.opt_result = res
        self.update(res.x)
        return res

    # -- prediction -------------------------------------------------------

    def _require_state(self):
        if self.state is None:
            self.update()
        return self.state

    def predict(self, layout, target="full", full_cov=False):
        """Latent predictive distribution at a test layout.

        Parameters
        ----------
        layout : Layout
            Built with :meth:`make_layout`.
        target : str
            ``"full"``, ``"offset"``, ``"spatial"`` or a covariate feature name.
        """
        state = self._require_state()
        coreg, _ = self.params()
        Kx = assemble_cross_cov(coreg, layout, self.layout, target=target,
                                max_elements=self.config.max_elements)
        if full_cov:
            Kt = assemble_lmc_cov(coreg, layout, target=target, max_elements=self.config.max_elements)
        else:
            Kt = assemble_prior_diag(coreg, layout, target=target)
        return predict_latent(state, Kx, Kt, target=target, full_cov=full_cov)

    def observation_moments(self, species, mu, var, z=1.0):
        """Predictive mean and variance of new observations."""
        _, models = self.params()
        species = np.asarray(species, dtype=int)
        z = np.broadcast_to(np.asarray(z, dtype=float), species.shape)
        mean = np.empty(species.size)
        variance = np.empty(species.size)
        for j in np.unique(species):
            idx = species == j
            pm = predictive_moments(models[j], mu[idx], np.maximum(var[idx], 0.0), z[idx])
            mean[idx] = pm.mean
            variance[idx] = pm.variance
        return mean, variance

    def scenario(self, scenario_data, layout, include_training=False, target="full",
                 full_cov=False):
        """Conditional prediction given hypothetical observations of other species.

        Parameters
        ----------
        scenario_data : Dataset
            Observations of the conditioning species.
        layout : Layout
            Prediction points; their species must not appear in
            `scenario_data`.
        include_training : bool
            Condition also on the training data (hyperparameters stay
            fixed either way).  By default only the scenario data is used.

        Returns
        -------
        (LatentPredictive, LaplaceState)
        """
        coreg, models = self.params()
        sd = scenario_data.reorder_species(self.species_names)
        overlap = set(np.unique(sd.species)) & set(np.unique(layout.species))
        if overlap:
            raise DomainError("predicted species must differ from the scenario species: "
                              + ", ".join(self.species_names[j] for j in sorted(overlap)))
        sd.validate({s.name: m for s, m in zip(self.config.species, models)})
        cond = self.make_layout(sd.species, sd.coords, sd)
        lik = self.likelihood(models, sd)
        if include_training:
            cond = Layout(np.concatenate([self.layout.species, cond.species]),
                          np.vstack([self.layout.points, cond.points]))
            lik = JointLikelihood(models, cond.species, np.concatenate([self.data.y, sd.y]),
                                  np.concatenate([self.data.z, sd.z]), validate_data=False)
        C = self.prior_cov(coreg, cond)
        Kx = assemble_cross_cov(coreg, layout, cond, target=target,
                                max_elements=self.config.max_elements)
        if full_cov:
            Kt = assemble_lmc_cov(coreg, layout, target=target, max_elements=self.config.max_elements)
        else:
            Kt = assemble_prior_diag(coreg, layout, target=target)
        opt = self.config.optimizer
        return conditional_scenario(C, lik, Kx, Kt, target=target, full_cov=full_cov,
                                    tol=opt.newton_tol, max_iter=opt.newton_max_iter)

    # -- convenience ------------------------------------------------------

    def describe(self):
        """Constrained parameter values keyed like the schema."""
        out = {}
        for k, v in zip(self.schema.keys, self.x):
            name = "/".join(str(p) for p in k)
            out[name] = float(v) if k[1:2] == ("delta",) else float(np.exp(v))
        return out

    def correlation(self, term):
        """Fitted correlation matrix (over member species) of a term."""
        coreg, _ = self.params()
        return coreg.term(term).corr().R

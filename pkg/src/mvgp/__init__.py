"""Additive multivariate Gaussian processes with Laplace inference.

Joint latent Gaussian models for several response variables observed
through binomial, negative binomial, Poisson or Gaussian likelihoods.  The
latent functions share an additive prior built from a linear model of
coregionalization for each covariate response and for a spatial effect.
"""

from .config import CovariateConfig, ModelConfig, SpeciesConfig, expand_variant, load_config
from .coreg import (CoregSet, CorrMatrix, Layout, LMCTerm, assemble_cross_cov, assemble_lmc_cov,
                    corr_prior_logpdf, corr_to_delta, delta_to_corr)
from .crossval import (CVReport, FoldSpec, kfold_cv, log_predictive_density, loo_cv_laplace,
                       paired_difference, structured_folds)
from .datasets import (Dataset, RasterGrid, hare_lynx_holdout_mask, load_dataset, load_grid,
                       load_hare_lynx, write_dataset)
from .errors import (ApproximationError, ConfigError, ConvergenceError, DomainError, FoldError,
                     MVGPError, SchemaError, ShapeError, SizeError)
from .grid import predict_to_grid
from .hyperopt import ParamSchema, PriorSpec, optimize_map, prior_logpdf_grad, scg
from .kernels import KernelParams, KernelSpec, eval_kernel, kernel_param_grads
from .laplace import (LaplaceState, LatentPredictive, conditional_scenario, find_latent_map,
                      marginal_grad, predict_latent)
from .likelihoods import JointLikelihood, ObsModel, loglik, loglik_grad_hess
from .model import MVGP
from .moments import (PredictiveMoments, ProbitMixture, binomial_moments, bvn_cdf,
                      fit_probit_mixture, gauss_cdf_of_gauss_integral, gauss_probit_integral,
                      negbin_moments, predictive_moments)
from .persist import load_model, save_model
from .simulate import simulate

__version__ = "0.1.0"

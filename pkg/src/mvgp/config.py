r"""Declarative model configuration and variant shortcuts.

A configuration lists the species with their observation models and
covariate subsets, the kernel family of every covariate, and flags for the
spatial and covariate components and their coupling across species.

Variant shortcuts ``1``-``9`` set the component flags:

== =========================== ========== ==================== ==========
#  predictors                  coupled    spatial              coupled
== =========================== ========== ==================== ==========
1  GP                          no         yes                  no
2  GP                          no         yes                  yes
3  GP                          yes        yes                  yes
4  GP                          no         no                   \-
5  none                        \-         yes                  no
6  quadratic                   no         yes                  no
7  quadratic                   no         yes                  yes
8  quadratic                   yes        yes                  yes
9  quadratic                   yes        no                   \-
== =========================== ========== ==================== ==========

Quadratic predictors replace every continuous covariate by the two
features x and x^2, each with a linear kernel.
"""

import json
from dataclasses import asdict, dataclass, field, replace

from .errors import ConfigError
from .kernels import FAMILIES
from .likelihoods import KINDS, ObsModel

VARIANTS = {
    1: dict(include_predictors=True, couple_predictors=False, include_spatial=True, couple_spatial=False, quadratic=False),
    2: dict(include_predictors=True, couple_predictors=False, include_spatial=True, couple_spatial=True, quadratic=False),
    3: dict(include_predictors=True, couple_predictors=True, include_spatial=True, couple_spatial=True, quadratic=False),
    4: dict(include_predictors=True, couple_predictors=False, include_spatial=False, couple_spatial=False, quadratic=False),
    5: dict(include_predictors=False, couple_predictors=False, include_spatial=True, couple_spatial=False, quadratic=False),
    6: dict(include_predictors=True, couple_predictors=False, include_spatial=True, couple_spatial=False, quadratic=True),
    7: dict(include_predictors=True, couple_predictors=False, include_spatial=True, couple_spatial=True, quadratic=True),
    8: dict(include_predictors=True, couple_predictors=True, include_spatial=True, couple_spatial=True, quadratic=True),
    9: dict(include_predictors=True, couple_predictors=True, include_spatial=False, couple_spatial=False, quadratic=True),
}


@dataclass
class SpeciesConfig:
    """One species.

    Attributes
    ----------
    name : str
    model : str
        Observation model kind.
    covariates : list of str or None
        Covariates that enter this species' predictor; None means all.
    r : float
        Initial negative binomial over-dispersion.
    noise : float
        Initial Gaussian noise variance.
    """

    name: str
    model: str
    covariates: list = None
    r: float = 1.0
    noise: float = 1.0

    def obs_model(self):
        kind = self.model
        if kind in ("negbin", "negative-binomial", "nb"):
            return ObsModel(kind, r=self.r)
        if kind == "gaussian":
            return ObsModel(kind, noise=self.noise)
        return ObsModel(kind)


@dataclass
class CovariateConfig:
    name: str
    kernel: str = "gaussian"

    @property
    def categorical(self):
        return self.kernel == "categorical"


@dataclass
class PriorConfig:
    variance_scale2: float = 4.0
    variance_df: float = 4.0
    lengthscale_scale2: float = 1.0
    lengthscale_df: float = 4.0
    corr_df: float = None
    lik_prior: str = "flat"


@dataclass
class OptimizerConfig:
    gtol: float = 1e-4
    max_iter: int = 300
    n_restarts: int = 0
    restart_scale: float = 0.5
    seed: int = 0
    newton_tol: float = 1e-6
    newton_max_iter: int = 100


@dataclass
class ModelConfig:
    """Complete model description.

    Setting `variant` overrides the five component flags through
    :func:`expand_variant`.
    """

    species: list
    covariates: list = field(default_factory=list)
    include_spatial: bool = True
    include_predictors: bool = True
    couple_spatial: bool = False
    couple_predictors: bool = False
    quadratic: bool = False
    spatial_kernel: str = "matern32"
    variant: int = None
    prior: PriorConfig = field(default_factory=PriorConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    jitter: float = 1e-8
    coord_scale: float = 1.0
    max_elements: int = 60_000_000

    def __post_init__(self):
        self.species = [s if isinstance(s, SpeciesConfig) else SpeciesConfig(**s) for s in self.species]
        self.covariates = [c if isinstance(c, CovariateConfig) else CovariateConfig(**c)
                           for c in self.covariates]
        if isinstance(self.prior, dict):
            self.prior = PriorConfig(**self.prior)
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        self.validate()

    def validate(self):
        if not self.species:
            raise ConfigError("at least one species is required")
        names = [s.name for s in self.species]
        if len(set(names)) != len(names):
            raise ConfigError("species names must be unique")
        cov_names = [c.name for c in self.covariates]
        if len(set(cov_names)) != len(cov_names):
            raise ConfigError("covariate names must be unique")
        for s in self.species:
            if s.model not in KINDS and s.model not in ("binomial-logit", "negative-binomial", "nb"):
                raise ConfigError(f"species {s.name!r}: unknown observation model {s.model!r}")
            for c in s.covariates or []:
                if c not in cov_names:
                    raise ConfigError(f"species {s.name!r}: unknown covariate {c!r}")
        for c in self.covariates:
            if c.kernel not in FAMILIES:
                raise ConfigError(f"covariate {c.name!r}: unknown kernel {c.kernel!r}")
        if self.spatial_kernel not in ("matern32", "gaussian"):
            raise ConfigError("spatial kernel must be matern32 or gaussian")
        if self.variant is not None and self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of 1-9, got {self.variant}")
        if not (self.include_spatial or self.include_predictors):
            raise ConfigError("model needs at least one of the spatial or predictor components")

    @property
    def J(self):
        return len(self.species)

    def species_covariates(self, j):
        s = self.species[j]
        return [c.name for c in self.covariates] if s.covariates is None else list(s.covariates)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def expand_variant(config, variant=None):
    """Return a copy of `config` with the flags of a numbered variant applied."""
    v = config.variant if variant is None else variant
    if v is None:
        return replace(config)
    if v not in VARIANTS:
        raise ConfigError(f"variant must be one of 1-9, got {v}")
    return replace(config, variant=v, **VARIANTS[v])


def load_config(path):
    """Read a JSON configuration file and expand its variant shortcut."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    try:
        return expand_variant(ModelConfig.from_dict(d))
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None

"""Observation models with derivatives in the latent value.

Each model gives log p(y | f) together with the first three derivatives in
f, and derivatives w.r.t. the log of its own parameter (over-dispersion r
for the negative binomial, noise variance for the Gaussian).

Binomial uses the logit link, p = 1 / (1 + exp(-f)).  Negative binomial and
Poisson use the log link with an exposure offset, m = z exp(f).  The negative
binomial is parameterized so that Var(y) = m + m^2 / r.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, expit, gammaln, digamma

from .errors import DomainError, ShapeError

KINDS = ("binomial", "negbin", "poisson", "gaussian")

_ALIASES = {"binomial-logit": "binomial", "negative-binomial": "negbin", "nb": "negbin"}


def _softplus(x):
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class ObsModel:
    """Observation model for one species.

    Parameters
    ----------
    kind : {"binomial", "negbin", "poisson", "gaussian"}
    r : float, optional
        Negative binomial over-dispersion (required for ``negbin``).
    noise : float, optional
        Gaussian noise variance (required for ``gaussian``).
    """

    kind: str
    r: float = None
    noise: float = None

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise DomainError(f"unknown observation model {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == "negbin":
            if self.r is None or not np.isfinite(self.r) or self.r <= 0:
                raise DomainError(f"negbin over-dispersion must be finite and > 0, got {self.r}")
        if kind == "gaussian":
            if self.noise is None or not np.isfinite(self.noise) or self.noise <= 0:
                raise DomainError(f"gaussian noise variance must be finite and > 0, got {self.noise}")

    @property
    def param_name(self):
        return {"negbin": "r", "gaussian": "noise"}.get(self.kind)

    @property
    def param_value(self):
        name = self.param_name
        return None if name is None else getattr(self, name)

    def with_param(self, value):
        name = self.param_name
        if name is None:
            return self
        return ObsModel(self.kind, **{name: float(value)})


def _as_arrays(y, z, f):
    y, z, f = np.broadcast_arrays(np.asarray(y, float), np.asarray(z, float), np.asarray(f, float))
    return y, z, f


def validate(model, y, z):
    """Check observation invariants, raising DomainError on the first bad entry."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if y.shape != z.shape and z.size != 1:
        raise ShapeError("y and z must have matching shapes")
    z = np.broadcast_to(z, y.shape)
    bad = ~np.isfinite(y)
    if model.kind != "gaussian":
        bad |= (y < 0) | (y != np.round(y)) | ~np.isfinite(z) | (z <= 0)
        if model.kind == "binomial":
            bad |= (z != np.round(z)) | (y > z)
    if np.any(bad):
        i = int(np.flatnonzero(bad.ravel())[0])
        raise DomainError(
            f"invalid {model.kind} observation at index {i}: y={y.ravel()[i]}, z={z.ravel()[i]}"
        )


def _ret(x, like):
    return float(x) if np.ndim(like) == 0 else x


def loglik(model, y, z, f):
    """Point-wise log p(y | f).

    Returns a float for scalar input and an array otherwise.
    """
    yy, zz, ff = _as_arrays(y, z, f)
    k = model.kind
    if k == "binomial":
        out = (gammaln(zz + 1) - gammaln(yy + 1) - gammaln(zz - yy + 1)
               + yy * ff - zz * _softplus(ff))
    elif k == "negbin":
        r = model.r
        lm = np.log(zz) + ff
        lr = np.log(r)
        # lgamma(r + y) - lgamma(r), stable for huge r
        lg = np.where(yy > 0, gammaln(np.maximum(yy, 1)) - betaln(r, np.maximum(yy, 1)), 0.0)
        out = (lg - gammaln(yy + 1) - r * _softplus(lm - lr)
               - np.where(yy > 0, yy * _softplus(lr - lm), 0.0))
    elif k == "poisson":
        lm = np.log(zz) + ff
        out = yy * lm - np.exp(lm) - gammaln(yy + 1)
    else:
        s = model.noise
        out = -0.5 * np.log(2 * np.pi * s) - 0.5 * (yy - ff) ** 2 / s
    return _ret(out, f if np.ndim(y) == 0 else y)


def _derivs(model, y, z, f):
    yy, zz, ff = _as_arrays(y, z, f)
    k = model.kind
    if k == "binomial":
        p = expit(ff)
        w = p * (1 - p)
        return yy - zz * p, -zz * w, -zz * w * (1 - 2 * p)
    if k == "negbin":
        # p = m / (r + m) keeps every derivative finite for extreme f
        r = model.r
        p = expit(np.log(zz) + ff - np.log(r))
        q = 1.0 - p
        d1 = yy * q - r * p
        d2 = -(r + yy) * p * q
        d3 = d2 * (q - p)
        return d1, d2, d3
    if k == "poisson":
        m = zz * np.exp(ff)
        return yy - m, -m, -m
    s = model.noise
    return (yy - ff) / s, np.full_like(ff, -1.0 / s), np.zeros_like(ff)


def loglik_grad_hess(model, y, z, f):
    """First and second derivatives of log p(y | f) in f."""
    d1, d2, _ = _derivs(model, y, z, f)
    like = f if np.ndim(y) == 0 else y
    return _ret(d1, like), _ret(d2, like)


def loglik_d3(model, y, z, f):
    """Third derivative of log p(y | f) in f."""
    return _ret(_derivs(model, y, z, f)[2], f if np.ndim(y) == 0 else y)


def loglik_param_derivs(model, y, z, f):
    """Derivatives w.r.t. the log of the model parameter.

    Returns
    -------
    (dlogp, dd1, dd2) : tuple of ndarray or None
        Derivatives of log p, d/df log p and d^2/df^2 log p w.r.t.
        ``log r`` (negbin) or ``log noise`` (gaussian).  None for models
        without a parameter.
    """
    yy, zz, ff = _as_arrays(y, z, f)
    k = model.kind
    if k == "negbin":
        r = model.r
        m = zz * np.exp(ff)
        q = r + m
        dlp = (digamma(r + yy) - digamma(r) + np.log(r) + 1.0
               - np.log(q) - (r + yy) / q)
        dd1 = (yy - m) * m / q**2
        dd2 = -m * ((2 * r + yy) * q - 2 * r * (r + yy)) / q**3
        return r * dlp, r * dd1, r * dd2
    if k == "gaussian":
        s = model.noise
        e = yy - ff
        return -0.5 + 0.5 * e**2 / s, -e / s, np.full_like(ff, 1.0 / s)
    return None


class JointLikelihood:
    """Factorized likelihood over stacked observations of several species.

    Parameters
    ----------
    models : sequence of ObsModel
        One model per species.
    species : array_like of int
        Species index of each stacked observation.
    y, z : array_like
        Responses and trials/effort, one per observation.
    validate_data : bool
        Check observation invariants on construction.
    """

    def __init__(self, models, species, y, z, validate_data=True):
        self.models = list(models)
        self.species = np.asarray(species, dtype=int).reshape(-1)
        self.y = np.asarray(y, dtype=float).reshape(-1)
        self.z = np.broadcast_to(np.asarray(z, dtype=float), self.y.shape).copy()
        if self.species.shape != self.y.shape:
            raise ShapeError("species, y and z must have one entry per observation")
        if self.species.size and (self.species.min() < 0 or self.species.max() >= len(self.models)):
            raise ShapeError("species index out of range")
        self._groups = [np.flatnonzero(self.species == j) for j in range(len(self.models))]
        if validate_data:
            for j, idx in enumerate(self._groups):
                if idx.size:
                    validate(self.models[j], self.y[idx], self.z[idx])

    def __len__(self):
        return self.y.size

    def subset(self, idx):
        idx = np.asarray(idx)
        return JointLikelihood(self.models, self.species[idx], self.y[idx], self.z[idx],
                               validate_data=False)

    def with_models(self, models):
        return JointLikelihood(models, self.species, self.y, self.z, validate_data=False)

    def pointwise(self, f):
        out = np.empty_like(self.y)
        for j, idx in enumerate(self._groups):
            if idx.size:
                out[idx] = loglik(self.models[j], self.y[idx], self.z[idx], f[idx])
        return out

    def loglik(self, f):
        return float(np.sum(self.pointwise(f)))

    def derivs(self, f):
        """(d1, d2, d3) over all observations."""
        d1, d2, d3 = (np.empty_like(self.y) for _ in range(3))
        for j, idx in enumerate(self._groups):
            if idx.size:
                d1[idx], d2[idx], d3[idx] = _derivs(self.models[j], self.y[idx], self.z[idx], f[idx])
        return d1, d2, d3

    def param_grads(self, f):
        """Yield (key, dlogp_total, dd1, dd2) for each likelihood parameter.

        Keys are ``("lik", j)``; vectors are full length with zeros outside
        species j.
        """
        for j, idx in enumerate(self._groups):
            m = self.models[j]
            if m.param_name is None or idx.size == 0:
                continue
            dlp, a, b = loglik_param_derivs(m, self.y[idx], self.z[idx], f[idx])
            dd1 = np.zeros_like(self.y)
            dd2 = np.zeros_like(self.y)
            dd1[idx] = a
            dd2[idx] = b
            yield ("lik", j), float(np.sum(dlp)), dd1, dd2

"""Covariance and correlation functions with log-parameter derivatives.

Four families are supported:

``matern32``
    sigma2 * (1 + sqrt(3) r) exp(-sqrt(3) r) with the ARD distance
    r = sqrt(sum_d ((x_d - x'_d) / l_d)^2).
``gaussian``
    sigma2 * exp(-r^2 / 2) with the same ARD distance.
``linear``
    sigma2 * x . x'
``categorical``
    sigma2 * [x == x'] for integer coded inputs.

A kernel reads only the columns ``input_dims`` of the point arrays passed to
it, so a single point matrix (coordinates followed by covariate features) can
be shared by all kernels of a model.  With ``is_correlation=True`` the
variance is fixed to one; this is the form used inside coregionalization sums.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

FAMILIES = ("matern32", "gaussian", "linear", "categorical")
STATIONARY = ("matern32", "gaussian")

_SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class KernelSpec:
    family: str
    input_dims: tuple
    is_correlation: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown kernel family {self.family!r}")
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        if len(self.input_dims) == 0:
            raise ShapeError("kernel needs at least one input dimension")
        if self.family == "categorical" and len(self.input_dims) != 1:
            raise ShapeError("categorical kernel takes exactly one input dimension")

    @property
    def n_lengthscales(self):
        return len(self.input_dims) if self.family in STATIONARY else 0

    @property
    def has_variance(self):
        return not self.is_correlation


@dataclass
class KernelParams:
    lengthscales: np.ndarray = None
    variance: float = None

    def __post_init__(self):
        if self.lengthscales is not None:
            self.lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))


def _check_params(spec, params):
    if spec.n_lengthscales:
        ls = params.lengthscales
        if ls is None or ls.shape != (spec.n_lengthscales,):
            raise ShapeError(
                f"{spec.family} kernel needs {spec.n_lengthscales} length-scale(s)"
            )
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise DomainError(f"length-scales must be finite and positive, got {ls}")
    if spec.has_variance:
        v = params.variance
        if v is None or not np.isfinite(v) or v <= 0:
            raise DomainError(f"variance must be finite and positive, got {v}")


def _variance(spec, params):
    return float(params.variance) if spec.has_variance else 1.0


def _columns(spec, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError("point set must be a nonempty 2-D array")
    if max(spec.input_dims) >= X.shape[1]:
        raise ShapeError(
            f"kernel reads column {max(spec.input_dims)} but points have {X.shape[1]}"
        )
    Z = X[:, spec.input_dims]
    if spec.family == "categorical":
        finite = Z[np.isfinite(Z)]
        if np.any(finite != np.round(finite)):
            raise DomainError("categorical kernel requires integer coded inputs")
    return Z


def _scaled_sqdist(A, B, ls):
    """Per-dimension squared scaled differences, shape (n, m, d)."""
    D = (A[:, None, :] - B[None, :, :]) / ls
    return D * D


def eval_kernel(spec, params, X, X2=None):
    """Evaluate the kernel matrix between two point sets.

    Parameters
    ----------
    spec : KernelSpec
    params : KernelParams
    X, X2 : ndarray, shape (n, p) and (m, p)
        Point sets; only the columns in ``spec.input_dims`` are used.  When
        `X2` is None the symmetric matrix k(X, X) is returned.

    Returns
    -------
    K : ndarray, shape (n, m)
    """
    _check_params(spec, params)
    A = _columns(spec, X)
    B = A if X2 is None else _columns(spec, X2)
    s2 = _variance(spec, params)
    fam = spec.family
    if fam in STATIONARY:
        r2 = _scaled_sqdist(A, B, params.lengthscales).sum(axis=-1)
        if fam == "gaussian":
            K = np.exp(-0.5 * r2)
        else:
            r = _SQRT3 * np.sqrt(r2)
            K = (1.0 + r) * np.exp(-r)
    elif fam == "linear":
        K = A @ B.T
    else:
        K = (A[:, 0][:, None] == B[:, 0][None, :]).astype(float)
    if X2 is None:
        K = 0.5 * (K + K.T)
    return s2 * K


def eval_kernel_diag(spec, params, X):
    """Diagonal of ``eval_kernel(spec, params, X, X)`` without the full matrix."""
    _check_params(spec, params)
    A = _columns(spec, X)
    s2 = _variance(spec, params)
    if spec.family == "linear":
        return s2 * np.sum(A * A, axis=1)
    return np.full(A.shape[0], s2)


def kernel_param_grads(spec, params, X, X2=None):
    """Derivatives of the kernel matrix w.r.t. the log of each parameter.

    Returns
    -------
    list of (name, ndarray)
        One entry per length-scale (``"lengthscale[d]"``) followed by the
        variance (``"variance"``) when the kernel has one.  Each matrix is
        ``theta * dK/dtheta``.
    """
    _check_params(spec, params)
    A = _columns(spec, X)
    B = A if X2 is None else _columns(spec, X2)
    s2 = _variance(spec, params)
    out = []
    if spec.family in STATIONARY:
        d2 = _scaled_sqdist(A, B, params.lengthscales)
        r2 = d2.sum(axis=-1)
        if spec.family == "gaussian":
            base = s2 * np.exp(-0.5 * r2)
        else:
            # dk/dlog l_d = 3 sigma2 exp(-sqrt3 r) (d_d / l_d)^2
            base = 3.0 * s2 * np.exp(-_SQRT3 * np.sqrt(r2))
        for d in range(spec.n_lengthscales):
            out.append((f"lengthscale[{d}]", base * d2[..., d]))
    if spec.has_variance:
        out.append(("variance", eval_kernel(spec, params, X, X2)))
    return out

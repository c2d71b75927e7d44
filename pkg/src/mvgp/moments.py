"""Closed-form predictive moments of new observations.

For a latent value f ~ N(mu, s2) and a new observation y | f, the mean and
variance of y are computed without numerical integration:

* Binomial (logit link): the logistic is replaced by a two-component probit
  mixture p(f) ~ a Phi(f / v1) + (1 - a) Phi(f / v2).  Gaussian expectations
  of products of probits reduce to Gaussian CDFs:

      int N(x | mu, s2) prod_r Phi((x - m_r) / v_r) dx = F_N(mu 1 | m, diag(v^2) + s2 1 1^T)

  and E[p(f)^2] needs the bivariate normal CDF.
* Negative binomial / Poisson (log link): lognormal moments through the
  Gaussian moment generating function.
* Gaussian: mean mu, variance s2 + noise.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr

from .errors import ApproximationError, DomainError, ShapeError

_TWO_PI = 2.0 * np.pi


def _gl_half(n):
    x, w = np.polynomial.legendre.leggauss(n)
    keep = x > 0
    return x[keep], w[keep]


# Gauss-Legendre rules with 6, 12 and 20 points (positive halves)
_GL = {6: _gl_half(6), 12: _gl_half(12), 20: _gl_half(20)}


def _bvnu_core(h, k, r):
    """P(X > h, Y > k) for finite h, k and 0 < |r| <= 1 (arrays of equal shape)."""
    out = np.empty_like(h)
    absr = np.abs(r)
    for npts, sel in ((6, absr < 0.3), (12, (absr >= 0.3) & (absr < 0.75)), (20, absr >= 0.75)):
        if not np.any(sel):
            continue
        xh, wh = _GL[npts]
        x = np.concatenate([1 - xh, 1 + xh])
        w = np.concatenate([wh, wh])
        hh, kk, rr = h[sel], k[sel], r[sel]
        res = np.empty_like(hh)
        low = np.abs(rr) < 0.925
        if np.any(low):
            h1, k1, r1 = hh[low], kk[low], rr[low]
            hk = h1 * k1
            hs = 0.5 * (h1 * h1 + k1 * k1)
            asr = 0.5 * np.arcsin(r1)
            sn = np.sin(asr[:, None] * x[None, :])
            bvn = np.exp((sn * hk[:, None] - hs[:, None]) / (1 - sn * sn)) @ w
            res[low] = bvn * asr / _TWO_PI + ndtr(-h1) * ndtr(-k1)
        high = ~low
        if np.any(high):
            res[high] = _bvnu_high(hh[high], kk[high], rr[high], x, w)
        out[sel] = res
    return out


def _bvnu_high(h, k, r, x, w):
    k = np.where(r < 0, -k, k)
    hk = h * k
    bvn = np.zeros_like(h)
    inner = np.abs(r) < 1
    if np.any(inner):
        hi, ki, ri, hki = h[inner], k[inner], r[inner], hk[inner]
        as_ = 1 - ri * ri
        a = np.sqrt(as_)
        bs = (hi - ki) ** 2
        c = (4 - hki) / 8
        d = (12 - hki) / 80
        asr = -0.5 * (bs / as_ + hki)
        b = np.where(asr > -100,
                     a * np.exp(np.maximum(asr, -100))
                     * (1 - c * (bs - as_) * (1 - d * bs) / 3 + c * d * as_ * as_), 0.0)
        bsq = np.sqrt(bs)
        sp = np.sqrt(_TWO_PI) * ndtr(-bsq / a)
        b = np.where(hki > -100,
                     b - np.exp(-0.5 * np.minimum(hki, 100) * (hki > -100)) * sp * bsq
                     * (1 - c * bs * (1 - d * bs) / 3), b)
        a2 = a / 2
        xs = (a2[:, None] * x[None, :]) ** 2
        asr2 = -0.5 * (bs[:, None] / xs + hki[:, None])
        ok = asr2 > -100
        spx = 1 + c[:, None] * xs * (1 + 5 * d[:, None] * xs)
        rs = np.sqrt(1 - xs)
        ep = np.exp(-0.5 * hki[:, None] * xs / (1 + rs) ** 2) / rs
        terms = np.where(ok, np.exp(np.where(ok, asr2, 0.0)) * (spx - ep), 0.0)
        bvn[inner] = (a2 * (terms @ w) - b) / _TWO_PI
    pos = r > 0
    res = np.empty_like(h)
    res[pos] = bvn[pos] + ndtr(-np.maximum(h[pos], k[pos]))
    neg = ~pos
    if np.any(neg):
        hn, kn, bn = h[neg], k[neg], bvn[neg]
        L = np.where(hn < 0, ndtr(kn) - ndtr(hn), ndtr(-hn) - ndtr(-kn))
        res[neg] = np.where(hn >= kn, -bn, L - bn)
    return res


def bvn_cdf(b1, b2, rho):
    """Standard bivariate normal CDF P(Z1 <= b1, Z2 <= b2).

    Vectorized over broadcastable inputs.  Uses Gauss-Legendre quadrature
    of the correlation integral (Drezner-Wesolowsky form with Genz's
    refinements for |rho| near one); absolute error is about 1e-15.
    """
    b1, b2, rho = np.broadcast_arrays(np.asarray(b1, float), np.asarray(b2, float),
                                      np.asarray(rho, float))
    scalar = b1.ndim == 0
    h, k, r = (-b1).ravel().copy(), (-b2).ravel().copy(), rho.ravel().copy()
    if np.any(np.abs(r) > 1 + 1e-12) or np.any(np.isnan(r)):
        raise DomainError("correlation must lie in [-1, 1]")
    r = np.clip(r, -1.0, 1.0)
    out = np.empty_like(h)
    fin = np.isfinite(h) & np.isfinite(k)
    # infinite limits: P(X > h, Y > k)
    inf_any = np.isposinf(h) | np.isposinf(k)
    out[inf_any] = 0.0
    m = ~inf_any & np.isneginf(h)
    out[m] = ndtr(-k[m])
    m = ~inf_any & ~np.isneginf(h) & np.isneginf(k)
    out[m] = ndtr(-h[m])
    zero = fin & (r == 0)
    out[zero] = ndtr(-h[zero]) * ndtr(-k[zero])
    rest = fin & (r != 0)
    if np.any(rest):
        out[rest] = _bvnu_core(h[rest], k[rest], r[rest])
    out = np.clip(out, 0.0, 1.0).reshape(b1.shape) + 0.0
    return float(out) if scalar else out


def mvn_cdf(x, mean, cov):
    """Gaussian CDF F_N(x | mean, cov) for N = 1 or 2."""
    x = np.atleast_1d(np.asarray(x, float))
    mean = np.atleast_1d(np.asarray(mean, float))
    cov = np.atleast_2d(np.asarray(cov, float))
    N = x.size
    if N > 2:
        raise ShapeError("only one- and two-dimensional Gaussian CDFs are supported")
    if mean.size != N or cov.shape != (N, N):
        raise ShapeError("mean and covariance must match the dimension of x")
    s = np.sqrt(np.diag(cov))
    u = (x - mean) / s
    if N == 1:
        return float(ndtr(u[0]))
    return bvn_cdf(u[0], u[1], cov[0, 1] / (s[0] * s[1]))


def gauss_probit_integral(mu, sigma2, m, v):
    """Expectation of a product of probits under a Gaussian.

    Computes E[prod_r Phi((x - m_r) / v_r)] for x ~ N(mu, sigma2) in closed
    form as F_N(mu 1 | m, diag(v^2) + sigma2 1 1^T).

    Parameters
    ----------
    mu, sigma2 : float
    m, v : sequence of float, length 1 or 2
    """
    m = np.atleast_1d(np.asarray(m, float))
    v = np.atleast_1d(np.asarray(v, float))
    if m.size != v.size:
        raise ShapeError("shift and scale lists must have equal length")
    if m.size > 2:
        raise ShapeError("products of more than two probits are not supported")
    if np.any(v <= 0) or sigma2 < 0:
        raise DomainError("scales must be positive and the variance nonnegative")
    V = np.diag(v**2) + sigma2
    return mvn_cdf(np.full(m.size, mu), m, V)


def gauss_cdf_of_gauss_integral(mu, m, V, Sigma):
    """E[F_N(x | m, V)] for x ~ N(mu, Sigma), equal to F_N(mu | m, V + Sigma)."""
    mu = np.atleast_1d(np.asarray(mu, float))
    V = np.atleast_2d(np.asarray(V, float))
    Sigma = np.atleast_2d(np.asarray(Sigma, float))
    if mu.size > 2:
        raise ShapeError("only N <= 2 is supported")
    return mvn_cdf(mu, m, V + Sigma)


# ---------------------------------------------------------------------------
# probit mixture approximation of the logistic function
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbitMixture:
    """p(f) ~ a Phi(f / v1) + (1 - a) Phi(f / v2)."""

    a: float
    v1: float
    v2: float
    max_abs_error: float = np.nan

    def __call__(self, f):
        f = np.asarray(f, float)
        return self.a * ndtr(f / self.v1) + (1 - self.a) * ndtr(f / self.v2)


def _logistic(f):
    return 0.5 * (1.0 + np.tanh(0.5 * f))


def _unpack(t):
    return 1.0 / (1.0 + np.exp(-t[0])), np.exp(t[1]), np.exp(t[2])


def _mix_err(t, f, target):
    a, v1, v2 = _unpack(t)
    return a * ndtr(f / v1) + (1 - a) * ndtr(f / v2) - target


def certify_error(mix, n=100_001, lim=10.0):
    """Maximum absolute error to the logistic on an n-point grid over [-lim, lim]."""
    f = np.linspace(-lim, lim, n)
    return float(np.max(np.abs(mix(f) - _logistic(f))))


@lru_cache(maxsize=4)
def fit_probit_mixture(max_error=5.2e-4):
    """Fit the mixture constants by minimizing the sup-norm error.

    Least squares gives a starting point, successive L_p fits with growing p
    approach the minimax solution and a final Nelder-Mead run on the max
    error polishes it.  Odd symmetry of both functions means only f >= 0
    needs to be fitted.  The certified error is evaluated on a 10^5-point
    grid over [-10, 10].

    Parameters
    ----------
    max_error : float
        Gate on the certified error; exceeding it raises.  The best
        attainable sup error of this family is about 5.1e-4.

    Raises
    ------
    ApproximationError
        If the certified error exceeds `max_error`.
    """
    f = np.linspace(0.0, 10.0, 2001)
    target = _logistic(f)
    t = np.array([0.0, np.log(1.3), np.log(2.3)])
    t = minimize(lambda s: np.sum(_mix_err(s, f, target) ** 2), t, method="Nelder-Mead",
                 options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 4000}).x
    for p in (8, 32, 128):
        scale = np.max(np.abs(_mix_err(t, f, target)))
        t = minimize(lambda s: np.mean((np.abs(_mix_err(s, f, target)) / scale) ** p), t,
                     method="Nelder-Mead",
                     options={"xatol": 1e-11, "fatol": 1e-14, "maxiter": 4000}).x
    t = minimize(lambda s: np.max(np.abs(_mix_err(s, f, target))), t, method="Nelder-Mead",
                 options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 4000}).x
    a, v1, v2 = _unpack(t)
    if v1 > v2:
        a, v1, v2 = 1 - a, v2, v1
    mix = ProbitMixture(float(a), float(v1), float(v2))
    err = certify_error(mix)
    mix = ProbitMixture(mix.a, mix.v1, mix.v2, err)
    if not err <= max_error:
        raise ApproximationError(
            f"probit mixture sup error {err:.3e} exceeds the gate {max_error:.3e}")
    return mix


# ---------------------------------------------------------------------------
# predictive moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictiveMoments:
    mean: np.ndarray
    variance: np.ndarray


def _bcast(*xs):
    return np.broadcast_arrays(*[np.asarray(x, float) for x in xs])


def _ret(m, v, like):
    if np.ndim(like) == 0:
        return PredictiveMoments(float(m), float(v))
    return PredictiveMoments(m, v)


def binomial_moments(mu, sigma2, z, mixture=None):
    """Mean and variance of a binomial count with logit-Gaussian success probability.

    Parameters
    ----------
    mu, sigma2 : float or ndarray
        Latent predictive mean and variance.
    z : float or ndarray
        Number of trials.
    mixture : ProbitMixture, optional
        Defaults to :func:`fit_probit_mixture`.
    """
    mix = fit_probit_mixture() if mixture is None else mixture
    mu_, s2, z_ = _bcast(mu, sigma2, z)
    if np.any(s2 < 0):
        raise DomainError("latent variance must be nonnegative")
    a, v = mix.a, (mix.v1, mix.v2)
    w = (a, 1 - a)
    Ep = sum(w[i] * ndtr(mu_ / np.sqrt(s2 + v[i] ** 2)) for i in range(2))
    Ep2 = np.zeros_like(mu_)
    for i in range(2):
        for j in range(2):
            si = np.sqrt(s2 + v[i] ** 2)
            sj = np.sqrt(s2 + v[j] ** 2)
            Ep2 = Ep2 + w[i] * w[j] * bvn_cdf(mu_ / si, mu_ / sj, s2 / (si * sj))
    mean = z_ * Ep
    var = mean - mean**2 + (z_**2 - z_) * Ep2
    return _ret(mean, np.maximum(var, 0.0), mu)


def negbin_moments(mu, sigma2, z, r, printed_bracket=False):
    """Mean and variance of a negative binomial count with lognormal mean.

    With m = z exp(f) and f ~ N(mu, s2),

        E[y] = z exp(mu + s2 / 2)
        V[y] = E[y] + z^2 exp(2 mu + s2) (exp(s2) (r + 1) / r - 1).

    Parameters
    ----------
    printed_bracket : bool
        Debug switch replacing exp(s2) in the bracket by exp(s2 / 2), a
        variant of the formula that does not match the law of total
        variance.  Kept only so the difference can be demonstrated.
    """
    mu_, s2, z_, r_ = _bcast(mu, sigma2, z, r)
    if np.any(s2 < 0) or np.any(r_ <= 0) or np.any(z_ <= 0):
        raise DomainError("need sigma2 >= 0, r > 0 and z > 0")
    mean = z_ * np.exp(mu_ + 0.5 * s2)
    g = np.exp(0.5 * s2 if printed_bracket else s2)
    var = mean + z_**2 * np.exp(2 * mu_ + s2) * (g * (r_ + 1) / r_ - 1)
    return _ret(mean, var, mu)


def poisson_moments(mu, sigma2, z):
    """Poisson count with lognormal mean (the r -> infinity limit)."""
    mu_, s2, z_ = _bcast(mu, sigma2, z)
    mean = z_ * np.exp(mu_ + 0.5 * s2)
    var = mean + z_**2 * np.exp(2 * mu_ + s2) * np.expm1(s2)
    return _ret(mean, var, mu)


def gaussian_moments(mu, sigma2, noise):
    mu_, s2, n_ = _bcast(mu, sigma2, noise)
    return _ret(mu_ + 0.0, s2 + n_, mu)


def predictive_moments(model, mu, sigma2, z=1.0, mixture=None):
    """Dispatch on an :class:`~mvgp.likelihoods.ObsModel`."""
    if model.kind == "binomial":
        return binomial_moments(mu, sigma2, z, mixture)
    if model.kind == "negbin":
        return negbin_moments(mu, sigma2, z, model.r)
    if model.kind == "poisson":
        return poisson_moments(mu, sigma2, z)
    return gaussian_moments(mu, sigma2, model.noise)

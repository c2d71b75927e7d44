"""Hyperparameter packing, priors and MAP optimization.

All positive parameters are represented by their logarithms and correlation
matrices by the unconstrained coordinates of :mod:`mvgp.coreg`.  Priors are
densities over these unconstrained coordinates, i.e. they include the
log-Jacobian of each transform.
"""

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .coreg import corr_prior_logpdf, delta_to_corr, n_pairs
from .errors import SchemaError


# ---------------------------------------------------------------------------
# parameter vector schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamEntry:
    key: tuple
    kind: str  # "variance", "lengthscale", "delta" or "lik"


class ParamSchema:
    """Order-stable mapping between model parameters and a flat vector.

    Parameters
    ----------
    coreg : CoregSet
        Template defining which terms, members and kernels exist.
    models : list of ObsModel
    """

    def __init__(self, coreg, models):
        self._coreg = copy.deepcopy(coreg)
        self._models = list(models)
        entries = [ParamEntry(("offset", j), "variance") for j in range(coreg.J)]
        for t in coreg.terms:
            for j in t.member_index:
                entries.append(ParamEntry((t.name, "variance", int(j)), "variance"))
            for j in t.member_index:
                for d in range(t.kernel.n_lengthscales):
                    entries.append(ParamEntry((t.name, "lengthscale", int(j), d), "lengthscale"))
            if t.coupled and t.member_index.size > 1:
                for k in range(n_pairs(t.J)):
                    entries.append(ParamEntry((t.name, "delta", k), "delta"))
        for j, m in enumerate(models):
            if m.param_name is not None:
                entries.append(ParamEntry(("lik", j), "lik"))
        self.entries = entries
        self.index = {e.key: i for i, e in enumerate(entries)}

    def __len__(self):
        return len(self.entries)

    @property
    def keys(self):
        return [e.key for e in self.entries]

    def segment(self, kind):
        return np.array([i for i, e in enumerate(self.entries) if e.kind == kind], dtype=int)

    def pack(self, coreg, models):
        """Flat unconstrained vector from parameter objects."""
        x = np.empty(len(self.entries))
        terms = {t.name: t for t in coreg.terms}
        for i, e in enumerate(self.entries):
            k = e.key
            try:
                if k[0] == "offset":
                    x[i] = np.log(coreg.offset_var[k[1]])
                elif k[0] == "lik":
                    x[i] = np.log(models[k[1]].param_value)
                elif k[1] == "variance":
                    x[i] = np.log(terms[k[0]].variances[k[2]])
                elif k[1] == "lengthscale":
                    x[i] = np.log(terms[k[0]].lengthscales[k[2]][k[3]])
                else:
                    x[i] = terms[k[0]].delta[k[2]]
            except (KeyError, IndexError, TypeError) as exc:
                raise SchemaError(f"parameters do not match schema at {k}") from exc
        return x

    def unpack(self, x):
        """Parameter objects ``(coreg, models)`` from a flat vector."""
        x = np.asarray(x, dtype=float)
        if x.shape != (len(self.entries),):
            raise SchemaError(f"expected a vector of length {len(self.entries)}, got shape {x.shape}")
        coreg = copy.deepcopy(self._coreg)
        models = list(self._models)
        terms = {t.name: t for t in coreg.terms}
        for t in coreg.terms:
            t.lengthscales = [None if ls is None else np.array(ls, dtype=float)
                              for ls in t.lengthscales]
        for v, e in zip(x, self.entries):
            k = e.key
            if k[0] == "offset":
                coreg.offset_var[k[1]] = np.exp(v)
            elif k[0] == "lik":
                models[k[1]] = models[k[1]].with_param(np.exp(v))
            elif k[1] == "variance":
                terms[k[0]].variances[k[2]] = np.exp(v)
            elif k[1] == "lengthscale":
                terms[k[0]].lengthscales[k[2]][k[3]] = np.exp(v)
            else:
                terms[k[0]].delta[k[2]] = v
        return coreg, models

    def vector_from_dict(self, d):
        """Arrange a key -> value mapping as a vector (missing keys give 0)."""
        return np.array([d.get(k, 0.0) for k in self.keys])


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------


def half_t_logpdf(x, scale2=4.0, df=4.0):
    """Log density of a Student-t(0, scale2, df) folded at zero, for x >= 0."""
    x = np.asarray(x, float)
    s = np.sqrt(scale2)
    u = x / s
    c = gammaln(0.5 * (df + 1)) - gammaln(0.5 * df) - 0.5 * np.log(df * np.pi)
    return np.log(2.0) + c - 0.5 * (df + 1) * np.log1p(u * u / df) - np.log(s)


def half_inv_t_logpdf(x, scale2=1.0, df=4.0):
    """Log density of 1 / X where X is half-Student-t."""
    x = np.asarray(x, float)
    return half_t_logpdf(1.0 / x, scale2, df) - 2.0 * np.log(x)


def _logscale_half_t(theta, scale2, df, inverse=False):
    """Half-t prior on exp(theta) (or exp(-theta)) in log coordinates with gradient."""
    sgn = -1.0 if inverse else 1.0
    u = np.exp(sgn * theta) / np.sqrt(scale2)
    # density of theta: p_X(e^{s theta}) e^{s theta}, X half-t
    val = half_t_logpdf(np.exp(sgn * theta), scale2, df) + sgn * theta
    grad = sgn * (1.0 - (df + 1) * u * u / (df + u * u))
    return val, grad


@dataclass
class PriorSpec:
    """Weakly informative hyperparameter priors.

    Attributes
    ----------
    variance_scale2, variance_df : float
        Half-Student-t on every variance (offsets, term variances).
    lengthscale_scale2, lengthscale_df : float
        Half-inverse-Student-t on length-scales.
    corr_df : float or None
        Degrees of freedom of the marginally uniform correlation prior;
        None means (number of coupled species) + 1.
    lik_prior : str
        ``"flat"`` (improper, flat in the log parameter) or ``"half-t"``
        (same prior as the variances).
    """

    variance_scale2: float = 4.0
    variance_df: float = 4.0
    lengthscale_scale2: float = 1.0
    lengthscale_df: float = 4.0
    corr_df: float = None
    lik_prior: str = "flat"


def prior_logpdf_grad(spec, schema, x):
    """Log prior density over the flat vector and its gradient.

    Masked correlation coordinates (pairs involving a species that does not
    carry the term) receive no prior and zero gradient.
    """
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    total = 0.0
    idx = schema.segment("variance")
    if idx.size:
        v, g = _logscale_half_t(x[idx], spec.variance_scale2, spec.variance_df)
        total += float(np.sum(v))
        grad[idx] = g
    idx = schema.segment("lengthscale")
    if idx.size:
        v, g = _logscale_half_t(x[idx], spec.lengthscale_scale2, spec.lengthscale_df, inverse=True)
        total += float(np.sum(v))
        grad[idx] = g
    idx = schema.segment("lik")
    if idx.size and spec.lik_prior == "half-t":
        v, g = _logscale_half_t(x[idx], spec.variance_scale2, spec.variance_df)
        total += float(np.sum(v))
        grad[idx] = g
    elif spec.lik_prior not in ("flat", "half-t"):
        raise SchemaError(f"unknown likelihood-parameter prior {spec.lik_prior!r}")
    coreg = schema._coreg
    for t in coreg.terms:
        if not (t.coupled and t.member_index.size > 1):
            continue
        pos = np.array([schema.index[(t.name, "delta", k)] for k in range(n_pairs(t.J))])
        act = t.active_pairs()
        m = t.member_index.size
        lp, g = corr_prior_logpdf(delta_to_corr(x[pos[act]], m), v=spec.corr_df)
        total += lp
        grad[pos[act]] += g
    return total, grad


# ---------------------------------------------------------------------------
# scaled conjugate gradients
# ---------------------------------------------------------------------------


@dataclass
class OptResult:
    """Outcome of :func:`scg` or :func:`optimize_map`.

    `fun` and `grad` refer to the maximized objective.
    """

    x: np.ndarray
    fun: float
    grad: np.ndarray
    converged: bool
    n_iter: int
    n_eval: int
    message: str
    trace: list = field(default_factory=list)
    restarts: list = field(default_factory=list)

    @property
    def grad_norm(self):
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


def _safe_eval(fun, x):
    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            f, g = fun(x)
        f = float(f)
        g = np.asarray(g, dtype=float)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return np.inf, None
        return f, g
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError):
        return np.inf, None


def scg(fun, x0, gtol=1e-4, max_iter=500, xtol=1e-12, ftol=1e-14, callback=None):
    """Minimize with Moller's scaled conjugate gradient method.

    Parameters
    ----------
    fun : callable
        Returns ``(value, gradient)`` of the function to minimize.  Failed or
        non-finite evaluations are treated as an uphill step.
    x0 : ndarray
    gtol : float
        Stop when the sup norm of the gradient falls below this.
    max_iter : int
    xtol, ftol : float
        Secondary stopping rule on step size and value change.

    Returns
    -------
    OptResult
        With `fun`/`grad` of the minimized function.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    f, g = _safe_eval(fun, x)
    if g is None:
        raise ValueError("objective is not finite at the starting point")
    n_eval = 1
    trace = [f]
    if n == 0 or np.max(np.abs(g)) < gtol:
        return OptResult(x, f, g, True, 0, n_eval, "gradient below tolerance", trace)
    sigma0 = 1e-4
    lam, lam_min, lam_max = 1e-6, 1e-15, 1e100
    d = -g
    success = True
    nsuccess = 0
    mu = kappa = theta = 0.0
    msg = "iteration limit reached"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if success:
            mu = d @ g
            if mu >= 0:
                d = -g
                mu = d @ g
            kappa = d @ d
            if kappa < np.finfo(float).eps:
                converged = True
                msg = "search direction vanished"
                break
            sigma = sigma0 / np.sqrt(kappa)
            _, gplus = _safe_eval(fun, x + sigma * d)
            n_eval += 1
            if gplus is None:
                gplus = g
            theta = d @ (gplus - g) / sigma
        delta = theta + lam * kappa
        if delta <= 0:
            delta = lam * kappa
            lam = lam - theta / kappa
        alpha = -mu / delta
        xnew = x + alpha * d
        fnew, gnew = _safe_eval(fun, xnew)
        n_eval += 1
        Delta = 2.0 * (fnew - f) / (alpha * mu) if np.isfinite(fnew) else -np.inf
        if Delta >= 0:
            success = True
            nsuccess += 1
            step = np.max(np.abs(alpha * d))
            fold, gold = f, g
            x, f, g = xnew, fnew, gnew
            trace.append(f)
            if callback is not None:
                callback(x, f)
            if np.max(np.abs(g)) < gtol:
                converged = True
                msg = "gradient below tolerance"
                break
            if step < xtol and abs(f - fold) < ftol:
                msg = "step and value change below tolerance"
                break
        else:
            success = False
        if Delta < 0.25:
            lam = min(4.0 * lam, lam_max)
        if Delta > 0.75:
            lam = max(0.5 * lam, lam_min)
        if lam >= lam_max:
            msg = "scale parameter diverged"
            break
        if nsuccess == n:
            d = -g
            nsuccess = 0
        elif success:
            gamma = (gold - g) @ g / mu
            d = gamma * d - g
    return OptResult(x, f, g, converged, it, n_eval, msg, trace)


def optimize_map(objective, x0, gtol=1e-4, max_iter=500, n_restarts=0, restart_scale=0.5,
                 seed=0, callback=None):
    """Maximize an objective (e.g. log q + log prior) with SCG and restarts.

    Parameters
    ----------
    objective : callable
        Returns ``(value, gradient)`` of the function to maximize.
    x0 : ndarray
        Starting point in unconstrained coordinates.
    gtol : float
        Convergence threshold on the gradient sup norm.
    n_restarts : int
        Additional runs from ``x0 + restart_scale * N(0, I)``.
    seed : int
        Seed for the restart perturbations.

    Returns
    -------
    OptResult
        The best point over all runs, flagged ``converged=False`` if its
        gradient norm is above `gtol`.  ``restarts`` lists every run.
    """

    def neg(x):
        f, g = objective(x)
        return -f, -np.asarray(g)

    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(seed)
    starts = [x0] + [x0 + restart_scale * rng.standard_normal(x0.size) for _ in range(n_restarts)]
    runs = []
    for k, s in enumerate(starts):
        try:
            r = scg(neg, s, gtol=gtol, max_iter=max_iter, callback=callback)
        except ValueError:
            if k == 0:
                raise
            continue
        runs.append(OptResult(r.x, -r.fun, -r.grad, r.converged, r.n_iter, r.n_eval, r.message,
                              [-v for v in r.trace]))
    best = max(runs, key=lambda r: r.fun)
    best.restarts = [(r.fun, r.grad_norm, r.converged) for r in runs]
    return best

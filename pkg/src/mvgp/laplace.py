"""Laplace approximation for latent Gaussian models.

The latent MAP is found by Newton iterations written in terms of
B = I + W^{1/2} C W^{1/2}, which is well conditioned whenever W >= 0, and the
iterate is carried as ``a`` with f = C a.  The same factorization gives the
approximate log marginal likelihood

    log q(y) = log p(y | f) - a^T f / 2 - sum(log diag(chol(B))),

its gradient with respect to covariance and likelihood parameters
(including the implicit dependence of the mode on the parameters) and the
Gaussian predictive distribution of latent values at new inputs.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import ConvergenceError, ShapeError


@dataclass(frozen=True)
class LaplaceState:
    """Converged Laplace approximation.

    Attributes
    ----------
    f_hat : ndarray
        Latent MAP.
    a : ndarray
        C^{-1} f_hat, equal to ``grad_ll`` at convergence.
    W : ndarray
        Negative second derivative of the log likelihood at `f_hat`.
    chol_B : ndarray
        Lower Cholesky factor of I + W^{1/2} C W^{1/2}.
    grad_ll, d3 : ndarray
        First and third derivatives of the log likelihood at `f_hat`.
    log_q : float
        Approximate log marginal likelihood.
    """

    f_hat: np.ndarray
    a: np.ndarray
    W: np.ndarray
    chol_B: np.ndarray
    grad_ll: np.ndarray
    d3: np.ndarray
    C: np.ndarray
    log_q: float
    loglik: float
    n_iter: int
    grad_norm: float
    lik: object

    @property
    def sW(self):
        return np.sqrt(self.W)

    def solve_B(self, x):
        return cho_solve((self.chol_B, True), x)

    def R_matvec(self, x):
        """W^{1/2} B^{-1} W^{1/2} x, i.e. (C + W^{-1})^{-1} x."""
        sW = self.sW
        if x.ndim == 1:
            return sW * self.solve_B(sW * x)
        return sW[:, None] * self.solve_B(sW[:, None] * x)

    def posterior_diag(self):
        """Diagonal of (C^{-1} + W)^{-1}."""
        V = solve_triangular(self.chol_B, self.sW[:, None] * self.C, lower=True)
        return np.diag(self.C) - np.sum(V * V, axis=0)

    def posterior_cov(self):
        V = solve_triangular(self.chol_B, self.sW[:, None] * self.C, lower=True)
        S = self.C - V.T @ V
        return 0.5 * (S + S.T)


@dataclass(frozen=True)
class LatentPredictive:
    """Gaussian predictive distribution of latent values.

    `cov` is None when only the diagonal was requested.
    """

    mean: np.ndarray
    var: np.ndarray
    cov: np.ndarray = None
    target: str = "full"


def _factor(C, W):
    sW = np.sqrt(W)
    B = np.eye(C.shape[0]) + sW[:, None] * C * sW[None, :]
    return cholesky(B, lower=True), sW


def find_latent_map(C, lik, tol=1e-6, max_iter=100, f0=None):
    """Locate the mode of p(y | f) N(f | 0, C).

    Parameters
    ----------
    C : ndarray, shape (n, n)
        Prior covariance (positive definite after jitter).
    lik : JointLikelihood
    tol : float
        Convergence threshold on the sup norm of the objective gradient
        ``grad_ll - C^{-1} f``.
    max_iter : int
    f0 : ndarray, optional
        Starting point, default zeros (the prior mean).  Used only as a
        warm start through a = C^{-1} f0 solved in the least squares sense.

    Returns
    -------
    LaplaceState

    Raises
    ------
    ConvergenceError
        If the tolerance is not reached within `max_iter` iterations.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if C.shape != (n, n) or len(lik) != n:
        raise ShapeError("covariance and likelihood sizes differ")
    if n == 0:
        e = np.zeros(0)
        return LaplaceState(e, e, e, np.zeros((0, 0)), e, e, C, 0.0, 0.0, 0, 0.0, lik)
    a = np.zeros(n) if f0 is None else np.linalg.lstsq(C, f0, rcond=None)[0]
    f = C @ a

    def psi(a_, f_):
        # trial points may overflow; they are rejected by the line search
        with np.errstate(over="ignore", invalid="ignore"):
            return lik.loglik(f_) - 0.5 * a_ @ f_

    obj = psi(a, f)
    gnorm = np.inf
    eps = 64 * np.finfo(float).eps
    for it in range(max_iter + 1):
        d1, d2, _ = lik.derivs(f)
        gnorm = float(np.max(np.abs(d1 - a)))
        if gnorm < tol:
            break
        if it == max_iter:
            raise ConvergenceError(
                f"latent Newton did not converge in {max_iter} iterations "
                f"(gradient norm {gnorm:.3e})", grad_norm=gnorm, n_iter=it)
        W = np.maximum(-d2, 0.0)
        L, sW = _factor(C, W)
        b = W * f + d1
        # a = b - sW B^-1 sW C b cancels badly when W is large; on those sites
        # use the equivalent a = sW B^-1 (b / sW)
        big = W > 1.0
        b2 = np.where(big, 0.0, b)
        rhs = np.where(big, b / np.where(big, sW, 1.0), 0.0) - sW * (C @ b2)
        a_new = sW * cho_solve((L, True), rhs) + b2
        da = a_new - a
        df = C @ da
        step = 1.0
        for _ in range(31):
            a_try = a + step * da
            f_try = f + step * df
            obj_try = psi(a_try, f_try)
            if np.isfinite(obj_try) and obj_try >= obj - eps * (1.0 + abs(obj)):
                break
            step *= 0.5
        else:
            # no ascent along the Newton direction: accept only if close to
            # the optimum in floating point terms
            if gnorm < 100 * tol:
                break
            raise ConvergenceError(
                f"latent line search failed (gradient norm {gnorm:.3e})",
                grad_norm=gnorm, n_iter=it)
        a, f, obj = a_try, f_try, obj_try
    d1, d2, d3 = lik.derivs(f)
    W = np.maximum(-d2, 0.0)
    L, _ = _factor(C, W)
    ll = lik.loglik(f)
    log_q = ll - 0.5 * a @ f - float(np.sum(np.log(np.diag(L))))
    return LaplaceState(f, a, W, L, d1, d3, C, float(log_q), ll, it, gnorm, lik)


def marginal_grad(state, cov_grads, lik_grads=None):
    """Gradient of log q(y) w.r.t. hyperparameters.

    Parameters
    ----------
    state : LaplaceState
    cov_grads : iterable
        Objects with attributes ``key``, ``rows``, ``block`` describing
        dC/dtheta (nonzero only on ``rows x rows``).
    lik_grads : iterable, optional
        Tuples ``(key, dlogp, dd1, dd2)`` from
        :meth:`JointLikelihood.param_grads`.

    Returns
    -------
    dict
        Maps each key to d log q / d theta.
    """
    if not np.isfinite(state.grad_norm):
        raise ConvergenceError("marginal_grad needs a converged Laplace state")
    C, a = state.C, state.a
    sW = state.sW
    n = a.size
    Rm = sW[:, None] * state.solve_B(np.diag(sW)) if n else np.zeros((0, 0))
    s2 = 0.5 * state.posterior_diag() * state.d3

    def implicit(b):
        return float(s2 @ (b - C @ (Rm @ b)))

    out = {}
    for g in cov_grads:
        r = g.rows
        b = np.zeros(n)
        b[r] = g.block @ a[r]
        explicit = 0.5 * a[r] @ b[r] - 0.5 * np.sum(Rm[np.ix_(r, r)] * g.block)
        out[g.key] = float(explicit) + implicit(b)
    if lik_grads is not None:
        sd = state.posterior_diag()
        for key, dlp, dd1, dd2 in lik_grads:
            out[key] = dlp + 0.5 * float(sd @ dd2) + implicit(C @ dd1)
    return out


def predict_latent(state, K_cross, K_test, target="full", full_cov=False):
    """Latent predictive distribution at test inputs.

    Parameters
    ----------
    state : LaplaceState
    K_cross : ndarray, shape (m, n)
        Prior covariance between the target component at the test inputs
        and the latent values at the training inputs.
    K_test : ndarray
        Prior covariance of the target at the test inputs, either the
        diagonal (shape (m,)) or the full matrix (shape (m, m)).
    target : str
        Label stored on the result.
    full_cov : bool
        Return the full covariance (requires a full `K_test`).
    """
    K_cross = np.atleast_2d(np.asarray(K_cross, dtype=float))
    if K_cross.shape[1] != state.a.size:
        raise ShapeError("cross-covariance columns must match training size")
    mean = K_cross @ state.a
    if state.a.size:
        V = solve_triangular(state.chol_B, state.sW[:, None] * K_cross.T, lower=True)
    else:
        V = np.zeros((0, K_cross.shape[0]))
    K_test = np.asarray(K_test, dtype=float)
    if full_cov:
        if K_test.ndim != 2:
            raise ShapeError("full covariance needs the full test covariance")
        cov = K_test - V.T @ V
        cov = 0.5 * (cov + cov.T)
        return LatentPredictive(mean, np.diag(cov).copy(), cov, target)
    kd = np.diag(K_test) if K_test.ndim == 2 else K_test
    return LatentPredictive(mean, kd - np.sum(V * V, axis=0), None, target)


def conditional_scenario(C_scen, lik_scen, K_cross, K_test, target="full", full_cov=False,
                         tol=1e-6, max_iter=100):
    """Predict latent values given hypothetical observations of other species.

    The latent mode is recomputed for the scenario observations alone, with
    hyperparameters held fixed, and the prediction is

        mean = K_cross grad log p(y_scen | f_hat)
        cov  = K_test - K_cross (C_scen + W^{-1})^{-1} K_cross^T,

    where the inverse is applied through the W^{1/2}-symmetrized
    factorization so zero entries of W are harmless.  An empty scenario
    gives the prior predictive.

    Returns
    -------
    (LatentPredictive, LaplaceState)
    """
    state = find_latent_map(C_scen, lik_scen, tol=tol, max_iter=max_iter)
    return predict_latent(state, K_cross, K_test, target=target, full_cov=full_cov), state


def laplace_state_at(C, lik, f_hat, a, W=None):
    """Rebuild a :class:`LaplaceState` at a known mode without Newton steps.

    Used when restoring a fitted model; `W` defaults to the value implied by
    the likelihood at `f_hat`.
    """
    f_hat = np.asarray(f_hat, dtype=float)
    a = np.asarray(a, dtype=float)
    d1, d2, d3 = lik.derivs(f_hat)
    W = np.maximum(-d2, 0.0) if W is None else np.asarray(W, dtype=float)
    L, _ = _factor(C, W)
    ll = lik.loglik(f_hat)
    log_q = ll - 0.5 * a @ f_hat - float(np.sum(np.log(np.diag(L))))
    gnorm = float(np.max(np.abs(d1 - a))) if a.size else 0.0
    return LaplaceState(f_hat, a, W, L, d1, d3, C, float(log_q), ll, 0, gnorm, lik)

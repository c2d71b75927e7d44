"""Correlation-matrix parameterization and LMC prior covariance assembly.

Interspecific correlation matrices are mapped to unconstrained coordinates
through partial-correlation-like quantities z in (-1, 1):

    z = 2 / (1 + exp(-delta)) - 1 = tanh(delta / 2)

and the lower Cholesky factor L of the correlation matrix is built row by row
so that every row has unit norm (row j holds z_{0j}, z_{1j} sqrt(1 - z_{0j}^2),
...).  A covariance matrix is then Sigma = D^{1/2} L L^T D^{1/2}.

Pairs (i, j), i < j, are ordered as ``numpy.triu_indices(J, 1)``.

A coregionalized additive term (spatial effect or one covariate feature)
contributes sum_l u_l(j, j') k_l(x, x') where u_l is the outer product of the
l'th column of the Cholesky factor of Sigma and k_l is species l's
correlation function.  Observations are stacked species-major.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, multigammaln

from .errors import DomainError, ShapeError, SizeError
from .kernels import KernelParams, KernelSpec, eval_kernel, eval_kernel_diag, kernel_param_grads

DEFAULT_MAX_ELEMENTS = 60_000_000
_LOG2 = np.log(2.0)
_LOG4 = np.log(4.0)


def n_pairs(J):
    return J * (J - 1) // 2


def pair_indices(J):
    return np.triu_indices(J, 1)


def _pair_lookup(J):
    rows, cols = pair_indices(J)
    lookup = -np.ones((J, J), dtype=int)
    lookup[rows, cols] = np.arange(rows.size)
    return lookup


def _one_minus_z2(delta):
    # 1 - tanh(d/2)^2 without cancellation
    e = np.exp(-np.abs(delta))
    return 4.0 * e / (1.0 + e) ** 2


def _log_one_minus_z2(delta):
    a = np.abs(delta)
    return _LOG4 - a - 2.0 * np.log1p(np.exp(-a))


def _chol_from_delta(delta, J):
    """Cholesky factors for a batch of unconstrained vectors, shape (..., J, J)."""
    delta = np.asarray(delta, dtype=float)
    batch = delta.shape[:-1]
    z = np.tanh(0.5 * delta)
    w = _one_minus_z2(delta)
    lookup = _pair_lookup(J)
    L = np.zeros(batch + (J, J))
    L[..., 0, 0] = 1.0
    for j in range(1, J):
        rem = np.ones(batch)
        for i in range(j):
            k = lookup[i, j]
            L[..., j, i] = z[..., k] * np.sqrt(rem)
            rem = rem * w[..., k]
        L[..., j, j] = np.sqrt(rem)
    return L


@dataclass
class CorrMatrix:
    """A J x J correlation matrix with its Cholesky factor and coordinates."""

    J: int
    R: np.ndarray
    L: np.ndarray
    delta: np.ndarray
    z: np.ndarray


def delta_to_corr(delta, J):
    """Map unconstrained coordinates to a correlation matrix.

    Parameters
    ----------
    delta : array_like, shape (J*(J-1)/2,)
    J : int

    Returns
    -------
    CorrMatrix
    """
    delta = np.asarray(delta, dtype=float).reshape(-1)
    if delta.size != n_pairs(J):
        raise ShapeError(f"expected {n_pairs(J)} coordinates for J={J}, got {delta.size}")
    L = _chol_from_delta(delta, J)
    R = L @ L.T
    R[np.diag_indices(J)] = 1.0
    return CorrMatrix(J=J, R=R, L=L, delta=delta.copy(), z=np.tanh(0.5 * delta))


def corr_to_delta(R):
    """Inverse of :func:`delta_to_corr`.

    Raises
    ------
    DomainError
        If `R` is not symmetric positive definite with unit diagonal.
    """
    if isinstance(R, CorrMatrix):
        R = R.R
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ShapeError("correlation matrix must be square")
    J = R.shape[0]
    if not np.allclose(np.diag(R), 1.0, rtol=0, atol=1e-10):
        raise DomainError("correlation matrix must have unit diagonal")
    if not np.allclose(R, R.T, rtol=0, atol=1e-12):
        raise DomainError("correlation matrix must be symmetric")
    try:
        L = np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise DomainError("correlation matrix is not positive definite") from None
    lookup = _pair_lookup(J)
    delta = np.zeros(n_pairs(J))
    for j in range(1, J):
        rem = 1.0
        for i in range(j):
            z = L[j, i] / np.sqrt(rem)
            z = min(max(z, -1.0 + 1e-16), 1.0 - 1e-16)
            delta[lookup[i, j]] = np.log1p(z) - np.log1p(-z)
            rem *= 1.0 - z * z
    return delta


def chol_delta_grads(delta, J):
    """Derivatives of the Cholesky factor w.r.t. each coordinate.

    Returns
    -------
    ndarray, shape (J*(J-1)/2, J, J)
    """
    delta = np.asarray(delta, dtype=float)
    z = np.tanh(0.5 * delta)
    w = _one_minus_z2(delta)
    L = _chol_from_delta(delta, J)
    lookup = _pair_lookup(J)
    out = np.zeros((delta.size, J, J))
    for j in range(1, J):
        rem = 1.0
        for i in range(j):
            k = lookup[i, j]
            # only row j depends on z_{ij}; dz/ddelta = w / 2
            out[k, j, i] = np.sqrt(rem) * 0.5 * w[k]
            out[k, j, i + 1 : j + 1] = -0.5 * z[k] * L[j, i + 1 : j + 1]
            rem *= w[k]
    return out


def corr_delta_grads(delta, J):
    """dR/d delta_k = dL L^T + L dL^T, shape (K, J, J)."""
    L = _chol_from_delta(np.asarray(delta, dtype=float), J)
    dL = chol_delta_grads(delta, J)
    dLLt = dL @ L.T
    return dLLt + np.swapaxes(dLLt, -1, -2)


def _minors_logdet(R):
    """log det of R with row/column j removed, for every j; batch aware."""
    J = R.shape[-1]
    out = []
    for j in range(J):
        keep = [i for i in range(J) if i != j]
        sub = R[..., keep, :][..., :, keep]
        out.append(np.linalg.slogdet(sub)[1] if keep else np.zeros(R.shape[:-2]))
    return np.stack(out, axis=-1)


def _log_normalizer(J, v):
    # the constant is only defined for v > J - 1; below that the density is improper
    if v <= J - 1:
        return 0.0
    return J * gammaln(0.5 * v) - multigammaln(0.5 * v, J)


def corr_log_density(R, v=None):
    """Log density of the marginally uniform prior in correlation coordinates.

    Accepts a single matrix or a stack (..., J, J).  `v` defaults to J + 1,
    for which every pairwise correlation is marginally uniform on (-1, 1).
    """
    R = np.asarray(R, dtype=float)
    J = R.shape[-1]
    if v is None:
        v = J + 1.0
    if v <= 0:
        raise DomainError("prior degrees of freedom must be positive")
    if J == 1:
        return np.zeros(R.shape[:-2]) if R.ndim > 2 else 0.0
    sign, logdet = np.linalg.slogdet(R)
    if np.any(sign <= 0):
        raise DomainError("correlation matrix is singular or indefinite")
    alpha = 0.5 * (v - 1.0) * (J - 1.0) - 1.0
    minors = _minors_logdet(R).sum(axis=-1)
    return _log_normalizer(J, v) + alpha * logdet - 0.5 * v * minors


def log_abs_jacobian(delta, J):
    """log |d(rho_12, ..., rho_{J-1,J}) / d(delta)| and its gradient."""
    delta = np.asarray(delta, dtype=float)
    rows, _ = pair_indices(J)
    weight = 0.5 * (J - rows)
    val = np.sum(weight * _log_one_minus_z2(delta), axis=-1) - delta.shape[-1] * _LOG2
    grad = -(J - rows) * 0.5 * np.tanh(0.5 * delta)
    return val, grad


def corr_prior_logpdf_batch(delta, J, v=None, include_jacobian=True):
    """Vectorized prior log density over a batch of coordinate vectors (N, K)."""
    delta = np.atleast_2d(np.asarray(delta, dtype=float))
    L = _chol_from_delta(delta, J)
    R = L @ np.swapaxes(L, -1, -2)
    out = corr_log_density(R, v)
    if include_jacobian:
        out = out + log_abs_jacobian(delta, J)[0]
    return out


def corr_prior_logpdf(R, v=None, include_jacobian=True):
    """Log prior of a correlation matrix in unconstrained coordinates.

    Parameters
    ----------
    R : CorrMatrix
    v : float, optional
        Degrees of freedom, default J + 1.
    include_jacobian : bool
        Add log |d rho / d delta| so the value is a density over delta.

    Returns
    -------
    logp : float
    grad : ndarray, shape (J*(J-1)/2,)
        Gradient w.r.t. the unconstrained coordinates.
    """
    if not isinstance(R, CorrMatrix):
        R = delta_to_corr(corr_to_delta(R), np.asarray(R).shape[0])
    J = R.J
    if v is None:
        v = J + 1.0
    if J == 1:
        return 0.0, np.zeros(0)
    logp = float(corr_log_density(R.R, v))
    alpha = 0.5 * (v - 1.0) * (J - 1.0) - 1.0
    G = alpha * np.linalg.inv(R.R)
    for j in range(J):
        keep = [i for i in range(J) if i != j]
        if keep:
            G[np.ix_(keep, keep)] -= 0.5 * v * np.linalg.inv(R.R[np.ix_(keep, keep)])
    dR = corr_delta_grads(R.delta, J)
    grad = np.einsum("ab,kab->k", G, dR)
    if include_jacobian:
        jv, jg = log_abs_jacobian(R.delta, J)
        logp += float(jv)
        grad = grad + jg
    return logp, grad


# ---------------------------------------------------------------------------
# LMC structures
# ---------------------------------------------------------------------------


@dataclass
class Layout:
    """Species index and input points for a stacked set of latent values.

    ``points`` holds the two spatial coordinates followed by covariate
    features; kernels select columns through ``KernelSpec.input_dims``.
    """

    species: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        self.species = np.asarray(self.species, dtype=int).reshape(-1)
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[0] != self.species.size:
            raise ShapeError("layout points must be (n, p) with one row per species entry")

    def __len__(self):
        return self.species.size

    def subset(self, idx):
        return Layout(self.species[idx], self.points[idx])


@dataclass
class LMCTerm:
    """One coregionalized additive term.

    Attributes
    ----------
    name : str
    kernel : KernelSpec
        Correlation kernel (unit variance) shared in form by all species.
    members : ndarray of bool, shape (J,)
        Species that carry this term.  Non-members have structurally zero
        rows and columns in the coregionalization matrix.
    variances : ndarray, shape (J,)
        Marginal variances (zero for non-members).
    lengthscales : list
        Per-species length-scale arrays (None for non-members or kernels
        without length-scales).
    coupled : bool
        Full correlation matrix over members when True, diagonal otherwise.
    delta : ndarray, shape (J*(J-1)/2,)
        Unconstrained coordinates; pairs involving a non-member are ignored.
    role : {"spatial", "covariate"}
    """

    name: str
    kernel: KernelSpec
    members: np.ndarray
    variances: np.ndarray
    lengthscales: list
    coupled: bool = False
    delta: np.ndarray = None
    role: str = "covariate"

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=bool)
        self.variances = np.asarray(self.variances, dtype=float)
        J = self.members.size
        if self.delta is None:
            self.delta = np.zeros(n_pairs(J))
        self.delta = np.asarray(self.delta, dtype=float)
        if self.variances.shape != (J,) or self.delta.shape != (n_pairs(J),):
            raise ShapeError(f"term {self.name!r}: parameter shapes do not match J={J}")
        if len(self.lengthscales) != J:
            raise ShapeError(f"term {self.name!r}: need one length-scale entry per species")
        if np.any(self.variances[self.members] <= 0):
            raise DomainError(f"term {self.name!r}: member variances must be positive")

    @property
    def J(self):
        return self.members.size

    @property
    def member_index(self):
        return np.flatnonzero(self.members)

    def active_pairs(self):
        """Boolean mask over all pairs: True where both species are members."""
        if not self.coupled:
            return np.zeros(n_pairs(self.J), dtype=bool)
        rows, cols = pair_indices(self.J)
        return self.members[rows] & self.members[cols]

    def corr(self):
        """Correlation matrix over the member species."""
        m = self.member_index.size
        if not self.coupled:
            return delta_to_corr(np.zeros(n_pairs(m)), m)
        return delta_to_corr(self.delta[self.active_pairs()], m)

    def chol(self):
        """Full J x J factor D^{1/2} L with zero rows/columns for non-members."""
        idx = self.member_index
        Lf = np.zeros((self.J, self.J))
        Lf[np.ix_(idx, idx)] = np.sqrt(self.variances[idx])[:, None] * self.corr().L
        return Lf

    def chol_delta_grads(self):
        """dLf/d delta for each active pair: list of (pair index, J x J)."""
        idx = self.member_index
        act = np.flatnonzero(self.active_pairs())
        if act.size == 0:
            return []
        sub = chol_delta_grads(self.delta[act], idx.size)
        sd = np.sqrt(self.variances[idx])[:, None]
        out = []
        for k, g in zip(act, sub):
            dLf = np.zeros((self.J, self.J))
            dLf[np.ix_(idx, idx)] = sd * g
            out.append((int(k), dLf))
        return out

    def cov(self):
        """The J x J coregionalization matrix Sigma."""
        Lf = self.chol()
        return Lf @ Lf.T

    def U(self, l):
        Lf = self.chol()
        return np.outer(Lf[:, l], Lf[:, l])

    def kernel_params(self, l):
        return KernelParams(lengthscales=self.lengthscales[l])


@dataclass
class CoregSet:
    """All prior covariance parameters of a multivariate additive GP."""

    offset_var: np.ndarray
    terms: list = field(default_factory=list)

    def __post_init__(self):
        self.offset_var = np.asarray(self.offset_var, dtype=float)

    @property
    def J(self):
        return self.offset_var.size

    @property
    def sigma0(self):
        return np.diag(self.offset_var)

    @property
    def sigma_eps(self):
        for t in self.terms:
            if t.role == "spatial":
                return t
        return None

    @property
    def sigma_h(self):
        return [t for t in self.terms if t.role == "covariate"]

    def term(self, name):
        for t in self.terms:
            if t.name == name or (name == "spatial" and t.role == "spatial"):
                return t
        raise DomainError(f"unknown latent component {name!r}")


def _check_size(n, m, max_elements):
    if max_elements is not None and n * m > max_elements:
        raise SizeError(
            f"refusing to assemble a {n} x {m} covariance (cap {max_elements} elements)"
        )


def _term_rows(term, layout, l):
    """Rows whose coefficient on column l of the factor can be nonzero."""
    if term.coupled:
        return np.flatnonzero(term.members[layout.species])
    return np.flatnonzero(layout.species == l)


def _term_block(term, A, B, l, Lf):
    ra = _term_rows(term, A, l)
    rb = _term_rows(term, B, l)
    ca = Lf[A.species[ra], l]
    cb = Lf[B.species[rb], l]
    if ra.size == 0 or rb.size == 0 or not (np.any(ca) and np.any(cb)):
        return None
    Pa, Pb = A.points[ra], B.points[rb]
    dims = list(term.kernel.input_dims)
    if np.isnan(Pa[:, dims]).any() or np.isnan(Pb[:, dims]).any():
        raise DomainError(f"missing input values for term {term.name!r}")
    same = A is B
    K = eval_kernel(term.kernel, term.kernel_params(l), Pa, None if same else Pb)
    return ra, rb, np.outer(ca, cb) * K


def _add_term(C, term, A, B):
    Lf = term.chol()
    for l in term.member_index:
        blk = _term_block(term, A, B, l, Lf)
        if blk is not None:
            ra, rb, M = blk
            C[np.ix_(ra, rb)] += M


def _add_offset(C, coreg, A, B):
    for j in range(coreg.J):
        ra = np.flatnonzero(A.species == j)
        rb = np.flatnonzero(B.species == j)
        if ra.size and rb.size:
            C[np.ix_(ra, rb)] += coreg.offset_var[j]


def _select_terms(coreg, target):
    if target in (None, "full"):
        return True, list(coreg.terms)
    if target == "offset":
        return True, []
    return False, [coreg.term(target)]


def assemble_lmc_cov(coreg, layout, layout2=None, target="full",
                     max_elements=DEFAULT_MAX_ELEMENTS):
    """Dense prior covariance of stacked latent values.

    Parameters
    ----------
    coreg : CoregSet
    layout : Layout
        Rows of the result.
    layout2 : Layout, optional
        Columns of the result; defaults to `layout` (symmetric case).
    target : str
        ``"full"`` for the whole latent function, ``"offset"`` for the
        constant terms, or the name of one term (``"spatial"`` selects the
        spatial term).
    max_elements : int or None
        Refuse to build matrices with more entries than this.

    Returns
    -------
    ndarray, shape (len(layout), len(layout2))
    """
    B = layout if layout2 is None else layout2
    _check_size(len(layout), len(B), max_elements)
    with_offset, terms = _select_terms(coreg, target)
    if target not in (None, "full", "offset"):
        with_offset = False
    C = np.zeros((len(layout), len(B)))
    if with_offset:
        _add_offset(C, coreg, layout, B)
    for t in terms:
        _add_term(C, t, layout, B)
    if layout2 is None:
        C = 0.5 * (C + C.T)
    return C


def assemble_cross_cov(coreg, test, train, target="full", max_elements=DEFAULT_MAX_ELEMENTS):
    """Prior covariance between `test` latent values of `target` and the full
    latent values at `train`.

    The rows are the chosen component (full latent function, one additive
    term, or the offset) and the columns are always the full latent function,
    since the additive components are independent a priori.
    """
    _check_size(len(test), len(train), max_elements)
    return assemble_lmc_cov(coreg, test, train, target=target, max_elements=None)


def assemble_prior_diag(coreg, layout, target="full"):
    """Diagonal of the prior covariance of `target` at `layout`."""
    with_offset, terms = _select_terms(coreg, target)
    if target not in (None, "full", "offset"):
        with_offset = False
    d = np.zeros(len(layout))
    if with_offset:
        d += coreg.offset_var[layout.species]
    for t in terms:
        S = t.cov()
        sel = t.members[layout.species]
        if not np.any(sel):
            continue
        kd = eval_kernel_diag(t.kernel, KernelParams(lengthscales=_any_ls(t)),
                              layout.points[sel])
        d[sel] += np.diag(S)[layout.species[sel]] * kd
    return d


def _any_ls(term):
    for l in term.member_index:
        if term.lengthscales[l] is not None:
            return term.lengthscales[l]
    return None


# ---------------------------------------------------------------------------
# derivatives of the prior covariance
# ---------------------------------------------------------------------------


@dataclass
class CovGrad:
    """Derivative of the prior covariance w.r.t. one log/unconstrained parameter.

    Only the block ``rows x rows`` is nonzero.
    """

    key: tuple
    rows: np.ndarray
    block: np.ndarray

    def matvec(self, a):
        out = np.zeros_like(a)
        out[self.rows] = self.block @ a[self.rows]
        return out

    def trace_with(self, R):
        return float(np.sum(R[np.ix_(self.rows, self.rows)] * self.block))

    def full(self, n):
        out = np.zeros((n, n))
        out[np.ix_(self.rows, self.rows)] = self.block
        return out


def cov_grads(coreg, layout):
    """Yield :class:`CovGrad` objects for every covariance hyperparameter.

    Keys are ``("offset", j)``, ``(term, "variance", j)``,
    ``(term, "lengthscale", j, d)`` and ``(term, "delta", k)`` where `term`
    is the term name.  All derivatives are w.r.t. log parameters except the
    correlation coordinates.
    """
    sp = layout.species
    for j in range(coreg.J):
        rows = np.flatnonzero(sp == j)
        if rows.size:
            yield CovGrad(("offset", j), rows, np.full((rows.size, rows.size), coreg.offset_var[j]))
    for t in coreg.terms:
        yield from _term_grads(t, layout)


def _term_grads(t, layout):
    sp = layout.species
    rows = np.flatnonzero(t.members[sp])
    if rows.size == 0:
        return
    s = sp[rows]
    P = layout.points[rows]
    Lf = t.chol()
    kern = {}
    for l in t.member_index:
        kern[l] = eval_kernel(t.kernel, t.kernel_params(l), P)
    Cterm = np.zeros((rows.size, rows.size))
    for l, K in kern.items():
        c = Lf[s, l]
        Cterm += np.outer(c, c) * K
    for j in t.member_index:
        m = (s == j).astype(float)
        if m.any():
            yield CovGrad((t.name, "variance", int(j)), rows, 0.5 * (m[:, None] + m[None, :]) * Cterm)
    for l in t.member_index:
        if t.kernel.n_lengthscales == 0:
            continue
        c = Lf[s, l]
        if not np.any(c):
            continue
        outer = np.outer(c, c)
        for d, (_, dK) in enumerate(kernel_param_grads(t.kernel, t.kernel_params(l), P)):
            yield CovGrad((t.name, "lengthscale", int(l), d), rows, outer * dK)
    for k, dLf in t.chol_delta_grads():
        G = np.zeros((rows.size, rows.size))
        for l, K in kern.items():
            c, dc = Lf[s, l], dLf[s, l]
            if np.any(dc):
                M = np.outer(dc, c)
                G += (M + M.T) * K
        yield CovGrad((t.name, "delta", k), rows, G)

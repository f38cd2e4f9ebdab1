"""
Solver kernels shared by the Fourier and finite-element pipelines.

Conjugate gradients work on any symmetric operator given as a callable, with
a user supplied inner product, so the same code solves the projected Fourier
system on its compatible subspace and the assembled sparse FEM system.
"""

import time
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class ConvergenceError(RuntimeError):
    """CG did not reach the tolerance; ``trace`` holds the history."""

    def __init__(self, msg, trace=None, x=None):
        super().__init__(msg)
        self.trace = trace
        self.x = x


class IndefiniteError(ConvergenceError):
    """A search direction with p.Ap <= 0 was met."""


class FactorizationBreakdown(ArithmeticError):
    """Nonpositive pivot during incomplete Cholesky."""

    def __init__(self, msg, row):
        super().__init__(msg)
        self.row = row


@dataclass
class Operator:
    """
    A symmetric linear operator.

    ``apply`` maps a flat vector to a flat vector. ``inner`` defaults to the
    Euclidean dot product. ``flops`` is the modelled cost of one application.
    """
    apply: callable
    dim: int
    inner: callable = None
    flops: float = None

    def __post_init__(self):
        if self.inner is None:
            self.inner = np.dot

    def __call__(self, x):
        return self.apply(x)


def as_operator(A, inner=None):
    if isinstance(A, Operator):
        return A
    if sp.issparse(A) or isinstance(A, np.ndarray):
        return Operator(lambda x: A @ x, A.shape[0], inner, flops=2.0 * _nnz(A))
    raise TypeError(f"cannot use {type(A).__name__} as an operator")


def _nnz(A):
    return A.nnz if sp.issparse(A) else np.count_nonzero(A)


@dataclass
class IterationTrace:
    """
    Per-iteration history of a CG solve; entry 0 is the initial guess.

    ``values`` are the energy values offset + <A x, x> - 2 <b, x>, i.e. the
    homogenised value of the iterate when the caller passes a(E, E) as offset.
    They are nonincreasing in exact arithmetic.
    """
    residuals: list = field(default_factory=list)
    values: list = field(default_factory=list)
    times: list = field(default_factory=list)
    matvecs: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return max(len(self.residuals) - 1, 0)

    def record(self, res, value, matvecs, t0):
        self.residuals.append(float(res))
        self.values.append(float(value))
        self.matvecs.append(int(matvecs))
        self.times.append(time.perf_counter() - t0)


def cg(A, b, x0=None, precond=None, rtol=1e-10, maxit=None, offset=0.0,
       callback=None, inner=None):
    """
    (Preconditioned) conjugate gradients, Hestenes-Stiefel recurrence.

    Stops when ||r_k|| <= rtol ||b|| in the norm of ``inner``. ``precond`` is
    a callable applying M^{-1}. ``callback(k, x)`` is called with every
    iterate, including x0.

    Returns (x, trace). Raises ConvergenceError after ``maxit`` iterations
    (default 10 * dim) and IndefiniteError on a nonpositive curvature.
    """
    op = as_operator(A, inner)
    dot = inner or op.inner
    b = np.asarray(b, dtype=float)
    n = op.dim
    maxit = 10 * n if maxit is None else maxit
    t0 = time.perf_counter()
    nmv = 0

    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.array(x0, dtype=float)
        r = b - op(x)
        nmv += 1
    bnorm = np.sqrt(dot(b, b))
    trace = IterationTrace()
    energy = lambda: offset - dot(b + r, x)
    trace.record(np.sqrt(dot(r, r)), energy(), nmv, t0)
    if callback is not None:
        callback(0, x)
    if bnorm == 0.0 or trace.residuals[0] <= rtol * bnorm:
        trace.converged = True
        return x, trace

    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = dot(r, z)
    for k in range(1, maxit + 1):
        Ap = op(p)
        nmv += 1
        pAp = dot(p, Ap)
        if pAp <= 0:
            raise IndefiniteError(f"p.Ap = {pAp:g} <= 0 at iteration {k}", trace, x)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = np.sqrt(dot(r, r))
        trace.record(res, energy(), nmv, t0)
        if callback is not None:
            callback(k, x)
        if res <= rtol * bnorm:
            trace.converged = True
            return x, trace
        z = precond(r) if precond is not None else r
        rz_new = dot(r, z)
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise ConvergenceError(f"CG did not converge in {maxit} iterations "
                           f"(relative residual {res / bnorm:.3e})", trace, x)


def cg_bound(kappa, k, e0_energy):
    """4 ((sqrt(kappa) - 1) / (sqrt(kappa) + 1))^(2k) times the initial squared error."""
    q = (np.sqrt(kappa) - 1) / (np.sqrt(kappa) + 1)
    return 4.0 * q ** (2 * np.asarray(k)) * e0_energy


# --------------------------------------------------- incomplete Cholesky ---

@numba.njit(cache=True)
def _ic0_kernel(indptr, indices, data, n):
    # indices sorted within rows, pattern = lower triangle incl. diagonal
    out = data.copy()
    diag_pos = np.empty(n, dtype=np.int64)
    for i in range(n):
        start = indptr[i]
        end = indptr[i + 1]
        for jj in range(start, end):
            j = indices[jj]
            # dot of rows i and j over columns < j
            s = out[jj]
            a = start
            b = indptr[j]
            bend = diag_pos[j] if j < i else end
            while a < jj and b < bend:
                ca = indices[a]
                cb = indices[b]
                if ca == cb:
                    s -= out[a] * out[b]
                    a += 1
                    b += 1
                elif ca < cb:
                    a += 1
                else:
                    b += 1
            if j < i:
                out[jj] = s / out[diag_pos[j]]
            else:
                if s <= 0.0:
                    return out, i
                out[jj] = np.sqrt(s)
                diag_pos[i] = jj
    return out, -1


@numba.njit(cache=True)
def _lower_solve(indptr, indices, data, y):
    n = y.shape[0]
    x = y.copy()
    for i in range(n):
        s = x[i]
        end = indptr[i + 1] - 1
        for jj in range(indptr[i], end):
            s -= data[jj] * x[indices[jj]]
        x[i] = s / data[end]
    return x


@numba.njit(cache=True)
def _upper_solve(indptr, indices, data, y):
    # solves L^T x = y with L stored by rows
    n = y.shape[0]
    x = y.copy()
    for i in range(n - 1, -1, -1):
        end = indptr[i + 1] - 1
        xi = x[i] / data[end]
        x[i] = xi
        for jj in range(indptr[i], end):
            x[indices[jj]] -= data[jj] * xi
    return x


@dataclass
class IcPreconditioner:
    """Zero-fill incomplete Cholesky factor L with M = L L^T ~ A."""
    L: sp.csr_matrix
    shift: float = 0.0

    @property
    def nnz(self):
        return self.L.nnz

    def solve(self, r):
        """M^{-1} r."""
        L = self.L
        y = _lower_solve(L.indptr, L.indices, L.data, np.asarray(r, dtype=float))
        return _upper_solve(L.indptr, L.indices, L.data, y)

    __call__ = solve

    def solve_lower(self, r):
        L = self.L
        return _lower_solve(L.indptr, L.indices, L.data, np.asarray(r, dtype=float))

    def solve_upper(self, r):
        L = self.L
        return _upper_solve(L.indptr, L.indices, L.data, np.asarray(r, dtype=float))


def ic0_factor(A, shift=0.0):
    """
    IC(0) of a symmetric sparse matrix: L keeps the pattern of tril(A).

    ``shift`` adds shift * diag(A) before factorizing. Raises
    FactorizationBreakdown on a nonpositive pivot.
    """
    A = sp.csr_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if np.any(A.diagonal() <= 0):
        raise ValueError("IC(0) needs a positive diagonal")
    low = sp.tril(A, format="csr")
    if shift:
        low = low + shift * sp.diags(A.diagonal(), format="csr")
        low = sp.csr_matrix(low)
    low.sum_duplicates()
    low.sort_indices()
    n = A.shape[0]
    indptr = low.indptr.astype(np.int64)
    indices = low.indices.astype(np.int64)
    # every row must end with its diagonal entry
    if np.any(indices[indptr[1:] - 1] != np.arange(n)):
        raise ValueError("matrix has a structurally zero diagonal")
    data, bad = _ic0_kernel(indptr, indices, low.data.astype(float), n)
    if bad >= 0:
        raise FactorizationBreakdown(f"nonpositive pivot in row {bad}", bad)
    L = sp.csr_matrix((data, indices, indptr), shape=A.shape)
    return IcPreconditioner(L, shift)


# -------------------------------------------------------------- Lanczos ----

@dataclass
class LanczosResult:
    lmin: float
    lmax: float
    iterations: int
    confident: bool
    residuals: tuple = (np.nan, np.nan)

    @property
    def kappa(self):
        return self.lmax / self.lmin


def lanczos_extremes(A, inner=None, iters=100, v0=None, seed=0, tol=1e-6, breakdown=1e-8,
                     project=None):
    """
    Extreme Ritz values of a symmetric operator, full reorthogonalization.

    The Ritz values are inner estimates of the spectrum: lmin >= lambda_min
    and lmax <= lambda_max, so lmax / lmin underestimates the condition
    number. ``confident`` is False when the residual estimate of either
    extreme Ritz pair exceeds ``tol`` relative to lmax, i.e. when ``iters``
    was too small. The iteration stops early once ||w|| after
    orthogonalization falls below ``breakdown`` times ||A q_k||.

    ``project`` restricts the iteration to a subspace (e.g. the range of a
    singular operator). It is applied to every new basis vector; without
    it, rounding errors in the null space grow geometrically through the
    recurrence and surface as spurious zero Ritz values.
    """
    op = as_operator(A, inner)
    dot = inner or op.inner
    if v0 is None:
        v0 = np.random.default_rng(seed).standard_normal(op.dim)
    q = np.asarray(v0, dtype=float)
    if project is not None:
        q = project(q)
    q = q / np.sqrt(dot(q, q))
    m = min(iters, op.dim)
    Q = np.zeros((m + 1, q.size))
    Q[0] = q
    alpha = np.zeros(m)
    beta = np.zeros(m)
    k = 0
    for k in range(m):
        w = op(Q[k])
        wnorm = np.sqrt(dot(w, w))
        alpha[k] = dot(w, Q[k])
        # full reorthogonalization, twice
        for _ in range(2):
            coef = np.array([dot(w, Q[i]) for i in range(k + 1)])
            w = w - coef @ Q[:k + 1]
        if project is not None:
            w = project(w)
        beta[k] = np.sqrt(max(dot(w, w), 0.0))
        # an invariant subspace is reached when A q_k is (numerically) inside
        # the basis; continuing would normalise rounding noise
        if beta[k] <= breakdown * wnorm:
            k += 1
            break
        Q[k + 1] = w / beta[k]
    else:
        k = m
    T = np.diag(alpha[:k]) + np.diag(beta[:k - 1], 1) + np.diag(beta[:k - 1], -1)
    theta, S = np.linalg.eigh(T)
    res = np.abs(beta[k - 1] * S[-1, :])
    if k < m or beta[k - 1] == 0.0:
        res[:] = 0.0
    scale = max(abs(theta[-1]), 1e-300)
    confident = bool(res[0] <= tol * scale and res[-1] <= tol * scale)
    return LanczosResult(float(theta[0]), float(theta[-1]), k, confident,
                         (float(res[0]), float(res[-1])))


def sparse_extremes(A, ic=None, seed=0, tol=1e-8):
    """
    Extreme eigenvalues of a sparse SPD matrix, or of L^{-1} A L^{-T} when an
    incomplete factor ``ic`` is given.

    Uses implicitly restarted Lanczos (ARPACK): plain iteration for the
    largest eigenvalue and shift-invert at zero, through a sparse LU of A,
    for the smallest one. Suited to FEM matrices whose condition number is
    far too large for a fixed number of plain Lanczos steps.
    """
    A = sp.csc_matrix(A)
    n = A.shape[0]
    v0 = np.random.default_rng(seed).standard_normal(n)
    lu = spla.splu(A)
    if ic is None:
        op = spla.aslinearoperator(A)
        inv = lu.solve
    else:
        L = ic.L
        op = spla.LinearOperator((n, n), matvec=lambda x: ic.solve_lower(A @ ic.solve_upper(x)),
                                 dtype=float)
        # (L^{-1} A L^{-T})^{-1} = L^T A^{-1} L
        inv = lambda x: L.T @ lu.solve(L @ x)
    opinv = spla.LinearOperator((n, n), matvec=inv, dtype=float)
    lmax = spla.eigsh(op, k=1, which="LA", tol=tol, v0=v0, return_eigenvectors=False)[0]
    lmin = spla.eigsh(op, k=1, sigma=0.0, which="LM", OPinv=opinv, tol=tol, v0=v0,
                      return_eigenvectors=False)[0]
    return LanczosResult(float(lmin), float(lmax), 0, True, (0.0, 0.0))


def preconditioned_operator(A, ic):
    """L^{-1} A L^{-T}, similar to M^{-1} A, as a symmetric operator."""
    A = sp.csr_matrix(A)
    return Operator(lambda x: ic.solve_lower(A @ ic.solve_upper(x)), A.shape[0])

"""Sparse block composition and linear solvers for the slab systems.

Matrices are scipy CSR throughout.  The direct path wraps SuperLU with
one step of iterative refinement; the iterative path is a restarted,
right-preconditioned GMRES (reported residuals are true residuals, so
they decrease monotonically within a restart cycle).  The stock
preconditioner is a zero-fill incomplete LU on the matrix pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

try:
    from numba import njit
except ImportError:          # pragma: no cover - numba is an optional speedup
    njit = lambda **kw: (lambda f: f)


class SingularMatrix(Exception):
    pass


class ZeroPivot(Exception):
    def __init__(self, row: int):
        super().__init__(f"zero pivot in row {row}")
        self.row = row


class BreakdownDetected(Exception):
    pass


class NoConvergence(Exception):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"no convergence after {iterations} iterations, "
                         f"relative residual {residual:.3e}")
        self.iterations = iterations
        self.residual = residual


@dataclass
class BlockSystem:
    """A 2D grid of sparse blocks with a monolithic view on demand.

    ``blocks[i][j]`` may be None for an empty block.  Dimensions must be
    consistent along every block row and column.
    """

    blocks: list

    def __post_init__(self):
        nrows = len(self.blocks)
        ncols = len(self.blocks[0])
        row_dims = [None] * nrows
        col_dims = [None] * ncols
        for i, row in enumerate(self.blocks):
            if len(row) != ncols:
                raise ValueError("ragged block grid")
            for j, blk in enumerate(row):
                if blk is None:
                    continue
                m, n = blk.shape
                if row_dims[i] is None:
                    row_dims[i] = m
                elif row_dims[i] != m:
                    raise ValueError(f"inconsistent row dimension in block row {i}")
                if col_dims[j] is None:
                    col_dims[j] = n
                elif col_dims[j] != n:
                    raise ValueError(f"inconsistent column dimension in block column {j}")
        if any(d is None for d in row_dims) or any(d is None for d in col_dims):
            raise ValueError("every block row and column needs at least one block")
        self.row_dims = row_dims
        self.col_dims = col_dims

    @property
    def shape(self):
        return (sum(self.row_dims), sum(self.col_dims))

    @property
    def row_offsets(self):
        return np.concatenate([[0], np.cumsum(self.row_dims)])

    @property
    def col_offsets(self):
        return np.concatenate([[0], np.cumsum(self.col_dims)])

    def tocsr(self) -> sp.csr_matrix:
        return sp.bmat(self.blocks, format="csr")


def _as_csr(A) -> sp.csr_matrix:
    if isinstance(A, BlockSystem):
        return A.tocsr()
    if sp.issparse(A):
        return A.tocsr()
    return sp.csr_matrix(np.asarray(A))


def matvec(A, x: np.ndarray) -> np.ndarray:
    """y = A x with an explicit dimension check."""
    A = _as_csr(A)
    x = np.asarray(x)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} @ {x.shape}")
    return A @ x


# ---------------------------------------------------------------------------
# direct solver

def lu_factor(A):
    """SuperLU factorization of a square sparse matrix."""
    A = _as_csr(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix is not square")
    try:
        return spla.splu(A.tocsc())
    except RuntimeError as exc:
        raise SingularMatrix(str(exc)) from exc


def solve_direct(A, b: np.ndarray) -> np.ndarray:
    """Sparse LU solve with one step of iterative refinement."""
    A = _as_csr(A)
    b = np.asarray(b, dtype=float)
    if A.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} vs {b.shape}")
    lu = lu_factor(A)
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SingularMatrix("factorization produced non-finite values")
    x += lu.solve(b - A @ x)
    return x


# ---------------------------------------------------------------------------
# incomplete LU with zero fill

@njit(cache=True)
def _ilu0_factor_kernel(indptr, indices, data):
    n = indptr.size - 1
    diag_pos = np.empty(n, dtype=np.int64)
    diag_pos[:] = -1
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            if indices[p] == i:
                diag_pos[i] = p
    # column lookup scratch: position of column j in the current row
    colpos = np.empty(n, dtype=np.int64)
    colpos[:] = -1
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            colpos[indices[p]] = p
        for p in range(indptr[i], indptr[i + 1]):
            k = indices[p]
            if k >= i:
                break
            dk = diag_pos[k]
            if dk < 0 or data[dk] == 0.0:
                return k  # zero pivot
            data[p] /= data[dk]
            lik = data[p]
            for pk in range(dk + 1, indptr[k + 1]):
                j = indices[pk]
                pj = colpos[j]
                if pj >= 0:
                    data[pj] -= lik * data[pk]
        for p in range(indptr[i], indptr[i + 1]):
            colpos[indices[p]] = -1
        di = diag_pos[i]
        if di < 0 or data[di] == 0.0:
            return i
    return -1


@njit(cache=True)
def _ilu0_solve_kernel(indptr, indices, data, diag_pos, b):
    n = indptr.size - 1
    x = b.copy()
    # forward sweep with unit lower triangle
    for i in range(n):
        acc = x[i]
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j >= i:
                break
            acc -= data[p] * x[j]
        x[i] = acc
    # backward sweep with the upper triangle
    for i in range(n - 1, -1, -1):
        acc = x[i]
        for p in range(indptr[i + 1] - 1, indptr[i] - 1, -1):
            j = indices[p]
            if j <= i:
                break
            acc -= data[p] * x[j]
        x[i] = acc / data[diag_pos[i]]
    return x


@dataclass
class ILU0:
    """Zero-fill incomplete LU factors stored in the pattern of A."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    diag_pos: np.ndarray

    def apply(self, r: np.ndarray) -> np.ndarray:
        return _ilu0_solve_kernel(self.indptr, self.indices, self.data,
                                  self.diag_pos, np.asarray(r, dtype=float))

    __call__ = apply


def ilu0(A) -> ILU0:
    """Incomplete LU factorization on the sparsity pattern of A."""
    A = _as_csr(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix is not square")
    A = A.sorted_indices()
    data = A.data.astype(float).copy()
    bad = _ilu0_factor_kernel(A.indptr.astype(np.int64),
                              A.indices.astype(np.int64), data)
    if bad >= 0:
        raise ZeroPivot(int(bad))
    indptr = A.indptr.astype(np.int64)
    indices = A.indices.astype(np.int64)
    diag_pos = np.empty(A.shape[0], dtype=np.int64)
    for i in range(A.shape[0]):
        sl = indices[indptr[i]:indptr[i + 1]]
        diag_pos[i] = indptr[i] + int(np.searchsorted(sl, i))
    return ILU0(indptr, indices, data, diag_pos)


def jacobi(A):
    """Diagonal (Jacobi) preconditioner."""
    A = _as_csr(A)
    d = A.diagonal()
    if np.any(d == 0):
        raise ZeroPivot(int(np.nonzero(d == 0)[0][0]))
    inv = 1.0 / d
    return lambda r: inv * r


# ---------------------------------------------------------------------------
# GMRES

@dataclass
class SolveStats:
    """Iteration count, final relative residual, and residual history.

    ``residual_norms`` holds one list per restart cycle; within a cycle
    the recorded norms are non-increasing.
    """

    iterations: int
    residual: float
    converged: bool
    residual_norms: list = field(default_factory=list)

    @property
    def all_residuals(self):
        return [r for cycle in self.residual_norms for r in cycle]


def solve_gmres(A, b: np.ndarray, preconditioner=None, rel_tol: float = 1e-8,
                max_iter: int = 1000, restart: int = 100):
    """Restarted GMRES with right preconditioning.

    Returns ``(x, stats)``; raises :class:`NoConvergence` when the
    iteration budget is exhausted and :class:`BreakdownDetected` on a
    non-productive Arnoldi breakdown.
    """
    A = _as_csr(A)
    n = A.shape[0]
    if A.shape[0] != A.shape[1] or b.shape[0] != n:
        raise ValueError("need a square system with matching right-hand side")
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1)")
    M = preconditioner if preconditioner is not None else (lambda r: r)
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    stats = SolveStats(0, 0.0, True)
    if bnorm == 0.0:
        return np.zeros(n), stats
    x = np.zeros(n)
    target = rel_tol * bnorm
    total = 0
    while total < max_iter:
        r = b - A @ x
        beta = np.linalg.norm(r)
        if beta <= target:
            stats.iterations = total
            stats.residual = beta / bnorm
            return x, stats
        cycle = [beta]
        stats.residual_norms.append(cycle)
        m = min(restart, max_iter - total)
        V = np.empty((m + 1, n))
        Z = np.empty((m, n))
        H = np.zeros((m + 1, m))
        cs = np.empty(m)
        sn = np.empty(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        for j in range(m):
            Z[j] = M(V[j])
            w = A @ Z[j]
            for i in range(j + 1):
                H[i, j] = np.dot(w, V[i])
                w -= H[i, j] * V[i]
            hnorm = np.linalg.norm(w)
            H[j + 1, j] = hnorm
            breakdown = hnorm <= 1e-14 * max(beta, 1.0)
            if not breakdown:
                V[j + 1] = w / hnorm
            # apply stored Givens rotations to the new column
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                raise BreakdownDetected("Arnoldi produced a zero column")
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j_done = j + 1
            cycle.append(abs(g[j + 1]))
            if abs(g[j + 1]) <= target or breakdown:
                if breakdown and abs(g[j + 1]) > target:
                    raise BreakdownDetected(
                        "Arnoldi breakdown before reaching the tolerance")
                break
        # solve the triangular system for this cycle and update x
        y = np.zeros(j_done)
        for i in range(j_done - 1, -1, -1):
            y[i] = (g[i] - H[i, i + 1:j_done] @ y[i + 1:j_done]) / H[i, i]
        x = x + y @ Z[:j_done]
        r = b - A @ x
        beta = np.linalg.norm(r)
        if beta <= target:
            stats.iterations = total
            stats.residual = beta / bnorm
            return x, stats
    raise NoConvergence(total, float(np.linalg.norm(b - A @ x) / bnorm))


def equilibrated_ilu0(A):
    """Symmetrically scaled ILU(0); helps strongly weighted penalty rows.

    Returns a preconditioner callable for :func:`solve_gmres` applied to
    the *original* matrix.
    """
    A = _as_csr(A)
    d = np.abs(A.diagonal())
    d[d == 0.0] = 1.0
    s = 1.0 / np.sqrt(d)
    D = sp.diags(s)
    fac = ilu0(D @ A @ D)
    return lambda r: s * fac(s * r)

"""
Sparse linear algebra used by both the electrophysiology and mechanics solvers.

Storage is scipy's CSR format. On top of it this module provides a
right-preconditioned restarted GMRES, a dual-threshold incomplete LU
factorisation (ILUT) and the triangular solves that apply it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.io
import scipy.sparse as sp
from numba import njit
from scipy.sparse.linalg import LinearOperator

__all__ = [
    "SolverError",
    "FactorizationError",
    "GmresResult",
    "IluPreconditioner",
    "as_csr",
    "check_csr",
    "as_operator",
    "gmres",
    "ilu_factor",
    "solve_triangular",
    "write_matrix_market",
]

DEFAULT_RESTART = 50
PIVOT_REL = 1e-12


class SolverError(RuntimeError):
    """Raised when an iterative solve cannot proceed (non-finite data, divergence)."""


class FactorizationError(SolverError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


# ---------------------------------------------------------------------------
# storage helpers
# ---------------------------------------------------------------------------

def as_csr(A) -> sp.csr_matrix:
    """Return ``A`` as canonical CSR (sorted indices, no duplicates, float64)."""
    if sp.issparse(A):
        M = sp.csr_matrix(A, dtype=np.float64, copy=True)
    else:
        M = sp.csr_matrix(np.asarray(A, dtype=np.float64))
    M.sum_duplicates()
    M.sort_indices()
    check_csr(M)
    return M


def check_csr(M: sp.csr_matrix) -> None:
    """Validate the CSR invariants: monotone offsets, strictly increasing columns, finite values."""
    if not np.all(np.diff(M.indptr) >= 0):
        raise ValueError("row offsets are not monotone")
    if not np.all(np.isfinite(M.data)):
        raise ValueError("matrix stores non-finite values")
    rows = np.repeat(np.arange(M.shape[0]), np.diff(M.indptr))
    same_row = rows[1:] == rows[:-1]
    if np.any(np.diff(M.indices)[same_row] <= 0):
        raise ValueError("column indices must be strictly increasing within a row")


def write_matrix_market(path, A, comment: str = "") -> None:
    """Dump a sparse matrix in Matrix Market coordinate format (debugging aid)."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)


def as_operator(op, n: int | None = None) -> LinearOperator:
    """Wrap a matrix, sparse matrix or callable as a scipy ``LinearOperator``.

    A plain callable needs the dimension ``n``; it is treated as a matrix-free
    operator and is assumed deterministic.
    """
    if isinstance(op, LinearOperator):
        return op
    if sp.issparse(op) or isinstance(op, np.ndarray):
        A = op
        return LinearOperator(A.shape, matvec=lambda v: A @ v, dtype=np.float64)
    if callable(op):
        if n is None:
            raise ValueError("dimension required for a matrix-free operator")
        return LinearOperator((n, n), matvec=op, dtype=np.float64)
    raise TypeError(f"cannot build an operator from {type(op)!r}")


# ---------------------------------------------------------------------------
# GMRES
# ---------------------------------------------------------------------------

class GmresResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float  # true relative residual ||b - A x|| / ||b||
    converged: bool
    status: str  # "converged" | "max_iters" | "stagnation"
    history: list


def _apply_precond(precond, v):
    if precond is None:
        return v
    if isinstance(precond, IluPreconditioner):
        return precond.solve(v)
    if callable(precond):
        return precond(v)
    return precond.solve(v)


def gmres(op, rhs, x0=None, tol: float = 1e-8, max_iters: int = 1000, precond=None,
          restart: int = DEFAULT_RESTART) -> GmresResult:
    """Restarted GMRES with right preconditioning.

    The Arnoldi residual estimate drives the inner loop, but convergence is
    only declared on the recomputed true residual ``||b - A x|| <= tol ||b||``.
    A zero Arnoldi norm before that point is reported as ``"stagnation"``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = np.asarray(rhs, dtype=np.float64)
    n = b.shape[0]
    A = as_operator(op, n)
    if A.shape != (n, n):
        raise ValueError(f"operator shape {A.shape} does not match rhs length {n}")
    if not np.all(np.isfinite(b)):
        raise SolverError("non-finite entries in right-hand side")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError("x0 has the wrong length")
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite entries in initial guess")

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return GmresResult(np.zeros(n), 0, 0.0, True, "converged", [0.0])

    r = b - A.matvec(x)
    beta = np.linalg.norm(r)
    history = [beta / bnorm]
    if not np.isfinite(beta):
        raise SolverError("non-finite residual")
    if beta <= tol * bnorm:
        return GmresResult(x, 0, beta / bnorm, True, "converged", history)

    m = max(1, min(restart, n))
    total = 0
    while True:
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        V[0] = r / beta
        g[0] = beta
        k = 0
        breakdown = False
        for j in range(m):
            w = A.matvec(_apply_precond(precond, V[j]))
            if not np.all(np.isfinite(w)):
                raise SolverError(f"non-finite operator output at iteration {total + 1}")
            wnorm0 = np.linalg.norm(w)
            # classical Gram-Schmidt, applied twice
            h = V[: j + 1] @ w
            w = w - V[: j + 1].T @ h
            h2 = V[: j + 1] @ w
            w = w - V[: j + 1].T @ h2
            h += h2
            hn = np.linalg.norm(w)
            H[: j + 1, j] = h
            H[j + 1, j] = hn
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            k = j + 1
            history.append(abs(g[j + 1]) / bnorm)
            if hn <= 1e-14 * wnorm0:
                breakdown = True
                break
            V[j + 1] = w / hn
            if abs(g[j + 1]) <= tol * bnorm or total >= max_iters:
                break
        Hk = H[:k, :k]
        if np.any(np.diag(Hk) == 0.0):
            y = np.linalg.lstsq(Hk, g[:k], rcond=None)[0]
        else:
            y = _back_substitute(Hk, g[:k])
        x = x + _apply_precond(precond, V[:k].T @ y)
        r = b - A.matvec(x)
        beta = np.linalg.norm(r)
        if not np.isfinite(beta):
            raise SolverError("non-finite residual")
        rel = beta / bnorm
        history[-1] = rel
        if rel <= tol:
            return GmresResult(x, total, rel, True, "converged", history)
        if breakdown:
            return GmresResult(x, total, rel, False, "stagnation", history)
        if total >= max_iters:
            return GmresResult(x, total, rel, False, "max_iters", history)


def _back_substitute(R, g):
    k = R.shape[0]
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y


# ---------------------------------------------------------------------------
# ILUT
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IluPreconditioner:
    """Incomplete factors ``A ~ L U`` with unit-diagonal ``L``.

    ``L`` holds only the strictly lower part; ``U`` holds the diagonal and the
    strictly upper part (diagonal kept separately for the back substitution).
    """

    n: int
    l_indptr: np.ndarray
    l_indices: np.ndarray
    l_data: np.ndarray
    u_indptr: np.ndarray
    u_indices: np.ndarray
    u_data: np.ndarray
    u_diag: np.ndarray
    drop_tol: float = 0.0
    max_fill: int = 0
    n_substituted: int = field(default=0, compare=False)

    @classmethod
    def from_factors(cls, L, U) -> "IluPreconditioner":
        """Build from explicit factors; the diagonal of ``L`` is ignored (taken as 1)."""
        L = sp.tril(as_csr(L), k=-1, format="csr")
        U = as_csr(U)
        diag = U.diagonal().copy()
        if np.any(diag == 0.0):
            raise FactorizationError(int(np.flatnonzero(diag == 0.0)[0]), "zero diagonal in U")
        Us = sp.triu(U, k=1, format="csr")
        L.sort_indices()
        Us.sort_indices()
        return cls(L.shape[0], L.indptr.astype(np.int64), L.indices.astype(np.int64), L.data,
                   Us.indptr.astype(np.int64), Us.indices.astype(np.int64), Us.data, diag)

    @property
    def L(self) -> sp.csr_matrix:
        """Unit lower factor including its diagonal."""
        Ls = sp.csr_matrix((self.l_data, self.l_indices, self.l_indptr), shape=(self.n, self.n))
        return (Ls + sp.identity(self.n, format="csr")).tocsr()

    @property
    def U(self) -> sp.csr_matrix:
        Us = sp.csr_matrix((self.u_data, self.u_indices, self.u_indptr), shape=(self.n, self.n))
        return (Us + sp.diags(self.u_diag)).tocsr()

    @property
    def nnz(self) -> int:
        return int(self.l_data.size + self.u_data.size + self.n)

    def solve(self, v) -> np.ndarray:
        return solve_triangular(self, v)

    def as_operator(self) -> LinearOperator:
        return LinearOperator((self.n, self.n), matvec=self.solve, dtype=np.float64)


@njit(cache=True)
def _grow(a, need):
    if need <= a.size:
        return a
    out = np.empty(max(need, 2 * a.size), a.dtype)
    out[: a.size] = a
    return out


@njit(cache=True)
def _keep_largest(idx, vals, count, p):
    """Keep at most p entries of largest magnitude, returned sorted by column."""
    if count > p:
        order = np.argsort(-np.abs(vals[:count]))[:p]
        idx2 = idx[:count][order]
        vals2 = vals[:count][order]
        count = p
    else:
        idx2 = idx[:count].copy()
        vals2 = vals[:count].copy()
    o = np.argsort(idx2)
    return idx2[o], vals2[o], count


@njit(cache=True)
def _ilut_kernel(n, indptr, indices, data, drop_tol, max_fill, pivot_rel):
    cap_l = max(16, indptr[n])
    cap_u = max(16, indptr[n])
    l_ptr = np.zeros(n + 1, np.int64)
    u_ptr = np.zeros(n + 1, np.int64)
    l_idx = np.empty(cap_l, np.int64)
    l_val = np.empty(cap_l, np.float64)
    u_idx = np.empty(cap_u, np.int64)
    u_val = np.empty(cap_u, np.float64)
    u_diag = np.empty(n, np.float64)

    w = np.zeros(n)
    pos = -np.ones(n, np.int64)  # >=0 if column is in the working row
    lo = np.empty(n, np.int64)  # columns < i
    up = np.empty(n, np.int64)  # columns > i
    done = np.zeros(n, np.bool_)
    n_sub = 0

    for i in range(n):
        nlo = 0
        nup = 0
        tnorm = 0.0
        has_diag = False
        for q in range(indptr[i], indptr[i + 1]):
            j = indices[q]
            a = data[q]
            if not np.isfinite(a):
                return -1 - i, l_ptr, l_idx, l_val, u_ptr, u_idx, u_val, u_diag, n_sub
            tnorm += a * a
            w[j] = a
            pos[j] = 1
            if j < i:
                lo[nlo] = j
                nlo += 1
            elif j > i:
                up[nup] = j
                nup += 1
            else:
                has_diag = True
        tnorm = np.sqrt(tnorm)
        if tnorm == 0.0:
            return -1 - i, l_ptr, l_idx, l_val, u_ptr, u_idx, u_val, u_diag, n_sub
        if not has_diag:
            w[i] = 0.0
            pos[i] = 1
        thresh = drop_tol * tnorm

        # eliminate lower entries in increasing column order; fill-in may extend `lo`
        processed = 0
        while processed < nlo:
            # find the smallest unprocessed column
            best = -1
            bpos = -1
            for q in range(processed, nlo):
                if best < 0 or lo[q] < best:
                    best = lo[q]
                    bpos = q
            lo[bpos] = lo[processed]
            lo[processed] = best
            processed += 1
            k = best
            lk = w[k] / u_diag[k]
            if abs(lk) <= thresh or lk == 0.0:
                w[k] = 0.0
                done[k] = True  # dropped
                continue
            w[k] = lk
            for q in range(u_ptr[k], u_ptr[k + 1]):
                j = u_idx[q]
                if pos[j] < 0:
                    pos[j] = 1
                    w[j] = -lk * u_val[q]
                    if j < i:
                        lo[nlo] = j
                        nlo += 1
                    elif j > i:
                        up[nup] = j
                        nup += 1
                else:
                    w[j] -= lk * u_val[q]

        # gather L part (skip dropped)
        cnt = 0
        tmp_idx = np.empty(nlo, np.int64)
        tmp_val = np.empty(nlo, np.float64)
        for q in range(nlo):
            j = lo[q]
            if not done[j] and w[j] != 0.0:
                tmp_idx[cnt] = j
                tmp_val[cnt] = w[j]
                cnt += 1
        kidx, kval, cnt = _keep_largest(tmp_idx, tmp_val, cnt, max_fill)
        l_idx = _grow(l_idx, l_ptr[i] + cnt)
        l_val = _grow(l_val, l_ptr[i] + cnt)
        for q in range(cnt):
            l_idx[l_ptr[i] + q] = kidx[q]
            l_val[l_ptr[i] + q] = kval[q]
        l_ptr[i + 1] = l_ptr[i] + cnt

        # U part
        cnt = 0
        tmp_idx = np.empty(nup, np.int64)
        tmp_val = np.empty(nup, np.float64)
        for q in range(nup):
            j = up[q]
            if abs(w[j]) > thresh and w[j] != 0.0:
                tmp_idx[cnt] = j
                tmp_val[cnt] = w[j]
                cnt += 1
        kidx, kval, cnt = _keep_largest(tmp_idx, tmp_val, cnt, max_fill)
        u_idx = _grow(u_idx, u_ptr[i] + cnt)
        u_val = _grow(u_val, u_ptr[i] + cnt)
        for q in range(cnt):
            u_idx[u_ptr[i] + q] = kidx[q]
            u_val[u_ptr[i] + q] = kval[q]
        u_ptr[i + 1] = u_ptr[i] + cnt

        d = w[i]
        floor = pivot_rel * tnorm
        if not np.isfinite(d):
            return -1 - i, l_ptr, l_idx, l_val, u_ptr, u_idx, u_val, u_diag, n_sub
        if abs(d) < floor:
            d = floor if d >= 0.0 else -floor
            n_sub += 1
        u_diag[i] = d

        # reset work arrays
        for q in range(nlo):
            j = lo[q]
            w[j] = 0.0
            pos[j] = -1
            done[j] = False
        for q in range(nup):
            j = up[q]
            w[j] = 0.0
            pos[j] = -1
        w[i] = 0.0
        pos[i] = -1

    return 0, l_ptr, l_idx[: l_ptr[n]], l_val[: l_ptr[n]], u_ptr, u_idx[: u_ptr[n]], u_val[: u_ptr[n]], u_diag, n_sub


def ilu_factor(A, drop_tol: float = 1e-4, max_fill: int | None = 20,
               pivot_rel: float = PIVOT_REL) -> IluPreconditioner:
    """Dual-threshold incomplete LU (ILUT) without pivoting.

    Entries below ``drop_tol * ||row||`` are dropped and at most ``max_fill``
    entries are kept in each of the L and U parts of a row (``None`` means
    unlimited). Pivots smaller than ``pivot_rel * ||row||`` are replaced by
    that floor with the pivot's sign; an empty or non-finite row raises
    :class:`FactorizationError`.
    """
    M = as_csr(A)
    n, m = M.shape
    if n != m:
        raise ValueError("ILUT needs a square matrix")
    if drop_tol < 0:
        raise ValueError("drop_tol must be non-negative")
    p = n if max_fill is None else int(max_fill)
    code, lp, li, lv, up, ui, uv, ud, nsub = _ilut_kernel(
        n, M.indptr.astype(np.int64), M.indices.astype(np.int64), M.data, float(drop_tol), p,
        float(pivot_rel))
    if code < 0:
        row = -1 - code
        raise FactorizationError(row, "zero or non-finite row; pivot cannot be substituted")
    return IluPreconditioner(n, lp, li, lv, up, ui, uv, ud, float(drop_tol), p, int(nsub))


@njit(cache=True)
def _lu_solve(n, lp, li, lv, up, ui, uv, ud, v):
    x = v.copy()
    for i in range(n):
        s = x[i]
        for q in range(lp[i], lp[i + 1]):
            s -= lv[q] * x[li[q]]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for q in range(up[i], up[i + 1]):
            s -= uv[q] * x[ui[q]]
        x[i] = s / ud[i]
    return x


def solve_triangular(pre: IluPreconditioner, v) -> np.ndarray:
    """Return ``U^-1 L^-1 v``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (pre.n,):
        raise ValueError("vector length does not match the factors")
    if not np.all(np.isfinite(v)):
        raise SolverError("non-finite input to triangular solve")
    return _lu_solve(pre.n, pre.l_indptr, pre.l_indices, pre.l_data, pre.u_indptr,
                     pre.u_indices, pre.u_data, pre.u_diag, v)


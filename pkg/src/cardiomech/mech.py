"""
Incompressible Mooney-Rivlin finite elasticity with active stress.

Taylor-Hood P2/P1 elements on the coarse mesh: quadratic positions at
vertices and edge midpoints, linear pressure at vertices. The unknown vector
is ordered as displacements (interleaved x, y per P2 node) followed by
pressures. Pinned components are eliminated from the Newton system.

Second Piola-Kirchhoff stress (plane, 2x2 invariants):

    S = 2 c1 I + 2 c2 (tr C I - C) - p C^-1 + Ta A(C)

with A(C) = f0 f0^T / (f0 . C f0) (uniaxial tension along the current fibre,
pulled back) or A(C) = C^-1 for the isotropic variant.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .linalg import gmres, ilu_factor
from .mesh import DIAGONAL_FIBRE, TriMesh

log = logging.getLogger(__name__)


class MechanicsError(RuntimeError):
    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history or [])


@dataclass(frozen=True)
class MaterialParams:
    c1: float = 2.0  # kPa
    c2: float = 6.0  # kPa
    fibre: tuple = tuple(DIAGONAL_FIBRE)
    active: str = "anisotropic"

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("Mooney-Rivlin constants must be positive")
        if self.active not in ("anisotropic", "isotropic"):
            raise ValueError(f"unknown active stress form {self.active!r}")
        f = np.asarray(self.fibre, dtype=np.float64)
        object.__setattr__(self, "fibre", tuple(f / np.linalg.norm(f)))

    @property
    def reference_pressure(self) -> float:
        """Pressure that balances the reference configuration at Ta = 0."""
        return 2.0 * (self.c1 + self.c2)


# ---------------------------------------------------------------------------
# constitutive law on stacks of 2x2 tensors (..., 2, 2)
# ---------------------------------------------------------------------------

def _det(A):
    return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]


def _inv(A, det=None):
    d = _det(A) if det is None else det
    out = np.empty_like(A)
    out[..., 0, 0] = A[..., 1, 1]
    out[..., 1, 1] = A[..., 0, 0]
    out[..., 0, 1] = -A[..., 0, 1]
    out[..., 1, 0] = -A[..., 1, 0]
    return out / d[..., None, None]


def _t(A):
    return np.swapaxes(A, -1, -2)


_I2 = np.eye(2)


def second_pk(F, p, Ta, mat: MaterialParams = MaterialParams()):
    """Second Piola-Kirchhoff stress for deformation gradients ``F`` (..., 2, 2)."""
    F = np.asarray(F, dtype=np.float64)
    J = _det(F)
    if np.any(J <= 0):
        raise MechanicsError("non-positive det F")
    C = _t(F) @ F
    Cinv = _inv(C)
    p = np.asarray(p, dtype=np.float64)[..., None, None]
    Ta = np.asarray(Ta, dtype=np.float64)[..., None, None]
    trC = (C[..., 0, 0] + C[..., 1, 1])[..., None, None]
    S = 2.0 * mat.c1 * _I2 + 2.0 * mat.c2 * (trC * _I2 - C) - p * Cinv
    if mat.active == "isotropic":
        S = S + Ta * Cinv
    else:
        f = np.asarray(mat.fibre)
        fCf = np.einsum("i,...ij,j->...", f, C, f)[..., None, None]
        S = S + Ta * np.outer(f, f) / fCf
    return 0.5 * (S + _t(S))


# ---------------------------------------------------------------------------
# quadrature and shape functions
# ---------------------------------------------------------------------------

_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
QUAD_POINTS = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
QUAD_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def _p2_dshape(L):
    """dN_a/dL_k for the six P2 functions at barycentric points; shape (q, 6, 3)."""
    q = len(L)
    d = np.zeros((q, 6, 3))
    for k in range(3):
        d[:, k, k] = 4 * L[:, k] - 1
    for a, (i, j) in enumerate(((0, 1), (1, 2), (2, 0)), start=3):
        d[:, a, i] = 4 * L[:, j]
        d[:, a, j] = 4 * L[:, i]
    return d


_DSHAPE = _p2_dshape(QUAD_POINTS)


# ---------------------------------------------------------------------------
# discrete problem
# ---------------------------------------------------------------------------

def _pinning(mesh: TriMesh):
    """Vertex nearest the domain centre, and the neighbour joined by the most horizontal edge."""
    pts = mesh.points
    centre = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    c = int(np.argmin(np.linalg.norm(pts - centre, axis=1)))
    e = mesh.edges
    nb = np.concatenate([e[e[:, 0] == c, 1], e[e[:, 1] == c, 0]])
    d = pts[nb] - pts[c]
    slope = np.abs(d[:, 1]) / np.linalg.norm(d, axis=1)
    return c, int(nb[np.argmin(slope)])


@numba.njit(cache=True)
def _greedy_colour(indptr, indices, n):
    colour = -np.ones(n, np.int64)
    mark = -np.ones(n + 1, np.int64)
    for j in range(n):
        for k in range(indptr[j], indptr[j + 1]):
            c = colour[indices[k]]
            if c >= 0:
                mark[c] = j
        c = 0
        while mark[c] == j:
            c += 1
        colour[j] = c
    return colour


class MechanicsProblem:
    """Residual, Jacobian action and Newton solver on a fixed coarse mesh.

    ``Ta`` (per coarse element, kPa) is passed to every evaluation; the mesh's
    carving flags are ignored (mechanics always sees the whole domain).
    """

    def __init__(self, mesh: TriMesh, material: MaterialParams | None = None, pin: bool = True):
        self.mesh = mesh
        self.mat = material if material is not None else MaterialParams(fibre=tuple(mesh.fibre))
        self.X = mesh.p2_points
        self.E = mesh.p2_elements
        self.T = mesh.triangles
        self.n_p2 = len(self.X)
        self.n_v = mesh.n_nodes
        self.n_u = 2 * self.n_p2
        self.n_dof = self.n_u + self.n_v
        m = len(self.E)

        pts = mesh.points
        x = pts[self.T]
        d1, d2 = x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        if np.any(det <= 0):
            raise MechanicsError("mechanics mesh has inverted elements")
        g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
        g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
        gradL = np.stack([-g1 - g2, g1, g2], axis=1)  # (m, 3, 2)
        self.area = 0.5 * det
        self.gradN = np.einsum("qak,mkJ->mqaJ", _DSHAPE, gradL)  # (m, q, 6, 2)
        self.wA = QUAD_WEIGHTS[None, :] * self.area[:, None]  # (m, q)
        self.u_index = (2 * self.E[:, :, None] + np.arange(2)).reshape(m, 12)
        self.p_index = self.n_u + self.T

        if pin:
            c, nb = _pinning(mesh)
            self.pinned_nodes = (c, nb)
            fixed = [2 * c, 2 * c + 1, 2 * nb + 1]
        else:
            self.pinned_nodes = ()
            fixed = []
        free = np.ones(self.n_dof, bool)
        free[fixed] = False
        self.free = np.flatnonzero(free)
        self.n_free = len(self.free)
        self._pattern = None
        self._colours = None
        self._ordering = None

    # -- state helpers ---------------------------------------------------------
    def reference_state(self) -> np.ndarray:
        z = np.zeros(self.n_dof)
        z[self.n_u:] = self.mat.reference_pressure
        return z

    def split(self, z):
        return z[:self.n_u].reshape(-1, 2), z[self.n_u:]

    def deformation_gradient(self, z) -> np.ndarray:
        u, _ = self.split(z)
        xe = (self.X + u)[self.E]  # (m, 6, 2)
        return np.einsum("mai,mqaJ->mqiJ", xe, self.gradN)

    def jacobian_determinants(self, z) -> np.ndarray:
        return _det(self.deformation_gradient(z))

    def _ta_q(self, Ta):
        Ta = np.broadcast_to(np.asarray(Ta, dtype=np.float64), (len(self.E),))
        return Ta[:, None]

    # -- residual --------------------------------------------------------------
    def residual(self, z, Ta=0.0) -> np.ndarray:
        """Full residual: momentum rows (weak equilibrium) then incompressibility rows."""
        F = self.deformation_gradient(z)
        J = _det(F)
        if np.any(J <= 0):
            bad = int(np.flatnonzero((J <= 0).any(axis=1))[0])
            raise MechanicsError(f"inverted mechanics element {bad}")
        _, p = self.split(z)
        pq = p[self.T] @ QUAD_POINTS.T  # (m, q)
        S = second_pk(F, pq, np.broadcast_to(self._ta_q(Ta), pq.shape), self.mat)
        P = F @ S
        ru = np.einsum("mq,mqiJ,mqaJ->mai", self.wA, P, self.gradN)
        rp = np.einsum("mq,qb->mb", self.wA * (J - 1.0), QUAD_POINTS)
        R = np.bincount(self.u_index.ravel(), ru.ravel(), self.n_dof)
        R += np.bincount(self.p_index.ravel(), rp.ravel(), self.n_dof)
        return R

    def jvp(self, z, dz, Ta=0.0) -> np.ndarray:
        """Exact directional derivative of :meth:`residual` at ``z`` along ``dz``."""
        F = self.deformation_gradient(z)
        du, dp = self.split(dz)
        dF = np.einsum("mai,mqaJ->mqiJ", du[self.E], self.gradN)
        J = _det(F)
        _, p = self.split(z)
        pq = p[self.T] @ QUAD_POINTS.T
        dpq = dp[self.T] @ QUAD_POINTS.T
        Ta_q = np.broadcast_to(self._ta_q(Ta), pq.shape)
        S = second_pk(F, pq, Ta_q, self.mat)
        C = _t(F) @ F
        dC = _t(dF) @ F + _t(F) @ dF
        Cinv = _inv(C)
        trdC = (dC[..., 0, 0] + dC[..., 1, 1])[..., None, None]
        dS = 2.0 * self.mat.c2 * (trdC * _I2 - dC) - dpq[..., None, None] * Cinv
        dS += pq[..., None, None] * (Cinv @ dC @ Cinv)
        if self.mat.active == "isotropic":
            dS -= Ta_q[..., None, None] * (Cinv @ dC @ Cinv)
        else:
            f = np.asarray(self.mat.fibre)
            fCf = np.einsum("i,...ij,j->...", f, C, f)
            fdCf = np.einsum("i,...ij,j->...", f, dC, f)
            dS -= (Ta_q * fdCf / fCf ** 2)[..., None, None] * np.outer(f, f)
        dP = dF @ S + F @ dS
        Finv = _inv(F, J)
        dJ = J * np.einsum("...ij,...ji->...", Finv, dF)
        ru = np.einsum("mq,mqiJ,mqaJ->mai", self.wA, dP, self.gradN)
        rp = np.einsum("mq,qb->mb", self.wA * dJ, QUAD_POINTS)
        R = np.bincount(self.u_index.ravel(), ru.ravel(), self.n_dof)
        R += np.bincount(self.p_index.ravel(), rp.ravel(), self.n_dof)
        return R

    # -- sparsity and sampled Jacobian ---------------------------------------
    def pattern(self) -> sp.csr_matrix:
        """Free-dof Jacobian sparsity implied by element connectivity."""
        if self._pattern is None:
            m = len(self.E)
            dofs = np.concatenate([self.u_index, self.p_index], axis=1)  # (m, 15)
            S = sp.csr_matrix((np.ones(dofs.size), (np.repeat(np.arange(m), dofs.shape[1]), dofs.ravel())),
                              shape=(m, self.n_dof))
            P = (S.T @ S).tocsr()[self.free][:, self.free]
            P.data[:] = 1.0
            self._pattern = P.tocsr()
        return self._pattern

    def colouring(self) -> np.ndarray:
        """Column colouring such that same-coloured columns never share a row."""
        if self._colours is None:
            P = self.pattern()
            G = (P.T @ P).tocsr()
            self._colours = _greedy_colour(G.indptr.astype(np.int64), G.indices.astype(np.int64), P.shape[1])
        return self._colours

    def ordering(self) -> np.ndarray:
        """Free-dof permutation for factorisation: RCM on displacements, then RCM on pressures.

        Pressures stay last so every zero diagonal is preceded by the
        displacement rows that fill it in; the pressure block is ordered on
        the pattern of its Schur complement.
        """
        if self._ordering is None:
            P = self.pattern()
            nu = int(np.sum(self.free < self.n_u))
            pu = reverse_cuthill_mckee(P[:nu, :nu].tocsr(), symmetric_mode=True)
            S = (P[nu:, :nu] @ P[:nu, nu:]).tocsr()
            pp = reverse_cuthill_mckee(S, symmetric_mode=True)
            self._ordering = np.concatenate([pu, nu + pp]).astype(np.int64)
        return self._ordering

    def sampled_jacobian(self, z, Ta=0.0, eps: float = 1e-7) -> sp.csr_matrix:
        """Free-dof Jacobian sampled by forward residual differences, one per colour."""
        P = self.pattern().tocsc()
        colours = self.colouring()
        r0 = self.residual(z, Ta)[self.free]
        rows, cols, vals = [], [], []
        scale = eps * max(1.0, np.abs(z).max())
        for c in range(colours.max() + 1):
            cc = np.flatnonzero(colours == c)
            dz = np.zeros(self.n_dof)
            dz[self.free[cc]] = scale
            dr = (self.residual(z + dz, Ta)[self.free] - r0) / scale
            for j in cc:
                rr = P.indices[P.indptr[j]:P.indptr[j + 1]]
                rows.append(rr)
                cols.append(np.full(len(rr), j))
                vals.append(dr[rr])
        rows, cols, vals = (np.concatenate(a) for a in (rows, cols, vals))
        return sp.csr_matrix((vals, (rows, cols)), shape=P.shape)

    def dense_jacobian(self, z, Ta=0.0) -> np.ndarray:
        """Free-dof Jacobian from exact directional derivatives (small meshes only)."""
        out = np.empty((self.n_free, self.n_free))
        for k, j in enumerate(self.free):
            e = np.zeros(self.n_dof)
            e[j] = 1.0
            out[:, k] = self.jvp(z, e, Ta)[self.free]
        return out


# ---------------------------------------------------------------------------
# Newton-Krylov
# ---------------------------------------------------------------------------

class PermutedIlu:
    """ILUT of ``A[perm][:, perm]`` applied as a preconditioner for ``A``."""

    def __init__(self, A, perm, drop_tol, max_fill):
        self.perm = perm
        A = sp.csr_matrix(A)
        self.ilu = ilu_factor(A[perm][:, perm], drop_tol, max_fill)

    @property
    def nnz(self) -> int:
        return self.ilu.nnz

    def solve(self, v):
        out = np.empty_like(v)
        out[self.perm] = self.ilu.solve(v[self.perm])
        return out


@dataclass
class NewtonStats:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    increments: list = field(default_factory=list)
    gmres_iterations: list = field(default_factory=list)
    preconditioner_builds: int = 0
    time: float = 0.0


class NewtonSolver:
    """Matrix-free Newton-Krylov with a reusable ILUT preconditioner.

    Jacobian-vector products are central residual differences (``jvp="fd"``)
    or exact linearisations (``jvp="exact"``). The preconditioner is an ILUT
    factorisation of a colour-sampled Jacobian, rebuilt only when GMRES
    iteration counts grow past twice the count seen right after a rebuild.
    """

    def __init__(self, problem: MechanicsProblem, tol: float = 1e-8, atol: float = 1e-11,
                 max_newton: int = 25, gmres_tol: float = 1e-6, jvp: str = "fd",
                 drop_tol: float = 1e-6, max_fill: int = 80, max_inner: int = 200):
        if jvp not in ("fd", "exact"):
            raise ValueError("jvp must be 'fd' or 'exact'")
        self.problem = problem
        self.tol = tol
        self.atol = atol
        self.max_newton = max_newton
        self.gmres_tol = gmres_tol
        self.max_inner = max_inner
        self.jvp_mode = jvp
        self.drop_tol = drop_tol
        self.max_fill = max_fill
        self.precond = None
        self._base_iters = None
        self.total = NewtonStats()

    def build_preconditioner(self, z, Ta) -> None:
        A = self.problem.sampled_jacobian(z, Ta)
        self.precond = PermutedIlu(A, self.problem.ordering(), self.drop_tol, self.max_fill)
        self._base_iters = None
        self.total.preconditioner_builds += 1

    def _operator(self, z, Ta, r_full):
        pb = self.problem
        free = pb.free
        if self.jvp_mode == "exact":
            def matvec(v):
                dz = np.zeros(pb.n_dof)
                dz[free] = v
                return pb.jvp(z, dz, Ta)[free]
        else:
            u_scale = 1.0 + np.abs(z[:pb.n_u]).max()

            def matvec(v):
                vm = np.abs(v).max()
                if vm == 0.0:
                    return np.zeros_like(v)
                # central differences; 1e-4 mm balances the O(h^2) truncation
                # against cancellation in the residual (smaller steps stall GMRES)
                h = 1e-4 * u_scale / vm
                dz = np.zeros(pb.n_dof)
                dz[free] = h * v
                return (pb.residual(z + dz, Ta)[free] - pb.residual(z - dz, Ta)[free]) / (2.0 * h)
        return matvec

    def solve(self, z0, Ta=0.0) -> tuple[np.ndarray, NewtonStats]:
        """Return the converged state and per-solve statistics."""
        t0 = time.perf_counter()
        pb = self.problem
        z = np.array(z0, dtype=np.float64)
        stats = NewtonStats()
        r = pb.residual(z, Ta)
        rn = np.linalg.norm(r[pb.free])
        stats.residuals.append(rn)
        target = max(self.tol * rn, self.atol)
        growth = 0
        while rn > target:
            if stats.iterations >= self.max_newton:
                raise MechanicsError(f"Newton did not converge in {self.max_newton} iterations "
                                     f"(residual {rn:.3e})", stats.residuals)
            fresh = self.precond is None
            if fresh:
                self.build_preconditioner(z, Ta)
                stats.preconditioner_builds += 1
            op = self._operator(z, Ta, r)
            rhs = -r[pb.free]
            res = gmres(op, rhs, tol=self.gmres_tol, max_iters=self.max_inner, precond=self.precond)
            stale = self._base_iters is not None and res.iterations > 2 * self._base_iters + 5
            if (not res.converged and not fresh) or stale:
                self.build_preconditioner(z, Ta)
                stats.preconditioner_builds += 1
                res = gmres(op, rhs, tol=self.gmres_tol, max_iters=self.max_inner, precond=self.precond)
            # inexact Newton: a partially converged inner solve is still a descent step
            if not res.converged and not res.residual < 0.1:
                raise MechanicsError(f"inner GMRES failed: {res.status}, residual {res.residual:.3e}",
                                     stats.residuals)
            if self._base_iters is None:
                self._base_iters = max(res.iterations, 1)
            stats.gmres_iterations.append(res.iterations)
            dz = np.zeros(pb.n_dof)
            dz[pb.free] = res.x
            # backtracking on the residual norm; inverted trial states count as failures
            trial_step, step, r_new, new = 1.0, None, None, np.inf
            for _ in range(12):
                try:
                    trial = pb.residual(z + trial_step * dz, Ta)
                except MechanicsError:
                    trial_step *= 0.5
                    continue
                step, r_new, new = trial_step, trial, np.linalg.norm(trial[pb.free])
                if new <= (1.0 - 1e-4 * step) * rn:
                    break
                trial_step *= 0.5
            if r_new is None:
                raise MechanicsError("Newton step inverts elements at every damping level", stats.residuals)
            z = z + step * dz
            r = r_new
            growth = growth + 1 if new > rn else 0
            rn = new
            stats.iterations += 1
            stats.residuals.append(rn)
            stats.increments.append(step * np.linalg.norm(res.x))
            if growth >= 3:
                raise MechanicsError("Newton diverging: residual grew over 3 consecutive iterations",
                                     stats.residuals)
        stats.time = time.perf_counter() - t0
        log.debug("newton: %d iterations, gmres %s, residuals %s, %.3f s", stats.iterations,
                  stats.gmres_iterations, " ".join(f"{r:.2e}" for r in stats.residuals), stats.time)
        tot = self.total
        tot.iterations += stats.iterations
        tot.gmres_iterations.extend(stats.gmres_iterations)
        tot.time += stats.time
        return z, stats


def _lerp(a, b, s):
    return np.asarray(a, dtype=np.float64) + s * (np.asarray(b, dtype=np.float64) - np.asarray(a, dtype=np.float64))


def solve_with_continuation(solver: NewtonSolver, z0, Ta, Ta0=0.0, max_splits: int = 6):
    """Solve at tension ``Ta`` from a state in equilibrium with ``Ta0``.

    If Newton fails, the tension increment is halved recursively.
    """
    try:
        return solver.solve(z0, Ta)[0]
    except MechanicsError:
        if max_splits == 0:
            raise
    mid = _lerp(Ta0, Ta, 0.5)
    z_mid = solve_with_continuation(solver, z0, mid, Ta0, max_splits - 1)
    return solve_with_continuation(solver, z_mid, Ta, mid, max_splits - 1)


def extrapolate_initial(prev: np.ndarray, prev2: np.ndarray) -> np.ndarray:
    """Linear extrapolation 2 prev - prev2 of the two latest converged states."""
    return 2.0 * np.asarray(prev) - np.asarray(prev2)


def newton_solve(problem: MechanicsProblem, initial, Ta=0.0, tol: float = 1e-8, max_newton: int = 25,
                 **kwargs) -> np.ndarray:
    z, _ = NewtonSolver(problem, tol=tol, max_newton=max_newton, **kwargs).solve(initial, Ta)
    return z


def uniaxial_stretch(Ta: float, mat: MaterialParams = MaterialParams()) -> float:
    """Fibre stretch of a traction-free homogeneous sheet under uniform tension.

    Positive root of 2 c1 (l^4 - 1) + Ta l^2 = 0 (anisotropic active stress).
    """
    c1 = mat.c1
    s = (-Ta + np.sqrt(Ta * Ta + 16.0 * c1 * c1)) / (4.0 * c1)  # l^2
    return float(np.sqrt(s))

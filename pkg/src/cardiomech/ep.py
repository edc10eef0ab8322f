"""
Monodomain electrophysiology on the fine mesh.

P1 Galerkin finite elements with a consistent mass matrix. Diffusion is
advanced by Crank-Nicolson and the ionic reaction by forward Euler:

    (M + dt/2 K) V+ = (M - dt/2 K) V + dt M R(V)

solved with ILUT-preconditioned GMRES. Only nodes touched by an alive
triangle carry unknowns, so carved patches get zero-flux boundaries for free.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .cell import CellStepper, IonicParams, TensionParams, resting_states, step_tension
from .linalg import SolverError, gmres, ilu_factor
from .mesh import DIAGONAL_FIBRE, TriMesh

log = logging.getLogger(__name__)

# mm^2/ms
D_FIBRE_CONTROL = 0.154
D_FIBRE_HF = 0.139
D_CROSS = 0.154 / 9.0


class AssemblyError(ValueError):
    def __init__(self, element: int, message: str = "inverted or degenerate element"):
        super().__init__(f"element {element}: {message}")
        self.element = element


@dataclass(frozen=True)
class DiffusionTensor:
    d_fibre: float = D_FIBRE_CONTROL
    d_cross: float = D_CROSS
    fibre: tuple = tuple(DIAGONAL_FIBRE)

    def __post_init__(self):
        if not self.d_fibre >= self.d_cross > 0.0:
            raise ValueError("need d_fibre >= d_cross > 0")
        f = np.asarray(self.fibre, dtype=np.float64)
        object.__setattr__(self, "fibre", tuple(f / np.linalg.norm(f)))

    @classmethod
    def control(cls, fibre=DIAGONAL_FIBRE) -> "DiffusionTensor":
        return cls(D_FIBRE_CONTROL, D_CROSS, tuple(fibre))

    @classmethod
    def heart_failure(cls, fibre=DIAGONAL_FIBRE) -> "DiffusionTensor":
        """Gap-junction remodelling: slower fibre diffusion, cross-fibre unchanged."""
        return cls(D_FIBRE_HF, D_CROSS, tuple(fibre))

    def matrix(self, fibre=None) -> np.ndarray:
        """D = d_f f f^T + d_c (I - f f^T); ``fibre`` may be (2,) or (m, 2)."""
        f = np.asarray(self.fibre if fibre is None else fibre, dtype=np.float64)
        ff = f[..., :, None] * f[..., None, :]
        return self.d_cross * np.eye(2) + (self.d_fibre - self.d_cross) * ff


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def p1_gradients(coords: np.ndarray, tri: np.ndarray):
    """Barycentric gradients (m, 3, 2) and signed areas (m,) of P1 triangles."""
    x = coords[tri]
    d1 = x[:, 1] - x[:, 0]
    d2 = x[:, 2] - x[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    G = np.stack([-g1 - g2, g1, g2], axis=1)
    return G, 0.5 * det


def corotated_fibres(ref: np.ndarray, cur: np.ndarray, tri: np.ndarray, f0) -> np.ndarray:
    """Per-element fibre F f0 / |F f0| for the P1 map ``ref -> cur``."""
    G, _ = p1_gradients(ref, tri)
    F = np.einsum("mai,maj->mij", cur[tri], G)  # dx/dX
    f = F @ np.asarray(f0, dtype=np.float64)
    return f / np.linalg.norm(f, axis=1, keepdims=True)


class P1Assembler:
    """Mass and stiffness assembly over the alive triangles of a mesh.

    The sparsity pattern and the element-to-CSR scatter map are computed once,
    so reassembly on a moved mesh is a weighted bincount.
    """

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.elements = np.flatnonzero(mesh.alive)
        self.nodes = np.flatnonzero(mesh.alive_nodes)
        local = -np.ones(mesh.n_nodes, np.int64)
        local[self.nodes] = np.arange(len(self.nodes))
        self.local_of = local
        self.tri = local[mesh.triangles[self.elements]]
        n = len(self.nodes)
        self.n = n
        rows = np.repeat(self.tri, 3, axis=1).ravel()
        cols = np.tile(self.tri, (1, 3)).ravel()
        keys = rows * n + cols
        uniq, self._scatter = np.unique(keys, return_inverse=True)
        self._indices = (uniq % n).astype(np.int32)
        counts = np.bincount(uniq // n, minlength=n)
        self._indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
        self._nnz = len(uniq)

    def _csr(self, vals) -> sp.csr_matrix:
        data = np.bincount(self._scatter, weights=vals.ravel(), minlength=self._nnz)
        return sp.csr_matrix((data, self._indices.copy(), self._indptr.copy()), shape=(self.n, self.n))

    def assemble(self, coords: np.ndarray, D: DiffusionTensor, fibres=None):
        """Return (M, K) for node coordinates ``coords`` (alive nodes, local order).

        ``fibres`` optionally gives one fibre direction per alive element.
        """
        G, area = p1_gradients(coords, self.tri)
        bad = np.flatnonzero(~(area > 0.0))
        if len(bad):
            raise AssemblyError(int(self.elements[bad[0]]))
        Dm = D.matrix(fibres)  # (2,2) or (m,2,2)
        if Dm.ndim == 2:
            GD = G @ Dm
        else:
            GD = np.einsum("mai,mij->maj", G, Dm)
        Ke = area[:, None, None] * np.einsum("mai,mbi->mab", GD, G)
        Me = area[:, None, None] * _MASS_REF
        return self._csr(Me), self._csr(Ke)


def assemble(mesh: TriMesh, D: DiffusionTensor, coords=None):
    """Mass and stiffness matrices over alive elements; unknowns are alive nodes.

    ``coords`` are current positions of all mesh nodes (default: reference).
    """
    asm = P1Assembler(mesh)
    pts = mesh.points if coords is None else np.asarray(coords, dtype=np.float64)
    return asm.assemble(pts[asm.nodes], D)


# ---------------------------------------------------------------------------
# stimulus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StimulusSpec:
    """A block stimulus: ``-amplitude`` (uA/uF, i.e. mV/ms) on a region for ``duration`` ms."""

    region: Callable[[np.ndarray], np.ndarray]
    onset: float = 0.0
    duration: float = 1.0
    amplitude: float = 52.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("stimulus duration must be positive")

    def active(self, t: float) -> bool:
        return self.onset - 1e-9 <= t < self.onset + self.duration - 1e-9


def left_face(width: float = 2.0, x0: float = 0.0):
    return lambda p: p[:, 0] <= x0 + width + 1e-12


def bottom_face(width: float = 2.0, y0: float = 0.0):
    return lambda p: p[:, 1] <= y0 + width + 1e-12


# ---------------------------------------------------------------------------
# solver state
# ---------------------------------------------------------------------------

@dataclass
class StepStats:
    steps: int = 0
    gmres_iterations: list = field(default_factory=list)
    ilu_builds: int = 0
    reassemblies: int = 0
    time_cells: float = 0.0
    time_solve: float = 0.0
    time_assembly: float = 0.0


class EpField:
    """Voltage, cell states and operators of a monodomain simulation.

    States live on alive nodes only (``self.nodes`` gives their mesh indices).
    ``Y`` has shape (19, n) with the voltage in row 0; ``Ta`` is the active
    tension per node.
    """

    def __init__(self, mesh: TriMesh, params: IonicParams, D: DiffusionTensor | None = None,
                 dt: float = 0.08, tol: float = 1e-8, tables: bool = True,
                 tension: TensionParams = TensionParams(), drop_tol: float = 1e-4, max_fill: int = 10,
                 lumped: bool = False):
        self.mesh = mesh
        self.D = D if D is not None else DiffusionTensor(fibre=tuple(mesh.fibre))
        self.dt = float(dt)
        self.tol = tol
        self.tension = tension
        self.drop_tol = drop_tol
        self.max_fill = max_fill
        self.lumped = lumped
        self.asm = P1Assembler(mesh)
        self.nodes = self.asm.nodes
        self.X = mesh.points[self.nodes].copy()
        self.x = self.X.copy()
        n = len(self.nodes)
        self.Y = resting_states(n)
        self.Ta = np.zeros(n)
        self.t = 0.0
        self.stepper = CellStepper(params, tables=tables)
        self.first_activation = np.full(n, np.nan)
        self.last_activation = np.full(n, np.nan)
        self.stats = StepStats()
        self._fibres = None
        self._assemble()

    # -- properties ----------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def V(self) -> np.ndarray:
        return self.Y[0]

    @property
    def params(self) -> IonicParams:
        return self.stepper.params

    def set_params(self, params: IonicParams) -> None:
        self.stepper.set_params(params)

    def node_values(self, values=None, fill=np.nan) -> np.ndarray:
        """Scatter per-alive-node values (default V) onto all mesh nodes."""
        out = np.full(self.mesh.n_nodes, fill, dtype=np.float64)
        out[self.nodes] = self.V if values is None else values
        return out

    # -- operators -------------------------------------------------------------
    def _assemble(self) -> None:
        t0 = time.perf_counter()
        self.M, self.K = self.asm.assemble(self.x, self.D, self._fibres)
        if self.lumped:
            self.M = sp.diags(np.asarray(self.M.sum(axis=1)).ravel()).tocsr()
        self.A = (self.M + 0.5 * self.dt * self.K).tocsr()
        self.B = (self.M - 0.5 * self.dt * self.K).tocsr()
        self.stats.reassemblies += 1
        self.stats.time_assembly += time.perf_counter() - t0

    def _factor(self) -> None:
        self.precond = ilu_factor(self.A, self.drop_tol, self.max_fill)
        self.stats.ilu_builds += 1
        self._base_iters = None

    def update_geometry(self, displacement: np.ndarray) -> None:
        """Move nodes to reference + displacement and reassemble.

        ``displacement`` is given either on all mesh nodes or on alive nodes.
        The fibre axis of each element co-rotates with its deformation. V and
        the cell states stay attached to their nodes. The ILU factors are kept
        until the GMRES iteration count drifts upward.
        """
        u = np.asarray(displacement, dtype=np.float64)
        if u.shape[0] == self.mesh.n_nodes:
            u = u[self.nodes]
        if u.shape != self.X.shape:
            raise ValueError("displacement has the wrong shape")
        self.x = self.X + u
        if np.any(u != 0.0):
            self._fibres = corotated_fibres(self.X, self.x, self.asm.tri, self.D.fibre)
        else:
            self._fibres = None
        self._assemble()

    # -- time stepping ---------------------------------------------------------
    def stimulus_current(self, stims) -> np.ndarray | None:
        ist = None
        for s in stims:
            if s.active(self.t):
                if ist is None:
                    ist = np.zeros(self.n)
                ist[s.region(self.X)] -= s.amplitude
        return ist

    def step(self, stims=(), reaction: bool = True) -> None:
        dt = self.dt
        if not hasattr(self, "precond"):
            self._factor()
        v_old = self.V.copy()
        t0 = time.perf_counter()
        if reaction:
            R = self.stepper.step(self.Y, dt, self.stimulus_current(stims), update_v=False)
            self.Ta = step_tension(self.Ta, v_old, dt, self.tension)
        else:
            R = np.zeros(self.n)
        t1 = time.perf_counter()
        w = v_old + dt * R
        rhs = self.M @ w - (0.5 * dt) * (self.K @ v_old)
        res = gmres(self.A, rhs, x0=w, tol=self.tol, max_iters=500, precond=self.precond)
        if not res.converged:
            raise SolverError(f"EP linear solve failed at t={self.t:.2f} ms: {res.status} after "
                              f"{res.iterations} iterations, residual {res.residual:.3e}")
        if self._base_iters is None:
            self._base_iters = max(res.iterations, 1)
        elif res.iterations > 2 * self._base_iters + 2:
            log.debug("refactoring EP preconditioner (%d iterations)", res.iterations)
            self._factor()
        self.stats.gmres_iterations.append(res.iterations)
        self.Y[0] = res.x
        self.stats.time_cells += t1 - t0
        self.stats.time_solve += time.perf_counter() - t1
        self._track_activation(v_old, res.x)
        # rounded so long runs land exactly on protocol times
        self.t = round(self.t + dt, 9)
        self.stats.steps += 1

    def _track_activation(self, v0, v1) -> None:
        up = (v0 < 0.0) & (v1 >= 0.0)
        if np.any(up):
            idx = np.flatnonzero(up)
            tc = self.t + self.dt * (0.0 - v0[idx]) / (v1[idx] - v0[idx])
            first = np.isnan(self.first_activation[idx])
            self.first_activation[idx[first]] = tc[first]
            self.last_activation[idx] = tc

    def run(self, duration: float, stims=(), reaction: bool = True, callback=None, every: int = 1) -> None:
        """Advance by ``duration`` ms; ``callback(self)`` runs every ``every`` steps."""
        n = int(round(duration / self.dt))
        for k in range(n):
            self.step(stims, reaction)
            if callback is not None and (k + 1) % every == 0:
                callback(self)

    def mean_voltage(self) -> float:
        """Area-weighted mean of V, i.e. 1^T M V / area."""
        return float(self.M.sum(axis=0).A1 @ self.V / self.M.sum())

    def check(self) -> None:
        if not np.all(np.isfinite(self.Y)):
            raise SolverError(f"non-finite cell state at t={self.t:.2f} ms")


# ---------------------------------------------------------------------------
# conduction velocity
# ---------------------------------------------------------------------------

def measure_cv(points: np.ndarray, activation: np.ndarray, axis, s_a: float, s_b: float,
               band: float = 0.3, lateral: tuple | None = None) -> float:
    """Conduction velocity (mm/ms) between two probe lines.

    The probes are the lines ``points . axis = s_a`` and ``= s_b``; activation
    times of nodes within ``band`` of each line (and, optionally, whose
    coordinate along the perpendicular lies in ``lateral``) are averaged.
    """
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    s = points @ axis
    keep = np.ones(len(points), bool)
    if lateral is not None:
        perp = np.array([-axis[1], axis[0]])
        if perp.sum() < 0:
            perp = -perp
        q = points @ perp
        keep = (q >= lateral[0]) & (q <= lateral[1])
    pos, times = [], []
    for s0 in (s_a, s_b):
        sel = keep & (np.abs(s - s0) <= band)
        if not np.any(sel):
            raise ValueError(f"no nodes near probe line {s0}")
        t = activation[sel]
        if np.any(np.isnan(t)):
            raise ValueError(f"probe line {s0} not activated")
        pos.append(s[sel].mean())
        times.append(t.mean())
    dt = times[1] - times[0]
    if dt <= 0:
        raise ValueError("wave did not travel from the first probe to the second")
    return (pos[1] - pos[0]) / dt

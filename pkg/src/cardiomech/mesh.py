"""
Unstructured triangle meshes.

A :class:`TriMesh` is a counter-clockwise triangulation with a per-triangle
``alive`` flag; dead triangles are carved fibrotic holes. The mechanics mesh
is generated directly, and the electrophysiology mesh is obtained from it by
uniform midpoint refinement so that every fine triangle knows its coarse
parent (:class:`EmbeddingMap`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay

log = logging.getLogger(__name__)

DIAGONAL_FIBRE = np.array([1.0, 1.0]) / np.sqrt(2.0)

# barycentric coordinates (w.r.t. the parent) of each child's vertices
_CHILD_BARY = np.array([
    [[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5]],
    [[0.5, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.5, 0.5]],
    [[0.5, 0.0, 0.5], [0.0, 0.5, 0.5], [0.0, 0.0, 1.0]],
    [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]],
])


class MeshError(ValueError):
    pass


class FibrosisError(MeshError):
    def __init__(self, message: str, achieved_fraction: float):
        super().__init__(f"{message} (achieved inexcitable fraction {achieved_fraction:.4f})")
        self.achieved_fraction = achieved_fraction


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


@dataclass(frozen=True, eq=False)
class TriMesh:
    points: np.ndarray  # (n, 2) mm
    triangles: np.ndarray  # (m, 3) counter-clockwise node indices
    alive: np.ndarray = None  # (m,) False marks a carved triangle
    fibre: np.ndarray = field(default_factory=lambda: DIAGONAL_FIBRE.copy())

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        tri = np.ascontiguousarray(self.triangles, dtype=np.int64)
        alive = np.ones(len(tri), bool) if self.alive is None else np.asarray(self.alive, bool).copy()
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "triangles", tri)
        object.__setattr__(self, "alive", alive)
        object.__setattr__(self, "fibre", _unit(self.fibre))
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise MeshError("points must have shape (n, 2)")
        if tri.ndim != 2 or tri.shape[1] != 3 or alive.shape != (len(tri),):
            raise MeshError("triangles must have shape (m, 3) with one alive flag each")
        if tri.size and (tri.min() < 0 or tri.max() >= len(pts)):
            raise MeshError("triangle references a missing node")

    # -- basic geometry ---------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.points)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        return signed_areas(self.points, self.triangles)

    @property
    def centroids(self) -> np.ndarray:
        return self.points[self.triangles].mean(axis=1)

    def alive_area(self) -> float:
        return float(self.areas[self.alive].sum())

    def total_area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def alive_nodes(self) -> np.ndarray:
        """Boolean mask of nodes touched by at least one alive triangle."""
        mask = np.zeros(self.n_nodes, bool)
        mask[self.triangles[self.alive].ravel()] = True
        return mask

    # -- topology ---------------------------------------------------------
    @cached_property
    def _edge_data(self):
        tri = self.triangles
        local = np.stack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=1).reshape(-1, 2)
        keys = np.sort(local, axis=1)
        edges, inverse = np.unique(keys, axis=0, return_inverse=True)
        return edges, inverse.reshape(-1, 3)

    @property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted node pairs, shape (n_edges, 2)."""
        return self._edge_data[0]

    @property
    def tri_edges(self) -> np.ndarray:
        """Edge index of local edges (0-1, 1-2, 2-0) per triangle."""
        return self._edge_data[1]

    @cached_property
    def edge_triangles(self) -> np.ndarray:
        """Up to two triangles adjacent to each edge (-1 if absent)."""
        ne = len(self.edges)
        out = -np.ones((ne, 2), np.int64)
        te = self.tri_edges.ravel()
        owner = np.repeat(np.arange(self.n_triangles), 3)
        order = np.argsort(te, kind="stable")
        te_s, ow_s = te[order], owner[order]
        first = np.ones(len(te_s), bool)
        first[1:] = te_s[1:] != te_s[:-1]
        out[te_s[first], 0] = ow_s[first]
        out[te_s[~first], 1] = ow_s[~first]
        return out

    @cached_property
    def neighbours(self) -> np.ndarray:
        """Triangle across each local edge, -1 on the outer boundary."""
        et = self.edge_triangles[self.tri_edges]  # (m, 3, 2)
        me = np.arange(self.n_triangles)[:, None]
        return np.where(et[..., 0] == me, et[..., 1], et[..., 0])

    def with_alive(self, alive) -> "TriMesh":
        return replace(self, alive=np.asarray(alive, bool))

    def with_fibre(self, fibre) -> "TriMesh":
        return replace(self, fibre=_unit(fibre))

    # -- P2 numbering -----------------------------------------------------
    @property
    def n_p2_nodes(self) -> int:
        return self.n_nodes + len(self.edges)

    @cached_property
    def p2_points(self) -> np.ndarray:
        mid = self.points[self.edges].mean(axis=1)
        return np.vstack([self.points, mid])

    @cached_property
    def p2_elements(self) -> np.ndarray:
        """Six P2 node indices per triangle: vertices, then midpoints of 0-1, 1-2, 2-0."""
        return np.hstack([self.triangles, self.n_nodes + self.tri_edges])

    def mean_edge_length(self) -> float:
        e = self.edges
        return float(np.linalg.norm(self.points[e[:, 0]] - self.points[e[:, 1]], axis=1).mean())

    def check(self) -> None:
        """Raise MeshError if orientation, area or edge-sharing invariants fail."""
        if np.any(self.areas <= 0.0):
            raise MeshError(f"{int(np.sum(self.areas <= 0))} triangles with non-positive area")
        t = self.triangles
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise MeshError("degenerate triangle with repeated node")
        counts = np.bincount(self.tri_edges.ravel(), minlength=len(self.edges))
        if counts.max() > 2:
            raise MeshError("edge shared by more than two triangles")


def signed_areas(points, triangles) -> np.ndarray:
    p = points[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def generate_square_mesh(side: float, target_edge: float, seed: int = 0, jitter: float = 0.18,
                         fibre=DIAGONAL_FIBRE) -> TriMesh:
    """Unstructured triangulation of ``[0, side]^2``.

    ``target_edge`` is the nominal node spacing: nodes are placed at a density
    of one per ``target_edge**2`` on a jittered hexagonal lattice, with evenly
    spaced nodes along the four sides, and then Delaunay triangulated.
    """
    if side <= 0 or target_edge <= 0:
        raise MeshError("side and target_edge must be positive")
    if target_edge > side:
        raise MeshError("target_edge larger than the domain")
    a = target_edge * np.sqrt(2.0 / np.sqrt(3.0))  # hexagonal spacing at the same node density
    nx = max(1, int(round(side / a)))
    ny = max(1, int(round(side / (a * np.sqrt(3.0) / 2.0))))
    ax = side / nx
    ay = side / ny
    rng = np.random.default_rng(seed)

    s = np.linspace(0.0, side, nx + 1)
    t = np.linspace(0.0, side, ny + 1)
    bottom = np.column_stack([s, np.zeros_like(s)])
    top = np.column_stack([s, np.full_like(s, side)])
    left = np.column_stack([np.zeros(ny - 1), t[1:-1]])
    right = np.column_stack([np.full(ny - 1, side), t[1:-1]])

    interior = []
    for k in range(1, ny):
        shift = 0.5 * ax if k % 2 else 0.0
        xs = np.arange(nx + 1) * ax + shift
        xs = xs[(xs > 0.35 * ax) & (xs < side - 0.35 * ax)]
        interior.append(np.column_stack([xs, np.full_like(xs, t[k])]))
    inner = np.vstack(interior) if interior else np.zeros((0, 2))
    if len(inner):
        inner = inner + rng.uniform(-jitter, jitter, size=inner.shape) * np.array([ax, ay])
    pts = np.vstack([bottom, top, left, right, inner])

    tri = Delaunay(pts, qhull_options="Qbb Qc Qz Q12 QJ" if len(pts) < 4 else "Qbb Qc Qz Q12")
    simplices = tri.simplices.astype(np.int64)
    if len(np.unique(simplices)) != len(pts):
        raise MeshError("triangulation dropped nodes")
    area = signed_areas(pts, simplices)
    flip = area < 0
    simplices[flip] = simplices[flip][:, [0, 2, 1]]
    area = np.abs(area)
    keep = area > 1e-12 * ax * ay
    mesh = TriMesh(pts, simplices[keep], fibre=fibre)
    mesh.check()
    return mesh


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EmbeddingMap:
    """Fine-to-coarse relation produced by uniform refinement.

    ``bary[t, k]`` holds the barycentric coordinates, in the coarse parent
    ``parent[t]``, of the k-th vertex of fine triangle ``t``. ``node_parent``
    and ``node_bary`` give one containing coarse triangle per fine node.
    """

    parent: np.ndarray
    bary: np.ndarray
    depth: int
    n_coarse: int
    node_parent: np.ndarray
    node_bary: np.ndarray

    def children_per_parent(self) -> np.ndarray:
        return np.bincount(self.parent, minlength=self.n_coarse)

    def to_coarse_points(self, fine_tri, fine_bary) -> tuple[np.ndarray, np.ndarray]:
        """Map points given in fine-triangle barycentrics to coarse parent barycentrics."""
        fine_tri = np.asarray(fine_tri)
        return self.parent[fine_tri], np.einsum("pk,pkj->pj", fine_bary, self.bary[fine_tri])

    def interpolation_matrix(self, coarse: TriMesh, order: int = 2) -> sp.csr_matrix:
        """Sparse map from coarse nodal values (P1 vertices or P2 nodes) to fine nodes."""
        L = self.node_bary
        rows = np.repeat(np.arange(len(L)), 3 if order == 1 else 6)
        if order == 1:
            cols = coarse.triangles[self.node_parent].ravel()
            vals = L.ravel()
            n_cols = coarse.n_nodes
        else:
            cols = coarse.p2_elements[self.node_parent].ravel()
            vals = p2_shape(L).ravel()
            n_cols = coarse.n_p2_nodes
        M = sp.csr_matrix((vals, (rows, cols)), shape=(len(L), n_cols))
        M.eliminate_zeros()
        return M


def p2_shape(L: np.ndarray) -> np.ndarray:
    """Quadratic Lagrange shape functions at barycentric points, shape (..., 6)."""
    L0, L1, L2 = L[..., 0], L[..., 1], L[..., 2]
    return np.stack([L0 * (2 * L0 - 1), L1 * (2 * L1 - 1), L2 * (2 * L2 - 1),
                     4 * L0 * L1, 4 * L1 * L2, 4 * L2 * L0], axis=-1)


def _refine_once(mesh: TriMesh) -> TriMesh:
    n = mesh.n_nodes
    t = mesh.triangles
    m01, m12, m20 = (n + mesh.tri_edges[:, k] for k in range(3))
    pts = mesh.p2_points
    children = np.stack([
        np.column_stack([t[:, 0], m01, m20]),
        np.column_stack([m01, t[:, 1], m12]),
        np.column_stack([m20, m12, t[:, 2]]),
        np.column_stack([m01, m12, m20]),
    ], axis=1).reshape(-1, 3)
    return TriMesh(pts, children, np.repeat(mesh.alive, 4), mesh.fibre)


def refine_uniform(mesh: TriMesh, levels: int) -> tuple[TriMesh, EmbeddingMap]:
    """Split every triangle into four by edge midpoints, ``levels`` times.

    Coarse nodes keep their indices; each level appends its edge midpoints.
    """
    if levels < 1:
        raise MeshError("levels must be >= 1")
    parent = np.arange(mesh.n_triangles)
    bary = np.broadcast_to(np.eye(3), (mesh.n_triangles, 3, 3)).copy()
    fine = mesh
    for _ in range(levels):
        fine = _refine_once(fine)
        parent = np.repeat(parent, 4)
        bary = np.einsum("ckj,pji->pcki", _CHILD_BARY, bary.reshape(-1, 3, 3)).reshape(-1, 3, 3)
    node_parent = np.empty(fine.n_nodes, np.int64)
    node_bary = np.empty((fine.n_nodes, 3))
    node_parent[fine.triangles.ravel()] = np.repeat(parent, 3)
    node_bary[fine.triangles.ravel()] = bary.reshape(-1, 3)
    emb = EmbeddingMap(parent, bary, levels, mesh.n_triangles, node_parent, node_bary)
    return fine, emb


# ---------------------------------------------------------------------------
# fibrosis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FibrosisSpec:
    fraction: float  # target inexcitable area fraction
    patch_area: float  # target mean patch area, mm^2
    seed: int = 0
    min_separation: int = 1  # element layers between patches

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 0.35:
            raise MeshError("fibrotic fraction must lie in [0, 0.35]")
        if self.patch_area <= 0.0:
            raise MeshError("patch area must be positive")
        if self.min_separation != 1:
            raise MeshError("only a one-element separation layer is supported")


def carve_fibrosis(mesh: TriMesh, spec: FibrosisSpec) -> TriMesh:
    """Mark randomly placed clusters of elements as inexcitable.

    Each patch grows from a random seed element by repeatedly adding a random
    edge-neighbour until it reaches the target patch area. Distinct patches
    never share a node, so at least one layer of alive elements separates
    them. Seeds are drawn until the requested area fraction is reached.
    """
    if spec.fraction == 0.0:
        return mesh.with_alive(mesh.alive)
    areas = mesh.areas
    mean_area = float(areas.mean())
    if spec.patch_area <= mean_area:
        raise MeshError(f"patch area {spec.patch_area} is not larger than one element ({mean_area:.4g})")
    total = mesh.total_area()
    target = spec.fraction * total
    rng = np.random.default_rng(spec.seed)

    tri = mesh.triangles
    nbr = mesh.neighbours
    node_owner = -np.ones(mesh.n_nodes, np.int64)
    tri_owner = -np.ones(mesh.n_triangles, np.int64)
    alive0 = mesh.alive
    carved = 0.0
    pid = 0
    in_front = np.zeros(mesh.n_triangles, bool)

    def admissible(k, p):
        if tri_owner[k] >= 0 or not alive0[k]:
            return False
        o = node_owner[tri[k]]
        return bool(np.all((o < 0) | (o == p)))

    for s in rng.permutation(mesh.n_triangles):
        if carved >= target - 0.5 * mean_area:
            break
        if not admissible(s, pid):
            continue
        patch_area = 0.0
        front = [int(s)]
        in_front[s] = True
        touched = [int(s)]
        goal = min(spec.patch_area, target - carved + 0.5 * mean_area)
        while front and patch_area < goal - 0.5 * mean_area:
            i = int(rng.integers(len(front)))
            k = front[i]
            front[i] = front[-1]
            front.pop()
            if not admissible(k, pid):
                continue
            tri_owner[k] = pid
            node_owner[tri[k]] = pid
            patch_area += areas[k]
            for q in nbr[k]:
                if q >= 0 and not in_front[q] and admissible(q, pid):
                    in_front[q] = True
                    touched.append(int(q))
                    front.append(int(q))
        in_front[touched] = False
        carved += patch_area
        pid += 1

    achieved = carved / total
    if abs(achieved - spec.fraction) > 0.02:
        raise FibrosisError("cannot place separated patches at the requested density", achieved)
    log.info("carved %d patches, fraction %.4f, mean patch area %.3f mm^2",
             pid, achieved, carved / max(pid, 1))
    return mesh.with_alive(alive0 & (tri_owner < 0))


def fibrosis_patches(mesh: TriMesh) -> tuple[int, np.ndarray]:
    """Label carved triangles into patches (components of the node-sharing graph).

    Returns the patch count and a per-triangle label (-1 for alive triangles).
    """
    dead = np.flatnonzero(~mesh.alive)
    labels = -np.ones(mesh.n_triangles, np.int64)
    if len(dead) == 0:
        return 0, labels
    # triangle-node incidence; two dead triangles connect if they share a node
    rows = np.repeat(np.arange(len(dead)), 3)
    inc = sp.csr_matrix((np.ones(rows.size), (rows, mesh.triangles[dead].ravel())),
                        shape=(len(dead), mesh.n_nodes))
    adj = inc @ inc.T
    n, lab = connected_components(adj, directed=False)
    labels[dead] = lab
    return n, labels


def patch_statistics(mesh: TriMesh) -> dict:
    n, labels = fibrosis_patches(mesh)
    dead_area = float(mesh.areas[~mesh.alive].sum())
    total = mesh.total_area()
    return {
        "patches": n,
        "fraction": dead_area / total,
        "mean_patch_area": dead_area / n if n else 0.0,
    }


# ---------------------------------------------------------------------------
# boundaries
# ---------------------------------------------------------------------------

def boundary_edges(mesh: TriMesh) -> np.ndarray:
    """Edges (sorted node pairs) with exactly one alive neighbouring triangle.

    This is the outer boundary of the alive region plus the rims of every
    carved patch.
    """
    et = mesh.edge_triangles
    alive_count = np.zeros(len(et), np.int64)
    for c in range(2):
        has = et[:, c] >= 0
        alive_count[has] += mesh.alive[et[has, c]]
    return mesh.edges[alive_count == 1]


def count_boundary_loops(edges: np.ndarray) -> int:
    """Number of connected components of a boundary edge set."""
    if len(edges) == 0:
        return 0
    nodes, inv = np.unique(edges, return_inverse=True)
    inv = inv.reshape(-1, 2)
    g = sp.coo_matrix((np.ones(len(inv)), (inv[:, 0], inv[:, 1])), shape=(len(nodes), len(nodes)))
    return connected_components(g, directed=False)[0]


# ---------------------------------------------------------------------------
# text I/O
# ---------------------------------------------------------------------------

def write_mesh(mesh: TriMesh, stem) -> tuple[Path, Path]:
    """Write ``<stem>.node`` and ``<stem>.ele``.

    ``.node``: a header line ``n_nodes fibre_x fibre_y`` then ``x y`` per node.
    ``.ele``: a header line ``n_triangles`` then ``i j k alive`` per triangle.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    node_path = stem.with_suffix(".node")
    ele_path = stem.with_suffix(".ele")
    with open(node_path, "w") as fh:
        fh.write(f"{mesh.n_nodes} {float(mesh.fibre[0])!r} {float(mesh.fibre[1])!r}\n")
        np.savetxt(fh, mesh.points, fmt="%.17g")
    with open(ele_path, "w") as fh:
        fh.write(f"{mesh.n_triangles}\n")
        np.savetxt(fh, np.column_stack([mesh.triangles, mesh.alive.astype(np.int64)]), fmt="%d")
    return node_path, ele_path


def read_mesh(stem) -> TriMesh:
    stem = Path(stem)
    with open(stem.with_suffix(".node")) as fh:
        head = fh.readline().split()
        n = int(head[0])
        fibre = [float(head[1]), float(head[2])] if len(head) >= 3 else DIAGONAL_FIBRE
        pts = np.loadtxt(fh, ndmin=2) if n else np.zeros((0, 2))
    with open(stem.with_suffix(".ele")) as fh:
        m = int(fh.readline().split()[0])
        data = np.loadtxt(fh, dtype=np.int64, ndmin=2) if m else np.zeros((0, 4), np.int64)
    if len(pts) != n or len(data) != m:
        raise MeshError("mesh file counts do not match the header")
    return TriMesh(pts, data[:, :3], data[:, 3].astype(bool), fibre)

"""Transfer between the fine EP mesh and the coarse mechanics mesh."""

from __future__ import annotations

import numpy as np

from ..mesh import EmbeddingMap, TriMesh


def restrict_tension(ta_fine: np.ndarray, fine: TriMesh, embedding: EmbeddingMap, coarse: TriMesh) -> np.ndarray:
    """Mean active tension per coarse element.

    Integrates the P1 interpolant of the nodal fine-mesh tension over the alive
    children of each coarse element and divides by the coarse element area, so
    carved children contribute nothing.
    """
    ta = np.nan_to_num(np.asarray(ta_fine, dtype=np.float64), nan=0.0)
    if ta.shape != (fine.n_nodes,):
        raise ValueError("tension must be given on every fine node")
    child = ta[fine.triangles].mean(axis=1) * fine.areas * fine.alive
    total = np.bincount(embedding.parent, child, coarse.n_triangles)
    return total / coarse.areas


def displacement_to_fine(interp, u_p2: np.ndarray) -> np.ndarray:
    """Fine-node displacements from coarse P2 nodal displacements."""
    return np.column_stack([interp @ u_p2[:, 0], interp @ u_p2[:, 1]])

"""
Spiral-wave stability classification from voltage snapshots.

Phase is taken from a delay embedding, theta = atan2(V(t - tau) - V*, V(t) - V*).
A triangle whose wrapped phase differences sum to +-2pi encloses a phase
singularity; singular triangles within ``cluster_radius`` of one another are
merged and their charges summed, so numerical pairs of opposite sign around a
single core cancel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .config import ClassifierConfig

TWO_PI = 2.0 * np.pi


def _wrap(a):
    return (a + np.pi) % TWO_PI - np.pi


def phase(v_now, v_delayed, v_star: float = -40.0) -> np.ndarray:
    return np.arctan2(v_delayed - v_star, v_now - v_star)


def triangle_winding(theta: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Sum of wrapped phase increments around each triangle (multiples of 2 pi, or NaN)."""
    a, b, c = theta[triangles[:, 0]], theta[triangles[:, 1]], theta[triangles[:, 2]]
    return _wrap(b - a) + _wrap(c - b) + _wrap(a - c)


def phase_singularities(points, triangles, theta, cluster_radius: float = 3.0):
    """Return (positions, charges) of clustered phase singularities."""
    w = triangle_winding(theta, triangles)
    sing = np.flatnonzero(np.abs(w) >= TWO_PI - 0.1)
    if len(sing) == 0:
        return np.zeros((0, 2)), np.zeros(0, int)
    charge = np.sign(w[sing]).astype(int)
    cent = points[triangles[sing]].mean(axis=1)
    pairs = cKDTree(cent).query_pairs(cluster_radius, output_type="ndarray")
    k = len(sing)
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(k, k)) if len(pairs) else \
        coo_matrix((k, k))
    n, lab = connected_components(g, directed=False)
    net = np.bincount(lab, charge, n).astype(int)
    pos = np.array([cent[lab == i].mean(axis=0) for i in range(n)])
    keep = net != 0
    return pos[keep], net[keep]


def front_fragments(triangles, neighbours, v, threshold: float = 0.0) -> int:
    """Connected groups of triangles cut by the ``threshold`` isoline."""
    tv = v[triangles]
    cut = np.flatnonzero((np.nanmax(tv, axis=1) >= threshold) & (np.nanmin(tv, axis=1) < threshold))
    if len(cut) == 0:
        return 0
    idx = -np.ones(len(triangles), int)
    idx[cut] = np.arange(len(cut))
    nb = neighbours[cut]
    r, c = np.nonzero(nb >= 0)
    other = idx[nb[r, c]]
    ok = other >= 0
    g = coo_matrix((np.ones(ok.sum()), (r[ok], other[ok])), shape=(len(cut), len(cut)))
    return connected_components(g, directed=False)[0]


@dataclass
class StabilityVerdict:
    classification: str  # "Stable" | "Unstable"
    breakup_time: float | None
    times: np.ndarray
    singularities: np.ndarray
    fragments: np.ndarray
    terminated: bool = False
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if (self.classification == "Unstable") != (self.breakup_time is not None):
            raise ValueError("Unstable verdicts, and only those, carry a breakup time")


class OnlineClassifier:
    """Accumulates per-snapshot singularity and fragment counts as a run proceeds."""

    def __init__(self, points, triangles, neighbours, cfg: ClassifierConfig = ClassifierConfig()):
        self.points = np.asarray(points)
        self.triangles = np.asarray(triangles)
        self.neighbours = np.asarray(neighbours)
        self.cfg = cfg
        self._history: list = []  # (t, V) frames within the delay window
        self.times: list = []
        self.singularities: list = []
        self.fragments: list = []
        self.excited: list = []

    def add(self, t: float, v: np.ndarray) -> None:
        v = np.asarray(v, dtype=np.float64)
        self._history.append((t, v))
        while self._history and self._history[0][0] < t - self.cfg.tau - 1e-6:
            self._history.pop(0)
        t_old, v_old = self._history[0]
        if t - t_old < self.cfg.tau - 1e-6:
            return
        theta = phase(v, v_old, self.cfg.v_star)
        _, q = phase_singularities(self.points, self.triangles, theta, self.cfg.cluster_radius)
        self.times.append(t)
        self.singularities.append(len(q))
        self.fragments.append(front_fragments(self.triangles, self.neighbours, v))
        self.excited.append(bool(np.nanmax(v) > 0.0))

    def verdict(self, t_start: float | None = None, min_span: float = 2000.0) -> StabilityVerdict:
        return verdict_from_counts(np.array(self.times), np.array(self.singularities, int),
                                   np.array(self.fragments, int), np.array(self.excited, bool),
                                   self.cfg, t_start, min_span)


def verdict_from_counts(times, counts, fragments, excited, cfg: ClassifierConfig = ClassifierConfig(),
                        t_start: float | None = None, min_span: float = 2000.0) -> StabilityVerdict:
    """Unstable when more than one singularity persists for ``cfg.persist`` ms after settling."""
    if len(times) == 0:
        raise ValueError("empty snapshot series")
    t0 = times[0] if t_start is None else t_start
    if times[-1] - t0 < min_span - 1e-6:
        raise ValueError(f"series spans {times[-1] - t0:.0f} ms, need at least {min_span:.0f} ms")
    late = times >= t0 + cfg.settle - 1e-6
    breakup = None
    run_start = None
    for t, c, ok in zip(times, counts, late):
        if ok and c > 1:
            if run_start is None:
                run_start = t
            if t - run_start >= cfg.persist - 1e-6:
                breakup = run_start
                break
        else:
            run_start = None
    terminated = not bool(np.any(excited[late])) if late.any() else False
    cls = "Unstable" if breakup is not None else "Stable"
    return StabilityVerdict(cls, breakup, times, counts, fragments, terminated)


def classify_stability(points, triangles, neighbours, times, frames, cfg: ClassifierConfig = ClassifierConfig(),
                       t_start: float | None = None, min_span: float = 2000.0) -> StabilityVerdict:
    """Classify a stored snapshot series (``frames[k]`` is V on all nodes at ``times[k]``)."""
    if len(times) == 0:
        raise ValueError("empty snapshot series")
    oc = OnlineClassifier(points, triangles, neighbours, cfg)
    for t, v in zip(times, frames):
        oc.add(float(t), v)
    return oc.verdict(times[0] if t_start is None else t_start, min_span)

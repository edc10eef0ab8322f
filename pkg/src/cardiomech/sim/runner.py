"""
Coupled electromechanics runs: spiral initiation, experiments and sweeps.

One coupling cycle is ``steps_per_solve`` EP steps (cells, tension, diffusion),
then, on deforming domains, restriction of the tension to the coarse mesh, a
Newton solve started from the extrapolated previous states, and a move of the
EP mesh to the new configuration.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..cell import params_for_variant, resting_states
from ..ep import DiffusionTensor, EpField, StimulusSpec, left_face
from ..mech import MaterialParams, MechanicsError, MechanicsProblem, NewtonSolver, extrapolate_initial, \
    solve_with_continuation
from ..mesh import FibrosisSpec, carve_fibrosis, generate_square_mesh, refine_uniform
from ..snapshots import rasterize, write_csv, write_pgm, write_vtk
from .classify import OnlineClassifier, StabilityVerdict
from .config import ExperimentConfig, dump_config

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class InitiationError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


class StageTimers:
    """Wall-clock seconds and call counts per pipeline stage."""

    def __init__(self):
        self.seconds = defaultdict(float)
        self.calls = defaultdict(int)

    def add(self, stage: str, dt: float) -> None:
        self.seconds[stage] += dt
        self.calls[stage] += 1

    def as_dict(self) -> dict:
        return {k: {"seconds": round(self.seconds[k], 3), "calls": self.calls[k]} for k in sorted(self.seconds)}


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------

@dataclass
class Meshes:
    coarse: object
    fine: object
    embedding: object


_MESH_CACHE: dict = {}


def build_meshes(cfg: ExperimentConfig) -> Meshes:
    """Coarse mechanics mesh, refined EP mesh with fibrosis carved, and their embedding."""
    key = (cfg.mesh, cfg.effective_fibrosis)
    if key not in _MESH_CACHE:
        m = cfg.mesh
        coarse = generate_square_mesh(m.side, m.coarse_edge, seed=m.seed, jitter=m.jitter)
        fine, emb = refine_uniform(coarse, m.levels)
        fib = cfg.effective_fibrosis
        if fib.enabled:
            fine = carve_fibrosis(fine, FibrosisSpec(fib.fraction, fib.patch_area, seed=fib.seed))
        if len(_MESH_CACHE) > 4:
            _MESH_CACHE.clear()
        _MESH_CACHE[key] = Meshes(coarse, fine, emb)
    return _MESH_CACHE[key]


# ---------------------------------------------------------------------------
# simulation state
# ---------------------------------------------------------------------------

class Simulation:
    """EP field plus (on deforming domains) the mechanics problem and its states."""

    def __init__(self, cfg: ExperimentConfig, variant: str | None = None):
        self.cfg = cfg
        self.meshes = build_meshes(cfg)
        fine = self.meshes.fine
        D = DiffusionTensor.heart_failure(fine.fibre) if cfg.hf_tissue else DiffusionTensor.control(fine.fibre)
        self.ep = EpField(fine, params_for_variant(variant or cfg.variant), D, dt=cfg.dt)
        self.timers = StageTimers()
        self.mech = None
        if cfg.mode == "deforming":
            coarse = self.meshes.coarse
            mat = MaterialParams(fibre=tuple(coarse.fibre), active=cfg.active_stress)
            self.mech = MechanicsProblem(coarse, mat)
            self.newton = NewtonSolver(self.mech)
            self.interp = self.meshes.embedding.interpolation_matrix(coarse, order=2)
            self.z = self.mech.reference_state()
            self.z_prev = None
            self.ta_coarse = np.zeros(coarse.n_triangles)
        self.mech_solves = 0
        self.zero_tension = False
        self.extrapolate = True

    @property
    def t(self) -> float:
        return self.ep.t

    def coupling_cycle(self, stims=(), hold=None) -> None:
        ep = self.ep
        for _ in range(self.cfg.steps_per_solve):
            c0, s0 = ep.stats.time_cells, ep.stats.time_solve
            ep.step(stims)
            if hold is not None:
                ep.Y[:, hold] = self._rest
                ep.Ta[hold] = 0.0
            self.timers.add("ep_cells", ep.stats.time_cells - c0)
            self.timers.add("ep_solve", ep.stats.time_solve - s0)
        if self.mech is not None:
            self._mechanics()

    def _mechanics(self) -> None:
        from .coupling import displacement_to_fine, restrict_tension

        t0 = time.perf_counter()
        ta_nodes = self.ep.node_values(np.zeros(self.ep.n) if self.zero_tension else self.ep.Ta, fill=0.0)
        ta_c = restrict_tension(ta_nodes, self.meshes.fine, self.meshes.embedding, self.meshes.coarse)
        t1 = time.perf_counter()
        self.timers.add("restrict", t1 - t0)
        guess = self.z if self.z_prev is None or not self.extrapolate else extrapolate_initial(self.z, self.z_prev)
        try:
            z_new, _ = self.newton.solve(guess, ta_c)
        except MechanicsError:
            log.info("mechanics: falling back to load continuation at t=%.2f", self.t)
            z_new = solve_with_continuation(self.newton, self.z, ta_c, self.ta_coarse)
        self.z_prev, self.z, self.ta_coarse = self.z, z_new, ta_c
        self.mech_solves += 1
        t2 = time.perf_counter()
        self.timers.add("mechanics", t2 - t1)
        u, _ = self.mech.split(self.z)
        self.ep.update_geometry(displacement_to_fine(self.interp, u))
        self.timers.add("geometry", time.perf_counter() - t2)

    def hold_mask(self, mask: np.ndarray) -> np.ndarray:
        """Prepare resting columns for holding ``mask`` (alive-node boolean) at rest."""
        self._rest = resting_states(int(mask.sum()))
        return mask

    def displacement_nodes(self) -> np.ndarray | None:
        if self.mech is None:
            return None
        return self.ep.x - self.ep.X

    # -- checkpoint ----------------------------------------------------------
    def state_arrays(self) -> dict:
        out = {"Y": self.ep.Y, "Ta": self.ep.Ta, "t": np.array(self.ep.t),
               "first_activation": self.ep.first_activation, "last_activation": self.ep.last_activation,
               "x": self.ep.x}
        if self.mech is not None:
            out["z"] = self.z
            out["z_prev"] = self.z if self.z_prev is None else self.z_prev
            out["ta_coarse"] = self.ta_coarse
        return out

    def load_arrays(self, arr: dict) -> None:
        ep = self.ep
        if arr["Y"].shape != ep.Y.shape:
            raise CheckpointError("checkpoint does not match the mesh of this configuration")
        ep.Y[:] = arr["Y"]
        ep.Ta[:] = arr["Ta"]
        ep.t = float(arr["t"])
        ep.first_activation[:] = arr["first_activation"]
        ep.last_activation[:] = arr["last_activation"]
        if self.mech is not None:
            if "z" not in arr:
                raise CheckpointError("deforming run needs a checkpoint made on a deforming domain")
            self.z = np.array(arr["z"])
            self.z_prev = np.array(arr["z_prev"])
            self.ta_coarse = np.array(arr["ta_coarse"])
            ep.update_geometry(arr["x"] - ep.X)


def _digest(arrays: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(arrays):
        h.update(k.encode())
        h.update(np.ascontiguousarray(arrays[k]).tobytes())
    return h.hexdigest()


def save_checkpoint(sim: Simulation, path, extra: dict | None = None) -> Path:
    """Binary state (npz) plus a JSON manifest next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = sim.state_arrays()
    np.savez(path.with_suffix(".npz"), **arrays)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "t": float(sim.t),
        "config": dump_config(sim.cfg),
        "initiation_key": repr(sim.cfg.initiation_key()),
        "n_nodes": int(sim.ep.n),
        "digest": _digest(arrays),
        "rng": {"fibrosis_seed": sim.cfg.effective_fibrosis.seed, "mesh_seed": sim.cfg.mesh.seed},
    }
    manifest.update(extra or {})
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2))
    return path.with_suffix(".npz")


def load_checkpoint(path) -> tuple[dict, dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')}")
    with np.load(path.with_suffix(".npz")) as z:
        arrays = {k: z[k] for k in z.files}
    if _digest(arrays) != manifest["digest"]:
        raise CheckpointError("checkpoint data does not match its manifest")
    return arrays, manifest


# ---------------------------------------------------------------------------
# protocols
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    arrays: dict
    manifest: dict
    path: Path | None = None


def _front_x(ep: EpField, upper: np.ndarray) -> float:
    act = ~np.isnan(ep.first_activation) & upper
    return float(ep.X[act, 0].max()) if act.any() else -np.inf


def init_spiral(cfg: ExperimentConfig, path=None, progress=None) -> Checkpoint:
    """Planar wave from the left face, cut of the lower half, then free rotation.

    Initiation always uses the control restitution-1.1 cell model; the tissue
    (fibrosis, diffusion) and the domain mode are those of ``cfg``.
    """
    ini = cfg.initiation
    sim = Simulation(cfg, variant="control-1.1")
    ep = sim.ep
    side = cfg.mesh.side
    stim = [StimulusSpec(left_face(ini.stimulus_width), onset=0.0, duration=1.0, amplitude=52.0)]
    upper = ep.X[:, 1] >= 0.5 * side
    lower = ~upper
    # launch the planar wave and wait for the cut
    while True:
        if ini.cut_mode == "time" and ep.t >= ini.cut_time - 1e-9:
            break
        if ini.cut_mode == "front" and _front_x(ep, upper) >= ini.cut_x:
            break
        if ep.t > ini.end:
            raise InitiationError("planar wave never reached the cut position")
        sim.coupling_cycle(stim)
    if _front_x(ep, upper) < 0.5 * side - 2.0 * cfg.mesh.coarse_edge:
        raise InitiationError(f"wave front at x={_front_x(ep, upper):.1f} mm has not reached mid-domain "
                              f"by t={ep.t:.1f} ms")
    t_cut = ep.t
    log.info("cut at t=%.2f ms, front at x=%.1f mm", t_cut, _front_x(ep, upper))
    sim.hold_mask(lower)
    ep.Y[:, lower] = sim._rest
    ep.Ta[lower] = 0.0
    while ep.t < t_cut + ini.hold - 1e-9:
        sim.coupling_cycle(hold=lower)
    while ep.t < ini.end - 1e-9:
        sim.coupling_cycle()
        if progress is not None:
            progress(sim)
    ep.check()
    arrays = sim.state_arrays()
    manifest = {"version": CHECKPOINT_VERSION, "t": ep.t, "t_cut": t_cut,
                "initiation_key": repr(cfg.initiation_key()), "timers": sim.timers.as_dict()}
    if path is not None:
        save_checkpoint(sim, path, {"t_cut": t_cut, "timers": sim.timers.as_dict()})
        arrays, manifest = load_checkpoint(path)
        return Checkpoint(arrays, manifest, Path(path))
    return Checkpoint({k: np.array(v, copy=True) for k, v in arrays.items()}, manifest)


@dataclass
class RunResult:
    verdict: StabilityVerdict | None
    timers: dict
    mech_solves: int
    t_end: float
    snapshot_times: list = field(default_factory=list)
    final_v: np.ndarray | None = None
    error: str | None = None


def run_coupled(cfg: ExperimentConfig, checkpoint: Checkpoint, out_dir=None, zero_tension: bool = False,
                keep_frames: bool = True, min_span: float = 2000.0, progress=None) -> RunResult:
    """Continue a checkpointed spiral with the configured tissue variant to ``cfg.end_time``."""
    if checkpoint.manifest.get("initiation_key") != repr(cfg.initiation_key()):
        raise CheckpointError("checkpoint was made for a different mesh, tissue or domain mode")
    sim = Simulation(cfg)
    sim.zero_tension = zero_tension
    sim.load_arrays(checkpoint.arrays)
    ep = sim.ep
    fine = sim.meshes.fine
    alive_tris = fine.triangles[fine.alive]
    oc = OnlineClassifier(fine.points, alive_tris, _alive_neighbours(fine), cfg.classifier)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "frames").mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(dump_config(cfg))
    t_start = ep.t
    snap_every = max(1, int(round(cfg.snapshot_interval / cfg.dt)))
    step_count = 0
    times = []
    next_snap = 0

    def snapshot():
        v = ep.node_values()
        oc.add(ep.t, v)
        times.append(ep.t)
        if out is not None:
            t0 = time.perf_counter()
            if keep_frames:
                np.save(out / "frames" / f"V_{ep.t:010.2f}.npy", v.astype(np.float32))
            _write_formats(cfg, out, sim, v)
            sim.timers.add("io", time.perf_counter() - t0)

    snapshot()
    n_total = int(round((cfg.end_time - t_start) / cfg.dt))
    while step_count < n_total:
        sim.coupling_cycle()
        step_count += cfg.steps_per_solve
        if step_count // snap_every > next_snap:
            next_snap = step_count // snap_every
            snapshot()
        if progress is not None:
            progress(sim)
    if step_count % snap_every:
        snapshot()
    ep.check()
    verdict = oc.verdict(t_start, min_span)
    res = RunResult(verdict, sim.timers.as_dict(), sim.mech_solves, ep.t, times, ep.node_values())
    if out is not None:
        _write_series(out / "series.csv", verdict)
        (out / "verdict.json").write_text(json.dumps({
            "classification": verdict.classification, "breakup_time": verdict.breakup_time,
            "terminated": verdict.terminated, "timers": res.timers, "mechanics_solves": res.mech_solves},
            indent=2))
    return res


def _alive_neighbours(mesh) -> np.ndarray:
    """Triangle neighbours renumbered to the list of alive triangles (-1 for none)."""
    alive = np.flatnonzero(mesh.alive)
    idx = -np.ones(mesh.n_triangles, int)
    idx[alive] = np.arange(len(alive))
    nb = mesh.neighbours[alive]
    return np.where(nb >= 0, idx[np.maximum(nb, 0)], -1)


def _write_formats(cfg: ExperimentConfig, out: Path, sim: Simulation, v: np.ndarray) -> None:
    if not cfg.formats:
        return
    fine = sim.meshes.fine
    stem = f"t{sim.t:010.2f}"
    pts = fine.points.copy()
    pts[sim.ep.nodes] = sim.ep.x
    if "csv" in cfg.formats:
        write_csv(out / f"{stem}.csv", pts, {"V": v, "Ta": sim.ep.node_values(sim.ep.Ta)})
    if "vtk" in cfg.formats:
        write_vtk(out / f"{stem}.vtk", pts, fine.triangles[fine.alive], {"V": v})
    if "pgm" in cfg.formats:
        s = cfg.mesh.side
        img = rasterize(pts, fine.triangles[fine.alive], np.nan_to_num(v, nan=-90.0), (cfg.raster, cfg.raster),
                        (0.0, 0.0, s, s))
        write_pgm(out / f"{stem}.pgm", img)


def _write_series(path: Path, v: StabilityVerdict) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ms", "singularities", "fragments"])
        for row in zip(v.times, v.singularities, v.fragments):
            w.writerow([f"{row[0]:.2f}", int(row[1]), int(row[2])])


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    name: str
    config: ExperimentConfig


def table1_rows(base: ExperimentConfig) -> list[SweepRow]:
    """Patch-area sweep at ~27% inexcitable tissue, restitution 1.4, static domain."""
    from .config import FibrosisConfig

    spec = [("N0", 0.0, 0.0, 10720.0), ("F0", 0.27, 8.72, 7000.0), ("F1", 0.27, 1.93, 13600.0),
            ("F2", 0.27, 0.53, 12360.0), ("F3", 0.27, 0.27, 17400.0)]
    seed = base.fibrosis.seed
    return [SweepRow(n, base.replace(tissue="control", restitution=1.4, mode="static", end_time=end,
                                     fibrosis=FibrosisConfig(f, a, seed)))
            for n, f, a, end in spec]


def table2_rows(base: ExperimentConfig) -> list[SweepRow]:
    """Inexcitable-fraction sweep with 1.93 mm^2 patches, restitution 1.4, static domain."""
    from .config import FibrosisConfig

    spec = [("F1", 0.2681, 13600.0), ("F5", 0.2481, 7000.0), ("F6", 0.2017, 8600.0),
            ("F7", 0.1539, 8200.0), ("F8", 0.0509, 10720.0)]
    seed = base.fibrosis.seed
    return [SweepRow(n, base.replace(tissue="control", restitution=1.4, mode="static", end_time=end,
                                     fibrosis=FibrosisConfig(f, 1.93, seed)))
            for n, f, end in spec]


def table3_rows(base: ExperimentConfig, modes=("static", "deforming")) -> list[SweepRow]:
    """Tissue variant x restitution slope x domain mode."""
    rows = []
    for mode in modes:
        for tissue in ("control", "hf-electrophysiology", "hf-tissue", "hf-both"):
            for slope in (1.1, 1.4, 1.8):
                rows.append(SweepRow(f"{mode}/{tissue}/{slope}",
                                     base.replace(tissue=tissue, restitution=slope, mode=mode)))
    return rows


def run_sweep(rows: list[SweepRow], out_dir=None, checkpoint_dir=None, progress=None,
              min_span: float = 2000.0) -> list[dict]:
    """Run every row, sharing spiral initiations where the configurations allow.

    A failure in one row is recorded and the sweep moves on.
    """
    out = Path(out_dir) if out_dir is not None else None
    cache: dict = {}
    results = []
    for row in rows:
        cfg = row.config
        rec = {"row": row.name, "tissue": cfg.tissue, "restitution": cfg.restitution, "mode": cfg.mode,
               "fibrosis_fraction": cfg.effective_fibrosis.fraction,
               "patch_area": cfg.effective_fibrosis.patch_area, "fibrosis_seed": cfg.effective_fibrosis.seed,
               "mesh_seed": cfg.mesh.seed, "end_time": cfg.end_time}
        try:
            key = cfg.initiation_key()
            if key not in cache:
                ck_path = None
                if checkpoint_dir is not None:
                    ck_path = Path(checkpoint_dir) / f"init_{len(cache)}"
                cache[key] = init_spiral(cfg, ck_path)
            row_out = out / row.name.replace("/", "_") if out is not None else None
            res = run_coupled(cfg, cache[key], row_out, min_span=min_span, progress=progress)
            rec.update(verdict=res.verdict.classification, breakup_time=res.verdict.breakup_time,
                       terminated=res.verdict.terminated, error="")
        except Exception as e:  # noqa: BLE001 - recorded per row
            log.exception("sweep row %s failed", row.name)
            rec.update(verdict="Error", breakup_time=None, terminated=False, error=f"{type(e).__name__}: {e}")
        results.append(rec)
    if out is not None:
        write_verdicts(out / "verdicts.csv", results)
    return results


def write_verdicts(path, results: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = ["row", "tissue", "restitution", "mode", "fibrosis_fraction", "patch_area", "fibrosis_seed",
            "mesh_seed", "end_time", "verdict", "breakup_time", "terminated", "error"]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in results:
            w.writerow({k: r.get(k, "") for k in keys})
    return path

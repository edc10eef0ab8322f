"""Command-line entry point: ``cardiomech {mesh,cell,init,run,sweep,classify}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("cardiomech")


def _config(path):
    from .sim.config import ExperimentConfig, load_config

    return load_config(path) if path else ExperimentConfig()


def cmd_mesh(args) -> int:
    from .mesh import FibrosisSpec, carve_fibrosis, generate_square_mesh, patch_statistics, refine_uniform, \
        write_mesh

    coarse = generate_square_mesh(args.side, args.edge, seed=args.seed)
    mesh = coarse
    if args.levels:
        mesh, _ = refine_uniform(coarse, args.levels)
    if args.fraction > 0:
        mesh = carve_fibrosis(mesh, FibrosisSpec(args.fraction, args.patch_area, seed=args.fibrosis_seed))
    node, ele = write_mesh(mesh, args.out)
    stats = {"nodes": mesh.n_nodes, "triangles": mesh.n_triangles, "mean_edge": mesh.mean_edge_length(),
             "files": [str(node), str(ele)]}
    if args.fraction > 0:
        stats.update({k: float(v) for k, v in patch_statistics(mesh).items()})
    print(json.dumps(stats, indent=2))
    return 0


def cmd_cell(args) -> int:
    from .cell import dynamic_restitution, pace_cell, params_for_variant

    p = params_for_variant(args.variant)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.restitution:
        cls = [float(x) for x in args.cycle_lengths.split(",")]
        curve = dynamic_restitution(p, cls, beats=args.beats)
        with out.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cycle_length_ms", "di_ms", "apd90_ms", "captured"])
            for row in zip(curve.cycle_lengths, curve.di, curve.apd, curve.captured):
                w.writerow([f"{row[0]:.1f}", f"{row[1]:.3f}", f"{row[2]:.3f}", int(row[3])])
        print(f"{args.variant}: max restitution slope {curve.max_slope:.3f}")
    else:
        res = pace_cell(p, args.cycle_length, args.beats, dt=args.dt)
        with out.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_ms", "V_mV", "Cai_mM", "Ta_kPa"])
            for row in zip(res.t, res.V, res.Cai, res.Ta):
                w.writerow([f"{row[0]:.3f}", f"{row[1]:.5f}", f"{row[2]:.7g}", f"{row[3]:.5f}"])
        print(f"{args.variant}: APD90 {res.apd90[-1]:.2f} ms, peak {res.peaks[-1]:.2f} mV, rest {res.rest[-1]:.2f} mV")
    return 0


def cmd_init(args) -> int:
    from .sim import init_spiral

    cfg = _config(args.config)
    ck = init_spiral(cfg, args.out, progress=_progress(args))
    print(f"checkpoint {ck.path} at t={ck.manifest['t']:.1f} ms (cut at {ck.manifest['t_cut']:.1f} ms)")
    return 0


def cmd_run(args) -> int:
    from .sim import Checkpoint, init_spiral, load_checkpoint, run_coupled

    cfg = _config(args.config)
    if args.checkpoint:
        arrays, manifest = load_checkpoint(args.checkpoint)
        ck = Checkpoint(arrays, manifest, Path(args.checkpoint))
    else:
        ck = init_spiral(cfg, Path(cfg.output) / "init", progress=_progress(args))
    res = run_coupled(cfg, ck, cfg.output, min_span=args.min_span, progress=_progress(args))
    v = res.verdict
    print(f"{cfg.tissue} {cfg.restitution} {cfg.mode}: {v.classification}"
          + (f" (breakup at {v.breakup_time:.0f} ms)" if v.breakup_time is not None else "")
          + (" [terminated]" if v.terminated else ""))
    print(json.dumps(res.timers, indent=2))
    return 0


def cmd_sweep(args) -> int:
    from .sim import run_sweep, table1_rows, table2_rows, table3_rows

    base = _config(args.config)
    rows = {"table1": table1_rows, "table2": table2_rows}.get(args.table)
    rows = rows(base) if rows else table3_rows(base, tuple(args.modes.split(",")))
    if args.only:
        keep = set(args.only.split(","))
        rows = [r for r in rows if r.name in keep]
    results = run_sweep(rows, args.out, args.out, progress=_progress(args), min_span=args.min_span)
    for r in results:
        print(f"{r['row']:<40} {r['verdict']}")
    return 0 if all(r["verdict"] != "Error" for r in results) else 1


def cmd_classify(args) -> int:
    from .sim import classify_stability, build_meshes
    from .sim.runner import _alive_neighbours

    run = Path(args.run_dir)
    cfg = _config(run / "config.ini")
    frames = sorted((run / "frames").glob("V_*.npy"))
    if not frames:
        print("no snapshots found", file=sys.stderr)
        return 2
    times = np.array([float(f.stem[2:]) for f in frames])
    fine = build_meshes(cfg).fine
    v = classify_stability(fine.points, fine.triangles[fine.alive], _alive_neighbours(fine), times,
                           (np.load(f).astype(np.float64) for f in frames), cfg.classifier,
                           min_span=args.min_span)
    print(f"{v.classification}" + (f" (breakup at {v.breakup_time:.0f} ms)" if v.breakup_time is not None else "")
          + (" [terminated]" if v.terminated else ""))
    return 0


def _progress(args):
    if not getattr(args, "verbose", False):
        return None
    last = [0.0]

    def cb(sim):
        if sim.t - last[0] >= 100.0:
            last[0] = sim.t
            log.info("t = %.0f ms", sim.t)

    return cb


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cardiomech", description="Cardiac electromechanics simulations")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="generate, refine and carve a square mesh")
    p.add_argument("--side", type=float, default=120.0)
    p.add_argument("--edge", type=float, default=3.4)
    p.add_argument("--levels", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fraction", type=float, default=0.0)
    p.add_argument("--patch-area", type=float, default=1.93)
    p.add_argument("--fibrosis-seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output stem for .node/.ele files")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("cell", help="single-cell traces and restitution curves")
    p.add_argument("--variant", default="control-1.1")
    p.add_argument("--cycle-length", type=float, default=1000.0)
    p.add_argument("--beats", type=int, default=3)
    p.add_argument("--dt", type=float, default=0.02)
    p.add_argument("--restitution", action="store_true")
    p.add_argument("--cycle-lengths", default="1000,800,600,500,400,350,300,280,260,240,220")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cell)

    p = sub.add_parser("init", help="build a spiral-wave checkpoint")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="checkpoint path (.npz/.json)")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("run", help="run one experiment from a checkpoint")
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.add_argument("--min-span", type=float, default=2000.0, help="shortest classifiable run (ms)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="reproduce a stability table")
    p.add_argument("table", choices=["table1", "table2", "table3"])
    p.add_argument("--config")
    p.add_argument("--modes", default="static,deforming")
    p.add_argument("--only", help="comma-separated row names")
    p.add_argument("--min-span", type=float, default=2000.0, help="shortest classifiable run (ms)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("classify", help="re-run the classifier on stored snapshots")
    p.add_argument("run_dir")
    p.add_argument("--min-span", type=float, default=2000.0)
    p.set_defaults(func=cmd_classify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

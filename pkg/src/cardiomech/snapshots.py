"""Field writers: node-value CSV, legacy VTK text and quick-look PGM rasters."""

from __future__ import annotations

import csv
from pathlib import Path

import numba
import numpy as np


def write_csv(path, points: np.ndarray, fields: dict) -> Path:
    path = Path(path)
    names = list(fields)
    cols = [np.asarray(fields[k]) for k in names]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "x", "y", *names])
        for i, (x, y) in enumerate(points):
            w.writerow([i, repr(float(x)), repr(float(y)), *(repr(float(c[i])) for c in cols)])
    return path


def write_vtk(path, points: np.ndarray, triangles: np.ndarray, point_data: dict | None = None,
              title: str = "cardiomech field") -> Path:
    """Legacy ASCII VTK unstructured grid with triangle cells (type 5)."""
    path = Path(path)
    n, m = len(points), len(triangles)
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in np.asarray(points, dtype=float).tolist()]
    lines.append(f"CELLS {m} {4 * m}")
    lines += [f"3 {a} {b} {c}" for a, b, c in np.asarray(triangles).tolist()]
    lines.append(f"CELL_TYPES {m}")
    lines += ["5"] * m
    if point_data:
        lines.append(f"POINT_DATA {n}")
        for name, vals in point_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            v = np.nan_to_num(np.asarray(vals, dtype=float), nan=0.0)
            lines += [repr(x) for x in v.tolist()]
    path.write_text("\n".join(lines) + "\n")
    return path


@numba.njit(cache=True)
def _raster(points, triangles, values, x0, y0, dx, dy, nx, ny, out):
    for t in range(triangles.shape[0]):
        a, b, c = triangles[t, 0], triangles[t, 1], triangles[t, 2]
        ax, ay = points[a, 0], points[a, 1]
        bx, by = points[b, 0], points[b, 1]
        cx, cy = points[c, 0], points[c, 1]
        det = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
        if det == 0.0:
            continue
        i0 = max(int(np.floor((min(ax, bx, cx) - x0) / dx)), 0)
        i1 = min(int(np.ceil((max(ax, bx, cx) - x0) / dx)), nx - 1)
        j0 = max(int(np.floor((min(ay, by, cy) - y0) / dy)), 0)
        j1 = min(int(np.ceil((max(ay, by, cy) - y0) / dy)), ny - 1)
        for j in range(j0, j1 + 1):
            py = y0 + (j + 0.5) * dy
            for i in range(i0, i1 + 1):
                px = x0 + (i + 0.5) * dx
                l1 = ((px - ax) * (cy - ay) - (cx - ax) * (py - ay)) / det
                l2 = ((bx - ax) * (py - ay) - (px - ax) * (by - ay)) / det
                l0 = 1.0 - l1 - l2
                if l0 >= -1e-12 and l1 >= -1e-12 and l2 >= -1e-12:
                    out[ny - 1 - j, i] = l0 * values[a] + l1 * values[b] + l2 * values[c]


def rasterize(points, triangles, values, shape=(256, 256), bounds=None) -> np.ndarray:
    """Sample a P1 field on a uniform pixel grid (row 0 at the top); NaN outside."""
    ny, nx = shape
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if bounds is None:
        (x0, y0), (x1, y1) = pts.min(axis=0), pts.max(axis=0)
    else:
        x0, y0, x1, y1 = bounds
    out = np.full((ny, nx), np.nan)
    _raster(pts, np.ascontiguousarray(triangles, dtype=np.int64), np.ascontiguousarray(values, dtype=np.float64),
            x0, y0, (x1 - x0) / nx, (y1 - y0) / ny, nx, ny, out)
    return out


def write_pgm(path, image: np.ndarray, vmin: float = -90.0, vmax: float = 50.0) -> Path:
    """Binary greyscale PGM; NaN pixels (holes, outside) are drawn black."""
    path = Path(path)
    img = np.asarray(image, dtype=float)
    g = np.clip((img - vmin) / (vmax - vmin), 0.0, 1.0)
    g = np.where(np.isnan(img), 0.0, 1.0 + 254.0 * g)
    data = np.round(g).astype(np.uint8)
    ny, nx = data.shape
    path.write_bytes(f"P5\n{nx} {ny}\n255\n".encode() + data.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    nx, ny = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: nx * ny], np.uint8).reshape(ny, nx)

"""Legacy ASCII VTK point snapshots and CSV time series.

Snapshot layout (fixed)::

    # vtk DataFile Version 3.0
    <title>
    ASCII
    DATASET UNSTRUCTURED_GRID
    POINTS <n> double
    <x y z per line>
    CELLS <n> <2n>
    1 <i> per line
    CELL_TYPES <n>
    1 per line (VTK_VERTEX)
    POINT_DATA <n>
    VECTORS displacement double
    SCALARS <name> double 1 / LOOKUP_TABLE default   for each scalar in SCALAR_FIELDS

Numbers use 17 significant digits so a read-back is bit-exact.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

__all__ = ["SCALAR_FIELDS", "FIELD_NAMES", "TIMESERIES_HEADER", "write_snapshot", "read_snapshot",
           "write_timeseries", "snapshot_fields"]

SCALAR_FIELDS = ("p_w", "p_f", "S_r", "damage", "dissipated_energy", "aperture", "fracture_flag")
FIELD_NAMES = ("displacement",) + SCALAR_FIELDS
TIMESERIES_HEADER = ("t", "applied_disp", "reaction_force", "dissipated_energy", "max_damage",
                     "min_pw", "max_pw", "n_fracture_points")

_FMT = "%.17g"


def _pad3(a: np.ndarray) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[1] == 3:
        return a
    return np.hstack([a, np.zeros((a.shape[0], 3 - a.shape[1]))])


def snapshot_fields(sim) -> dict[str, np.ndarray]:
    from .fluid import retention_saturation

    s = sim.state
    S, _ = retention_saturation(s.p, sim.mat.retention)
    return {
        "displacement": s.u,
        "p_w": s.p,
        "p_f": np.where(s.is_fracture, s.pf, 0.0),
        "S_r": S,
        "damage": s.damage,
        "dissipated_energy": s.dissipated,
        "aperture": s.aperture,
        "fracture_flag": s.is_fracture.astype(float),
    }


def write_snapshot(path, positions: np.ndarray, fields: dict[str, np.ndarray], title: str = "periporo snapshot"):
    path = Path(path)
    pos = _pad3(positions)
    n = pos.shape[0]
    missing = [k for k in FIELD_NAMES if k not in fields]
    if missing:
        raise ValueError(f"snapshot is missing fields {missing}")
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [" ".join(_FMT % x for x in row) for row in pos]
    lines.append(f"CELLS {n} {2 * n}")
    lines += [f"1 {i}" for i in range(n)]
    lines.append(f"CELL_TYPES {n}")
    lines += ["1"] * n
    lines.append(f"POINT_DATA {n}")
    lines.append("VECTORS displacement double")
    lines += [" ".join(_FMT % x for x in row) for row in _pad3(fields["displacement"])]
    for name in SCALAR_FIELDS:
        vals = np.asarray(fields[name], dtype=float).ravel()
        if vals.size != n:
            raise ValueError(f"field {name} has {vals.size} values for {n} points")
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [_FMT % x for x in vals]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_snapshot(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Read a file written by :func:`write_snapshot`; returns (positions, fields)."""
    lines = Path(path).read_text().splitlines()
    i = 0

    def block(count, width):
        nonlocal i
        rows = np.array([[float(t) for t in lines[i + k].split()] for k in range(count)])
        i += count
        return rows.reshape(count, width) if width > 1 else rows.ravel()

    fields: dict[str, np.ndarray] = {}
    pos = None
    while i < len(lines):
        parts = lines[i].split()
        i += 1
        if not parts:
            continue
        if parts[0] == "POINTS":
            n = int(parts[1])
            pos = block(n, 3)
        elif parts[0] in ("CELLS", "CELL_TYPES"):
            i += int(parts[1])
        elif parts[0] == "VECTORS":
            fields[parts[1]] = block(pos.shape[0], 3)
        elif parts[0] == "SCALARS":
            i += 1  # lookup table line
            fields[parts[1]] = block(pos.shape[0], 1)
    return pos, fields


def write_timeseries(rows, path):
    """CSV with the fixed header; ``rows`` are sequences or mappings keyed by header names."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMESERIES_HEADER)
        for row in rows:
            if isinstance(row, dict):
                row = [row[k] for k in TIMESERIES_HEADER]
            writer.writerow([repr(float(x)) if not isinstance(x, (int, np.integer)) else int(x) for x in row])
    return path

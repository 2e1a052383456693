"""CSV export/import of fields, traces, maps, and logs.

Field files carry a one-line comment header ``# quantity,unit,entity``
(entity is ``triangle``, ``node``, or ``electrode``) followed by
``id,value[,value...]`` rows.  Floats are written with 17 significant
digits, which round-trips binary64 exactly and keeps outputs byte-stable
across runs.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .mesh import Mesh


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_field(path, quantity: str, unit: str, entity: str,
                values: np.ndarray, ids: np.ndarray | None = None) -> None:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if ids is None:
        ids = np.arange(values.shape[0])
    lines = [f"# {quantity},{unit},{entity}"]
    for i, row in zip(ids, values):
        lines.append(",".join([str(int(i))] + [fmt(v) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path) -> tuple[tuple[str, str, str], np.ndarray, np.ndarray]:
    """Read a field file; returns ((quantity, unit, entity), ids, values).

    Values come back as a 1-d array when rows carry a single value, else
    as an (n, k) array.
    """
    header = ("", "", "")
    ids: list[int] = []
    rows: list[list[float]] = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = [p.strip() for p in line.lstrip("#").split(",")]
            if len(parts) == 3:
                header = (parts[0], parts[1], parts[2])
            continue
        tokens = line.split(",")
        ids.append(int(tokens[0]))
        rows.append([float(t) for t in tokens[1:]])
    values = np.asarray(rows, dtype=float)
    if values.ndim == 2 and values.shape[1] == 1:
        values = values[:, 0]
    return header, np.asarray(ids, dtype=np.int64), values


def write_trace(path, node_ids: np.ndarray, values: np.ndarray) -> None:
    write_field(path, "trace", "V", "node", np.asarray(values, dtype=float),
                ids=np.asarray(node_ids))


def read_trace(path) -> list[tuple[str, float]]:
    """Raw trace rows as (first-column token, value); the first column may
    hold a node id or a coordinate along the curve."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        first, second = line.split(",", 1)
        rows.append((first.strip(), float(second)))
    if not rows:
        raise ValueError(f"trace file {path} holds no samples")
    return rows


def write_phi(path, phi) -> None:
    """Two-column (s, t) dump of a calibration map's breakpoints."""
    lines = ["s,t"]
    for s, t in zip(phi.breakpoints, phi.values):
        lines.append(f"{fmt(s)},{fmt(t)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_convergence(path, log) -> None:
    lines = ["iteration,objective,max_grad_diff,wall_time_ms"]
    for rec in log:
        lines.append(",".join([
            str(rec.iteration), fmt(rec.objective),
            fmt(rec.max_grad_diff) if not math.isnan(rec.max_grad_diff) else "nan",
            fmt(rec.wall_ms),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_convergence(path) -> list[tuple[int, float, float, float]]:
    rows = []
    for line in Path(path).read_text().splitlines()[1:]:
        if not line.strip():
            continue
        it, obj, diff, ms = line.split(",")
        rows.append((int(it), float(obj), float(diff), float(ms)))
    return rows


def write_metrics(path, rows: list[tuple[str, float]]) -> None:
    lines = ["metric,value"]
    for name, value in rows:
        text = str(value) if isinstance(value, (int, np.integer)) else fmt(value)
        lines.append(f"{name},{text}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics(path) -> dict[str, float]:
    out = {}
    for line in Path(path).read_text().splitlines()[1:]:
        if not line.strip():
            continue
        name, value = line.split(",", 1)
        out[name] = float(value)
    return out


def write_mesh_csv(mesh: Mesh, nodes_path, triangles_path) -> None:
    """Debug dump of the mesh: node table id,x,y and triangle table id,v0,v1,v2."""
    lines = ["id,x,y"]
    for i, (x, y) in enumerate(mesh.nodes):
        lines.append(f"{i},{fmt(x)},{fmt(y)}")
    Path(nodes_path).write_text("\n".join(lines) + "\n")
    lines = ["id,v0,v1,v2"]
    for i, (a, b, c) in enumerate(mesh.triangles):
        lines.append(f"{i},{a},{b},{c}")
    Path(triangles_path).write_text("\n".join(lines) + "\n")

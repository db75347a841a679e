"""File output for experiment artifacts: legacy VTK, CSV, JSON metadata.

Field files use the legacy ASCII structured-grid format so any standard
visualization tool can open them. All writers are atomic (write to a
temporary file in the target directory, then rename) and format floats
with 17 significant digits, which round-trips IEEE doubles exactly.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Dict, Iterable, Mapping, Sequence

import numpy as np

from .fem import StructuredMesh


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_structured_vtk(path, mesh: StructuredMesh,
                         point_data: Mapping[str, np.ndarray],
                         title: str = "obstacle control fields") -> Path:
    """Write nodal scalars on the structured mesh as a legacy VTK file.

    Points are emitted in the mesh's native ordering (x fastest), which is
    exactly the traversal order STRUCTURED_GRID prescribes.
    """
    n_side = mesh.cells_per_side + 1
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_GRID",
        f"DIMENSIONS {n_side} {n_side} 1",
        f"POINTS {mesh.n_nodes} double",
    ]
    for x, y in mesh.nodes:
        lines.append(f"{_fmt(x)} {_fmt(y)} 0")
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    for name, values in point_data.items():
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_nodes,):
            raise ValueError(f"field {name!r} is not nodal scalar data")
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(v) for v in values)
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")
    return Path(path)


def read_structured_vtk(path) -> tuple:
    """Read back a legacy structured-grid file written by this module.

    Returns (points, point_data) with points shaped (n, 2) and point_data
    a dict of nodal arrays.
    """
    with open(path) as handle:
        tokens = handle.read().split("\n")
    idx = 0

    def next_line():
        nonlocal idx
        while idx < len(tokens) and not tokens[idx].strip():
            idx += 1
        line = tokens[idx]
        idx += 1
        return line

    for _ in range(3):
        next_line()  # header comment, title, ASCII
    if next_line().split() != ["DATASET", "STRUCTURED_GRID"]:
        raise ValueError("not a structured-grid file")
    next_line()  # DIMENSIONS
    n_points = int(next_line().split()[1])
    points = np.empty((n_points, 2))
    for k in range(n_points):
        parts = next_line().split()
        points[k] = float(parts[0]), float(parts[1])
    n_data = int(next_line().split()[1])
    if n_data != n_points:
        raise ValueError("point data size mismatch")
    data: Dict[str, np.ndarray] = {}
    while True:
        try:
            line = next_line()
        except IndexError:
            break
        parts = line.split()
        if not parts or parts[0] != "SCALARS":
            break
        name = parts[1]
        next_line()  # LOOKUP_TABLE
        values = np.empty(n_points)
        for k in range(n_points):
            values[k] = float(next_line())
        data[name] = values
    return points, data


def write_csv(path, header: Sequence[str],
              rows: Iterable[Sequence]) -> Path:
    """Write a CSV table atomically with deterministic float formatting."""
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(
            _fmt(v) if isinstance(v, float) else str(v) for v in row))
    _atomic_write_text(Path(path), "\n".join(out) + "\n")
    return Path(path)


def write_meta(path, meta: Mapping) -> Path:
    """Write run metadata (parameters, stats, timestamps) as JSON."""
    _atomic_write_text(Path(path), json.dumps(meta, indent=2, sort_keys=True,
                                              default=str) + "\n")
    return Path(path)

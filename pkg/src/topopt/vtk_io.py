"""Legacy VTK ASCII output for meshes and attached fields.

Writes ``UNSTRUCTURED_GRID`` datasets (cell type 5 for triangles, 10 for
tetrahedra).  The legacy ASCII flavor keeps snapshots diffable in golden
tests.  All files are written atomically: content goes to a temporary
file in the target directory which is then renamed into place, so an
interrupted run never leaves a truncated file behind.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

_CELL_TYPE = {2: 5, 3: 10}


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_vtk(path, mesh, point_data: Mapping[str, np.ndarray] | None = None,
              cell_data: Mapping[str, np.ndarray] | None = None,
              title: str = "topopt output") -> None:
    """Write a mesh plus optional nodal/element arrays to a legacy VTK file.

    Scalar arrays must have shape (n,); arrays of shape (n, dim) are
    written as VECTORS (padded to three components).
    """
    lines: list[str] = []
    lines.append("# vtk DataFile Version 3.0")
    lines.append(title[:255])
    lines.append("ASCII")
    lines.append("DATASET UNSTRUCTURED_GRID")

    pts = np.zeros((mesh.n_nodes, 3))
    pts[:, : mesh.dim] = mesh.nodes
    lines.append(f"POINTS {mesh.n_nodes} double")
    lines.extend(" ".join(_fmt(c) for c in p) for p in pts)

    npe = mesh.dim + 1
    lines.append(f"CELLS {mesh.n_elements} {mesh.n_elements * (npe + 1)}")
    lines.extend(f"{npe} " + " ".join(str(i) for i in el) for el in mesh.elements)
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines.extend([str(_CELL_TYPE[mesh.dim])] * mesh.n_elements)

    for header, count, data in (
        ("POINT_DATA", mesh.n_nodes, point_data),
        ("CELL_DATA", mesh.n_elements, cell_data),
    ):
        if not data:
            continue
        lines.append(f"{header} {count}")
        for name, values in data.items():
            arr = np.asarray(values, dtype=float)
            if arr.ndim == 1:
                if len(arr) != count:
                    raise ValueError(f"array '{name}' has length {len(arr)}, expected {count}")
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(_fmt(v) for v in arr)
            else:
                if arr.shape[0] != count:
                    raise ValueError(f"array '{name}' has {arr.shape[0]} rows, expected {count}")
                vec = np.zeros((count, 3))
                vec[:, : arr.shape[1]] = arr
                lines.append(f"VECTORS {name} double")
                lines.extend(" ".join(_fmt(c) for c in v) for v in vec)

    atomic_write_text(path, "\n".join(lines) + "\n")


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file + rename in the same dir."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")

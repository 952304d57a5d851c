"""Mesh import and export.

Export writes legacy ASCII VTK unstructured grids. Import reads a plain
text format::

    # optional comment lines
    V
    x y z            (V lines)
    NT
    i j k l mu       (NT lines, zero-based vertex indices)

Blank lines and text after ``#`` are ignored.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .mesh import MeshError, TetMesh

VTK_TETRA = 10


def write_vtk(path, mesh: TetMesh, cell_data: dict[str, np.ndarray] | None = None, title: str = "mesh") -> Path:
    """Write ``mesh`` with per-cell scalars (``mu`` is always included)."""
    path = Path(path)
    data = {"mu": mesh.cell_mu}
    for name, values in (cell_data or {}).items():
        v = np.asarray(values, dtype=float).ravel()
        if v.shape != (mesh.num_cells,):
            raise ValueError(f"cell field {name!r} has {v.size} values for {mesh.num_cells} cells")
        data[name] = v
    nt = mesh.num_cells
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.num_vertices} double",
    ]
    lines += [" ".join(f"{c:.17g}" for c in p) for p in mesh.vertices]
    lines.append(f"CELLS {nt} {5 * nt}")
    lines += ["4 " + " ".join(str(int(i)) for i in c) for c in mesh.cells]
    lines.append(f"CELL_TYPES {nt}")
    lines += [str(VTK_TETRA)] * nt
    lines.append(f"CELL_DATA {nt}")
    for name, v in data.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{x:.17g}" for x in v]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_vtk(path) -> tuple[TetMesh, dict[str, np.ndarray]]:
    """Read a file written by :func:`write_vtk`."""
    tokens = Path(path).read_text().split("\n")
    it = iter(tokens)
    verts = cells = None
    fields: dict[str, np.ndarray] = {}
    nt = 0
    for line in it:
        head = line.split()
        if not head:
            continue
        if head[0] == "POINTS":
            n = int(head[1])
            verts = np.array([next(it).split() for _ in range(n)], dtype=float).reshape(n, 3)
        elif head[0] == "CELLS":
            nt = int(head[1])
            cells = np.array([next(it).split()[1:] for _ in range(nt)], dtype=np.int64).reshape(nt, 4)
        elif head[0] == "SCALARS":
            next(it)  # lookup table
            fields[head[1]] = np.array([next(it) for _ in range(nt)], dtype=float)
    if verts is None or cells is None:
        raise MeshError(f"{path}: not a tetrahedral VTK file")
    mu = fields.get("mu", np.ones(nt))
    return TetMesh.from_arrays(verts, cells, mu), fields


def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def parse_mesh_text(text: str) -> TetMesh:
    """Parse the plain text mesh format described in the module docstring."""
    rows = list(_data_lines(text))
    pos = 0

    def take(count: int, what: str):
        nonlocal pos
        if pos + count > len(rows):
            raise MeshError(f"unexpected end of input while reading {what}")
        out = rows[pos : pos + count]
        pos += count
        return out

    def count_line(what: str) -> int:
        (lineno, tok), = take(1, what)
        if len(tok) != 1:
            raise MeshError(f"line {lineno}: expected the {what}")
        try:
            n = int(tok[0])
        except ValueError as exc:
            raise MeshError(f"line {lineno}: expected an integer {what}") from exc
        if n < 1:
            raise MeshError(f"line {lineno}: {what} must be positive")
        return n

    nv = count_line("vertex count")
    verts = np.empty((nv, 3))
    for i, (lineno, tok) in enumerate(take(nv, "vertices")):
        if len(tok) != 3:
            raise MeshError(f"line {lineno}: expected 3 coordinates")
        verts[i] = [float(t) for t in tok]
    nt = count_line("cell count")
    cells = np.empty((nt, 4), dtype=np.int64)
    mu = np.empty(nt)
    for i, (lineno, tok) in enumerate(take(nt, "cells")):
        if len(tok) != 5:
            raise MeshError(f"line {lineno}: expected 4 vertex indices and mu")
        cells[i] = [int(t) for t in tok[:4]]
        mu[i] = float(tok[4])
        if cells[i].min() < 0 or cells[i].max() >= nv:
            raise MeshError(f"line {lineno}: vertex index out of range")
    if pos != len(rows):
        raise MeshError(f"line {rows[pos][0]}: trailing data")
    return TetMesh.from_arrays(verts, cells, mu)


def read_mesh_text(path: str | os.PathLike) -> TetMesh:
    return parse_mesh_text(Path(path).read_text())


def format_mesh_text(mesh: TetMesh) -> str:
    lines = [str(mesh.num_vertices)]
    lines += [" ".join(f"{c:.17g}" for c in p) for p in mesh.vertices]
    lines.append(str(mesh.num_cells))
    lines += [
        " ".join(str(int(i)) for i in c) + f" {m:.17g}" for c, m in zip(mesh.cells, mesh.cell_mu)
    ]
    return "\n".join(lines) + "\n"


def write_mesh_text(path, mesh: TetMesh) -> Path:
    path = Path(path)
    path.write_text(format_mesh_text(mesh))
    return path

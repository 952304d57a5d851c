"""Conforming bisection of tetrahedral meshes.

Each cell carries a refinement edge; bisecting a cell splits that edge at
its midpoint into two children. Conformity is restored by closure: a cell
containing an edge scheduled for splitting schedules its own refinement
edge as well, and cells are bisected until no cell contains a scheduled
edge. Children receive their longest edge as refinement edge, with ties
broken by the lexicographically smallest vertex pair, which is a strict
total order on edges and makes the closure terminate.
"""
from __future__ import annotations

import numpy as np

from .discretization.elements import LOCAL_EDGES
from .mesh import MeshError, TetMesh, longest_edges

_LE = np.array(LOCAL_EDGES)


def _keys(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return lo.astype(np.int64) << 32 | hi.astype(np.int64)


def _cell_edge_keys(cells: np.ndarray) -> np.ndarray:
    a, b = cells[:, _LE[:, 0]], cells[:, _LE[:, 1]]
    return _keys(np.minimum(a, b), np.maximum(a, b))


def bisect(
    mesh: TetMesh, marked, max_iterations: int = 200, return_parents: bool = False
):
    """Bisect every marked cell at least once and close to a conforming mesh.

    Parameters
    ----------
    marked : iterable of int or boolean mask
        Cells to refine.
    max_iterations : int
        Guard on the number of bisection rounds.
    return_parents : bool
        Also return, for every new cell, the index of its ancestor in ``mesh``.
    """
    nt = mesh.num_cells
    m = np.asarray(marked if not isinstance(marked, set) else sorted(marked))
    if m.dtype == bool:
        if m.shape != (nt,):
            raise MeshError("boolean mask must have one entry per cell")
        m = np.where(m)[0]
    m = m.astype(np.int64).ravel()
    if len(m) and (m.min() < 0 or m.max() >= nt):
        raise MeshError("marked cell index out of range")

    cells = mesh.cells.copy()
    nverts = mesh.num_vertices
    mu = mesh.cell_mu.copy()
    ref = mesh.cell_refinement_edge.copy()
    parents = np.arange(nt)
    if len(m) == 0:
        return (mesh, parents) if return_parents else mesh

    sched = np.unique(_keys(ref[m, 0], ref[m, 1]))
    mid_keys = np.zeros(0, dtype=np.int64)
    mid_ids = np.zeros(0, dtype=np.int64)
    all_vertices = mesh.vertices

    for _ in range(max_iterations):
        ek = _cell_edge_keys(cells)
        rk = _keys(ref[:, 0], ref[:, 1])
        # closure: schedule refinement edges of cells touching scheduled edges
        for _ in range(max_iterations):
            need = np.isin(ek, sched).any(axis=1) & ~np.isin(rk, sched)
            if not need.any():
                break
            sched = np.union1d(sched, rk[need])
        else:
            raise MeshError("bisection closure did not terminate")
        split = np.isin(rk, sched)
        if not split.any():
            break
        # midpoints for new edges, numbered in key order
        new = np.setdiff1d(np.unique(rk[split]), mid_keys)
        if len(new):
            lo, hi = new >> 32, new & 0xFFFFFFFF
            all_vertices = np.concatenate([all_vertices, 0.5 * (all_vertices[lo] + all_vertices[hi])])
            ids = np.arange(nverts, nverts + len(new))
            nverts += len(new)
            mid_keys = np.concatenate([mid_keys, new])
            mid_ids = np.concatenate([mid_ids, ids])
            order = np.argsort(mid_keys)
            mid_keys, mid_ids = mid_keys[order], mid_ids[order]
        s = np.where(split)[0]
        mids = mid_ids[np.searchsorted(mid_keys, rk[s])]
        c = cells[s]
        p, q = ref[s, 0], ref[s, 1]
        child_a = np.where(c == q[:, None], mids[:, None], c)
        child_b = np.where(c == p[:, None], mids[:, None], c)
        keep = ~split
        cells = np.concatenate([cells[keep], child_a, child_b])
        mu = np.concatenate([mu[keep], mu[s], mu[s]])
        parents = np.concatenate([parents[keep], parents[s], parents[s]])
        new_ref = longest_edges(all_vertices, np.concatenate([child_a, child_b]))
        ref = np.concatenate([ref[keep], new_ref])
    else:
        raise MeshError(f"bisection did not finish within {max_iterations} rounds")

    # deterministic cell order: by ancestor, then by sorted vertex tuple
    sc = np.sort(cells, axis=1)
    order = np.lexsort((sc[:, 3], sc[:, 2], sc[:, 1], sc[:, 0], parents))
    out = TetMesh(all_vertices, cells[order], mu[order], ref[order], dict(mesh.boundary_tag))
    return (out, parents[order]) if return_parents else out


def uniform_refine(mesh: TetMesh, sweeps: int = 3, return_parents: bool = False):
    """Mark-all bisection repeated ``sweeps`` times (3 sweeps halve the mesh size)."""
    parents = np.arange(mesh.num_cells)
    for _ in range(sweeps):
        mesh, p = bisect(mesh, np.arange(mesh.num_cells), return_parents=True)
        parents = parents[p]
    return (mesh, parents) if return_parents else mesh

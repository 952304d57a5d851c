"""Global degree-of-freedom numbering.

Local dofs are attached to entities of the cell with vertices sorted by
global index. Because every edge and face is then parametrised from its
lowest global vertex in all adjacent cells, the local functionals of shared
entities coincide and no sign or permutation fix-up is required; the
``signs`` table is kept for completeness and is identically one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mesh import FACE_LOCAL_EDGES, MeshTopology, TetMesh
from .elements import Family, reference_element

CONTINUITIES = ("conforming", "broken")
CONSTRAINTS = ("none", "zero-tangential-trace", "zero-trace")


class DofMapError(ValueError):
    """Incompatible space description."""


@dataclass(frozen=True, eq=False)
class DofMap:
    """Cell-to-global dof table of one finite element space.

    ``cell_dofs[t, i]`` is the global index of local dof ``i`` of cell ``t``
    or ``-1`` if that dof is eliminated by the constraint.
    """

    family: Family
    degree: int
    continuity: str
    constraint: str
    cell_dofs: np.ndarray
    num_dofs: int
    signs: np.ndarray

    @property
    def local_dim(self) -> int:
        return self.cell_dofs.shape[1]

    def cell_values(self, coefficients: np.ndarray) -> np.ndarray:
        """Gather global coefficients into (NT, nloc) with zeros at eliminated dofs."""
        c = np.asarray(coefficients, dtype=float)
        if c.shape[0] != self.num_dofs:
            raise DofMapError(f"expected {self.num_dofs} coefficients, got {c.shape[0]}")
        d = self.cell_dofs
        out = np.where(d >= 0, c[np.maximum(d, 0)] if self.num_dofs else 0.0, 0.0)
        return out * self.signs


def _constrained_entities(mesh: TetMesh, topo: MeshTopology, faces: np.ndarray):
    verts = np.zeros(mesh.num_vertices, dtype=bool)
    edges = np.zeros(topo.num_edges, dtype=bool)
    fmask = np.zeros(topo.num_faces, dtype=bool)
    if len(faces):
        verts[topo.faces[faces].ravel()] = True
        c, l = topo.face_cells[faces, 0], topo.face_local[faces, 0]
        edges[topo.cell_edges[c[:, None], FACE_LOCAL_EDGES[l]].ravel()] = True
        fmask[faces] = True
    return verts, edges, fmask


def dof_map(
    mesh: TetMesh,
    topology: MeshTopology | None,
    family: Family | str,
    k: int,
    continuity: str = "conforming",
    constraint: str = "none",
    constrained_faces: np.ndarray | None = None,
) -> DofMap:
    """Number the dofs of a tetrahedral space on ``mesh``.

    Parameters
    ----------
    constraint : str
        ``zero-tangential-trace`` (Nedelec) or ``zero-trace`` (Lagrange)
        eliminate all dofs attached to the constrained faces and their
        edges and vertices.
    constrained_faces : ndarray, optional
        Face indices carrying the constraint; defaults to the domain boundary.
    """
    family = Family(family)
    if family is Family.LAGRANGE_TRI:
        raise DofMapError("LagrangeTri is a face space; no volume dof map")
    if continuity not in CONTINUITIES:
        raise DofMapError(f"unknown continuity {continuity!r}")
    if constraint not in CONSTRAINTS:
        raise DofMapError(f"unknown constraint {constraint!r}")
    if constraint == "zero-tangential-trace" and family is not Family.NEDELEC1_TET:
        raise DofMapError("zero-tangential-trace applies to Nedelec spaces only")
    if constraint == "zero-trace" and family is not Family.LAGRANGE_TET:
        raise DofMapError("zero-trace applies to Lagrange spaces only")
    if continuity == "broken" and constraint != "none":
        raise DofMapError("broken spaces carry no trace constraint")

    el = reference_element(family, k)
    nt = mesh.num_cells
    nloc = el.dim
    if continuity == "broken":
        cd = np.arange(nt * nloc, dtype=np.int64).reshape(nt, nloc)
        cd.setflags(write=False)
        return DofMap(family, k, continuity, constraint, cd, nt * nloc, np.ones((nt, nloc)))

    topo = topology or mesh.topology
    sc = mesh.geometry.sorted_cells
    ents = {0: sc, 1: topo.cell_edges, 2: topo.cell_faces, 3: np.arange(nt)[:, None]}
    counts = {0: mesh.num_vertices, 1: topo.num_edges, 2: topo.num_faces, 3: nt}
    if constraint != "none":
        faces = topo.boundary_faces if constrained_faces is None else np.asarray(constrained_faces)
        masks = dict(enumerate(_constrained_entities(mesh, topo, faces)))
        masks[3] = np.zeros(nt, dtype=bool)
    else:
        masks = {d: np.zeros(counts[d], dtype=bool) for d in range(4)}

    cd = np.full((nt, nloc), -1, dtype=np.int64)
    offset = 0
    keep = []
    for d in range(4):
        lists = el.entity_dofs[d]
        per = len(lists[0]) if lists else 0
        if per == 0:
            continue
        for e, loc in enumerate(lists):
            ent = ents[d][:, e]
            for w, i in enumerate(loc):
                cd[:, i] = offset + ent * per + w
        block = np.repeat(~masks[d], per)
        keep.append(block)
        offset += counts[d] * per
    keep = np.concatenate(keep) if keep else np.zeros(0, dtype=bool)
    renum = np.full(offset, -1, dtype=np.int64)
    renum[keep] = np.arange(int(keep.sum()))
    cd = renum[cd]
    cd.setflags(write=False)
    return DofMap(family, k, continuity, constraint, cd, int(keep.sum()), np.ones((nt, nloc)))

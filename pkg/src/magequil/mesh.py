"""Tetrahedral meshes, topology and vertex patches.

Cells are stored positively oriented. Finite element maps use the cell's
vertices sorted by global index instead (see :meth:`TetMesh.geometry`), so
the signed Jacobian determinant may be negative there; integrals use its
absolute value.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import permutations

import numpy as np

from .discretization.elements import LOCAL_EDGES, LOCAL_FACES


class MeshError(ValueError):
    """Structural problem with a mesh (degenerate or non-conforming cells)."""


def signed_volumes(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    v = vertices[cells]
    return np.einsum(
        "ti,ti->t", v[:, 1] - v[:, 0], np.cross(v[:, 2] - v[:, 0], v[:, 3] - v[:, 0])
    ) / 6.0


def longest_edges(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Longest edge of each cell as a sorted vertex pair.

    Ties are broken by the lexicographically smallest sorted vertex pair.
    """
    cells = np.asarray(cells)
    le = np.array(LOCAL_EDGES)
    a = cells[:, le[:, 0]]
    b = cells[:, le[:, 1]]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    d = vertices[a] - vertices[b]
    L2 = np.einsum("tec,tec->te", d, d)
    if len(cells) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    # last key is primary: order by (-length, lo, hi)
    best = np.lexsort((hi, lo, -L2), axis=-1)[:, 0]
    rows = np.arange(len(cells))
    return np.column_stack([lo[rows, best], hi[rows, best]])


@dataclass(frozen=True, eq=False)
class CellGeometry:
    """Affine maps of cells with sorted vertices: x = v0 + J xhat."""

    sorted_cells: np.ndarray
    v0: np.ndarray
    J: np.ndarray
    detJ: np.ndarray
    Jinv: np.ndarray

    @cached_property
    def absdet(self) -> np.ndarray:
        return np.abs(self.detJ)

    @cached_property
    def metric_inv(self) -> np.ndarray:
        """J^{-1} J^{-T}, per cell."""
        return np.einsum("tik,tjk->tij", self.Jinv, self.Jinv)

    @cached_property
    def metric(self) -> np.ndarray:
        """J^T J, per cell."""
        return np.einsum("tki,tkj->tij", self.J, self.J)

    def to_physical(self, ref_points: np.ndarray, cells=None) -> np.ndarray:
        """Map reference points (nq, 3) or per-cell (nc, nq, 3) to physical coordinates."""
        sl = slice(None) if cells is None else cells
        v0, J = self.v0[sl], self.J[sl]
        if ref_points.ndim == 2:
            return v0[:, None, :] + np.einsum("tij,qj->tqi", J, ref_points)
        return v0[:, None, :] + np.einsum("tij,tqj->tqi", J, ref_points)

    def to_reference(self, points: np.ndarray, cells) -> np.ndarray:
        """Inverse map of physical points (nc, nq, 3) for the given cells."""
        return np.einsum("tij,tqj->tqi", self.Jinv[cells], points - self.v0[cells][:, None, :])


@dataclass(frozen=True, eq=False)
class TetMesh:
    """Conforming tetrahedral mesh with per-cell permeability.

    Attributes
    ----------
    vertices : ndarray, shape (V, 3)
    cells : ndarray, shape (NT, 4)
        Positively oriented vertex indices.
    cell_mu : ndarray, shape (NT,)
        Piecewise-constant permeability.
    cell_refinement_edge : ndarray, shape (NT, 2)
        Sorted vertex pair to be bisected next.
    boundary_tag : dict
        Optional marker per boundary face (sorted vertex triple); untagged
        boundary faces carry tag 1.
    """

    vertices: np.ndarray
    cells: np.ndarray
    cell_mu: np.ndarray
    cell_refinement_edge: np.ndarray
    boundary_tag: dict = field(default_factory=dict)

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=float)
        cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise MeshError("vertices must have shape (V, 3)")
        if cells.ndim != 2 or cells.shape[1] != 4:
            raise MeshError("cells must have shape (NT, 4)")
        if len(cells) and (cells.min() < 0 or cells.max() >= len(verts)):
            raise MeshError("cell vertex index out of range")
        vol = signed_volumes(verts, cells)
        if len(cells):
            e = verts[cells[:, 1:]] - verts[cells[:, :1]]
            scale = np.max(np.linalg.norm(e, axis=2), axis=1) ** 3
            av = np.abs(vol)
            # tiny against the mesh mean, or flat against the cell's own size
            if np.any(av < 1e-14 * av.mean()) or np.any(av <= 1e-12 * scale):
                bad = int(np.argmin(np.abs(vol)))
                raise MeshError(f"degenerate cell {bad} (volume {vol[bad]:.3e})")
            neg = vol < 0
            if neg.any():
                cells = cells.copy()
                cells[neg, 2], cells[neg, 3] = cells[neg, 3].copy(), cells[neg, 2].copy()
        mu = np.broadcast_to(np.asarray(self.cell_mu, dtype=float), (len(cells),)).copy()
        if np.any(mu <= 0):
            raise MeshError("cell_mu must be positive")
        ref = self.cell_refinement_edge
        if ref is None:
            ref = longest_edges(verts, cells)
        ref = np.sort(np.asarray(ref, dtype=np.int64).reshape(len(cells), 2), axis=1)
        for arr in (verts, cells, mu, ref):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "cell_mu", mu)
        object.__setattr__(self, "cell_refinement_edge", ref)

    @classmethod
    def from_arrays(cls, vertices, cells, cell_mu=1.0, boundary_tag=None) -> "TetMesh":
        return cls(vertices, cells, cell_mu, None, dict(boundary_tag or {}))

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    def with_mu(self, cell_mu) -> "TetMesh":
        return TetMesh(self.vertices, self.cells, cell_mu, self.cell_refinement_edge, self.boundary_tag)

    @cached_property
    def volumes(self) -> np.ndarray:
        return signed_volumes(self.vertices, self.cells)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        """Cell diameter h_T (longest edge)."""
        v = self.vertices[self.cells]
        le = np.array(LOCAL_EDGES)
        d = v[:, le[:, 0]] - v[:, le[:, 1]]
        return np.sqrt(np.einsum("tec,tec->te", d, d).max(axis=1))

    @cached_property
    def geometry(self) -> CellGeometry:
        sc = np.sort(self.cells, axis=1)
        v = self.vertices[sc]
        v0 = v[:, 0]
        J = np.stack([v[:, 1] - v0, v[:, 2] - v0, v[:, 3] - v0], axis=-1)
        detJ = np.linalg.det(J) if len(sc) else np.zeros(0)
        Jinv = np.linalg.inv(J) if len(sc) else np.zeros((0, 3, 3))
        return CellGeometry(sc, v0, J, detJ, Jinv)

    @cached_property
    def topology(self) -> "MeshTopology":
        return build_topology(self)

    def min_dihedral_angle(self) -> float:
        """Smallest dihedral angle over all cells, in radians."""
        v = self.vertices[self.cells]
        angles = []
        for a, b in LOCAL_EDGES:
            c, d = [i for i in range(4) if i not in (a, b)]
            e = v[:, b] - v[:, a]
            n1 = np.cross(e, v[:, c] - v[:, a])
            n2 = np.cross(e, v[:, d] - v[:, a])
            cosang = np.einsum("ti,ti->t", n1, n2) / (
                np.linalg.norm(n1, axis=1) * np.linalg.norm(n2, axis=1)
            )
            angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
        return float(np.min(angles))


@dataclass(frozen=True, eq=False)
class MeshTopology:
    """Edges and faces of a mesh, numbered once, with incidence tables.

    ``cell_edges`` and ``cell_faces`` follow ``LOCAL_EDGES`` / ``LOCAL_FACES``
    applied to each cell's vertices sorted by global index. ``face_cells[f]``
    is ``(T+, T-)`` with ``T+`` the lower cell index and ``T- = -1`` on the
    boundary; ``face_normals[f]`` is the unit outward normal of ``T+``.
    """

    edges: np.ndarray
    faces: np.ndarray
    cell_edges: np.ndarray
    cell_faces: np.ndarray
    face_cells: np.ndarray
    face_local: np.ndarray
    face_normals: np.ndarray
    interior_faces: np.ndarray
    boundary_faces: np.ndarray
    boundary_vertex: np.ndarray
    boundary_edge: np.ndarray
    vertex_cells_ptr: np.ndarray
    vertex_cells: np.ndarray

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @property
    def boundary_face_mask(self) -> np.ndarray:
        return self.face_cells[:, 1] < 0

    def cells_of_vertex(self, v: int) -> np.ndarray:
        return self.vertex_cells[self.vertex_cells_ptr[v] : self.vertex_cells_ptr[v + 1]]

    def face_diameters(self, vertices) -> np.ndarray:
        v = vertices[self.faces]
        d = np.stack([v[:, 0] - v[:, 1], v[:, 0] - v[:, 2], v[:, 1] - v[:, 2]], axis=1)
        return np.sqrt(np.einsum("fec,fec->fe", d, d).max(axis=1))

    def face_areas(self, vertices) -> np.ndarray:
        v = vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def _unique_rows(keys: np.ndarray):
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    return uniq, inverse.reshape(-1), counts


def build_topology(mesh: TetMesh) -> MeshTopology:
    """Enumerate edges and faces of ``mesh`` and classify the boundary."""
    sc = mesh.geometry.sorted_cells
    nt = len(sc)
    le = np.array(LOCAL_EDGES)
    lf = np.array(LOCAL_FACES)

    ekeys = sc[:, le].reshape(-1, 2)
    edges, einv, _ = _unique_rows(ekeys)
    cell_edges = einv.reshape(nt, 6)

    fkeys = sc[:, lf].reshape(-1, 3)
    faces, finv, fcount = _unique_rows(fkeys)
    if np.any(fcount > 2):
        bad = int(np.argmax(fcount > 2))
        raise MeshError(f"non-conforming mesh: face {tuple(faces[bad])} shared by {fcount[bad]} cells")
    cell_faces = finv.reshape(nt, 4)

    nf = len(faces)
    face_cells = -np.ones((nf, 2), dtype=np.int64)
    face_local = -np.ones((nf, 2), dtype=np.int64)
    flat_cell = np.repeat(np.arange(nt), 4)
    flat_loc = np.tile(np.arange(4), nt)
    # stable sort by face id keeps lower cell index first
    order = np.argsort(finv, kind="stable")
    fo = finv[order]
    first = np.ones(len(fo), dtype=bool)
    first[1:] = fo[1:] != fo[:-1]
    face_cells[fo[first], 0] = flat_cell[order][first]
    face_local[fo[first], 0] = flat_loc[order][first]
    face_cells[fo[~first], 1] = flat_cell[order][~first]
    face_local[fo[~first], 1] = flat_loc[order][~first]

    verts = mesh.vertices
    fv = verts[faces]
    n = np.cross(fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    # orient away from the vertex of T+ opposite the face
    opp = sc[face_cells[:, 0], face_local[:, 0]]
    s = np.einsum("fi,fi->f", n, fv[:, 0] - verts[opp])
    n *= np.sign(s)[:, None]

    boundary = face_cells[:, 1] < 0
    bfaces = np.where(boundary)[0]
    bvert = np.zeros(len(verts), dtype=bool)
    bvert[faces[bfaces].ravel()] = True
    bedge = np.zeros(len(edges), dtype=bool)
    # edges of boundary faces: local edges of the face within its cell
    face_edge_local = {0: (3, 4, 5), 1: (1, 2, 5), 2: (0, 2, 4), 3: (0, 1, 3)}
    fe = np.array([face_edge_local[i] for i in range(4)])
    bc, bl = face_cells[bfaces, 0], face_local[bfaces, 0]
    bedge[cell_edges[bc[:, None], fe[bl]].ravel()] = True

    order = np.argsort(sc.ravel(), kind="stable")
    vc = np.repeat(np.arange(nt), 4)[order]
    ptr = np.zeros(len(verts) + 1, dtype=np.int64)
    np.add.at(ptr, sc.ravel() + 1, 1)
    ptr = np.cumsum(ptr)

    arrays = dict(
        edges=edges,
        faces=faces,
        cell_edges=cell_edges,
        cell_faces=cell_faces,
        face_cells=face_cells,
        face_local=face_local,
        face_normals=n,
        interior_faces=np.where(~boundary)[0],
        boundary_faces=bfaces,
        boundary_vertex=bvert,
        boundary_edge=bedge,
        vertex_cells_ptr=ptr,
        vertex_cells=vc,
    )
    for a in arrays.values():
        a.setflags(write=False)
    return MeshTopology(**arrays)


# local edges contained in each local face, in LOCAL_EDGES numbering
FACE_LOCAL_EDGES = np.array([(3, 4, 5), (1, 2, 5), (0, 2, 4), (0, 1, 3)])


@dataclass(frozen=True, eq=False)
class VertexPatch:
    """Cells around a vertex and the part of the patch boundary carrying a zero trace."""

    vertex: int
    cells: np.ndarray
    boundary_manifold: np.ndarray
    is_boundary_vertex: bool


def vertex_patches(mesh: TetMesh, topology: MeshTopology | None = None) -> list[VertexPatch]:
    """One patch per vertex; Gamma excludes patch-boundary faces on the domain boundary."""
    topo = topology or mesh.topology
    sc = mesh.geometry.sorted_cells
    out = []
    for v in range(mesh.num_vertices):
        cells = topo.cells_of_vertex(v)
        loc = np.argmax(sc[cells] == v, axis=1)
        opp_faces = topo.cell_faces[cells, loc]
        gamma = opp_faces[topo.face_cells[opp_faces, 1] >= 0] if topo.boundary_vertex[v] else opp_faces
        out.append(
            VertexPatch(
                vertex=v,
                cells=cells,
                boundary_manifold=np.sort(gamma),
                is_boundary_vertex=bool(topo.boundary_vertex[v]),
            )
        )
    return out


# ---------------------------------------------------------------------------
# generators


def _dedupe(points: np.ndarray, cells: np.ndarray):
    keys = np.round(points * 2 ** 20).astype(np.int64)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    first = np.zeros(len(uniq), dtype=np.int64)
    first[inv[::-1]] = np.arange(len(points))[::-1]
    return points[first], inv[cells]


def unit_cube_mesh(scheme: str = "kuhn6", n: int = 1, cell_mu=1.0) -> TetMesh:
    """Conforming tetrahedral mesh of the unit cube from ``n**3`` sub-cubes.

    ``kuhn6`` splits each sub-cube into 6 tetrahedra around its main
    diagonal; ``center24`` joins the sub-cube centre to the 4 triangles of
    each face obtained from the face centre.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise MeshError(f"n must be a positive integer, got {n!r}")
    if scheme not in ("kuhn6", "center24"):
        raise MeshError(f"unknown scheme {scheme!r}")
    h = 1.0 / n
    origins = np.array(
        [(i, j, k) for i in range(n) for j in range(n) for k in range(n)], dtype=float
    ) * h
    pts, cells = [], []
    if scheme == "kuhn6":
        for o in origins:
            for perm in permutations(range(3)):
                p = [o.copy()]
                for ax in perm:
                    q = p[-1].copy()
                    q[ax] += h
                    p.append(q)
                base = len(pts)
                pts.extend(p)
                cells.append([base, base + 1, base + 2, base + 3])
    else:
        for o in origins:
            _cube_center_split(o, h, pts, cells, face_split=4)
    points, cells = _dedupe(np.array(pts), np.array(cells))
    return TetMesh.from_arrays(points, cells, cell_mu)


def _cube_center_split(o, h, pts, cells, face_split: int):
    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], float)
    C = o + 0.5 * h
    for ax in range(3):
        for side in (0, 1):
            quad = corners[corners[:, ax] == side]
            # order the 4 face corners cyclically
            others = [a for a in range(3) if a != ax]
            ang = np.arctan2(quad[:, others[1]] - 0.5, quad[:, others[0]] - 0.5)
            quad = o + h * quad[np.argsort(ang)]
            if face_split == 4:
                F = quad.mean(axis=0)
                for i in range(4):
                    base = len(pts)
                    pts.extend([C, F, quad[i], quad[(i + 1) % 4]])
                    cells.append([base, base + 1, base + 2, base + 3])
            else:
                # diagonal through the lexicographically smallest corner
                start = min(range(4), key=lambda i: tuple(quad[i]))
                q = [quad[(start + i) % 4] for i in range(4)]
                for tri in ((q[0], q[1], q[2]), (q[0], q[2], q[3])):
                    base = len(pts)
                    pts.extend([C, *tri])
                    cells.append([base, base + 1, base + 2, base + 3])


def l_brick_mesh(cell_mu=1.0) -> TetMesh:
    """36-cell mesh of (-1,1)x(-1,1)x(0,1) minus [0,1]x[-1,0]x[0,1].

    Three unit cubes, each split into 12 cells from its centre with every
    face cut into 2 triangles along the diagonal through its
    lexicographically smallest corner (so shared faces match).
    """
    pts, cells = [], []
    for o in ([-1.0, -1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]):
        _cube_center_split(np.array(o), 1.0, pts, cells, face_split=2)
    points, cells = _dedupe(np.array(pts), np.array(cells))
    return TetMesh.from_arrays(points, cells, cell_mu)


def single_tet_mesh(cell_mu=1.0) -> TetMesh:
    from .discretization.elements import REF_VERTICES

    return TetMesh.from_arrays(REF_VERTICES.copy(), [[0, 1, 2, 3]], cell_mu)


def two_tet_mesh(cell_mu=1.0) -> TetMesh:
    verts = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]
    )
    return TetMesh.from_arrays(verts, [[0, 1, 2, 3], [1, 2, 3, 4]], cell_mu)

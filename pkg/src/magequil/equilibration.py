"""Equilibrated error estimator for the curl-curl problem.

Given the discrete field ``H_h``, the construction produces a broken field
``Ht = Hhat + grad_h phi - grad alpha`` whose curl balances the residual
current cell by cell and whose tangential jumps cancel those of ``H_h``.
The five stages are

1. cell corrections ``Hhat`` in the broken Nedelec space of degree k'
   (minimal curl residual, orthogonal to gradients);
2. face potentials ``lambda_f`` whose surface curls match the tangential
   jumps of ``H_h + Hhat``;
3. a broken Lagrange field ``phi`` of degree k' whose jumps reproduce the
   face potentials node by node;
4. patch corrections ``alpha_nu`` of degree k'+1 removing the part of
   ``grad_h(theta_nu phi)`` that a continuous field can represent;
5. indicators ``eta_T = ||mu^{1/2} Ht||_T``.

All local problems are small dense systems solved in batches.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import tensors as T
from .discretization.dofmap import DofMap, dof_map
from .discretization.elements import (
    Family,
    _tet_node_indices,
    reference_element,
    tri_to_tet_face_nodes,
)
from .discretization.fields import CellScalarField, CellVectorField, _chunks, weighted_norms
from .discretization.quadrature import tet_quadrature, tri_quadrature
from .mesh import MeshTopology, TetMesh, VertexPatch, vertex_patches
from .system import nedelec_field

log = logging.getLogger(__name__)

PIVOT_RTOL = 1e-12


class EquilibrationError(RuntimeError):
    """A local problem could not be solved."""


# ---------------------------------------------------------------------------
# data: the residual current j - j_h, with an optional broken correction


@dataclass(frozen=True, eq=False)
class CurrentData:
    """Evaluates ``j_c - j_h`` on cells, with ``j_c = j - correction``.

    ``correction`` is a broken vector field (the discrete gradient removed
    from ``j`` by the compatibility correction of the global solve) or None.
    """

    j: object
    j_h: object
    correction: object = None

    def residual(self, mesh: TetMesh, ref_points: np.ndarray, cells=slice(None)) -> np.ndarray:
        x = mesh.geometry.to_physical(ref_points, cells)
        out = np.asarray(self.j(x), dtype=float).reshape(x.shape) - self.j_h.values(ref_points, cells)
        if self.correction is not None:
            out = out - self.correction.values(ref_points, cells)
        return out


# ---------------------------------------------------------------------------
# step 1


@dataclass(frozen=True, eq=False)
class BrokenNedelecField:
    """Cell corrections in the broken Nedelec space of degree ``degree``.

    ``curl_residual[t]`` is ``||curl Hhat - j^Delta||_T`` and
    ``gauge_residual[t]`` the largest ``|(Hhat, grad q)_T|`` over the
    orthonormal test functions, scaled by ``||Hhat||_T``.
    """

    degree: int
    coefficients: np.ndarray
    field: CellVectorField
    curl_residual: np.ndarray
    rhs_norm: np.ndarray
    gauge_residual: np.ndarray
    fallback_cells: np.ndarray


def _batched_kkt_solve(K: np.ndarray, b: np.ndarray, rtol: float = PIVOT_RTOL):
    """Solve a batch of symmetric systems, falling back to a truncated eigensolve."""
    d = np.sqrt(np.maximum(np.abs(np.einsum("tii->ti", K)), 1e-300))
    scale = np.where(d > 0, 1.0 / d, 1.0)
    # the multiplier block has a zero diagonal: use the row norm instead
    rn = np.linalg.norm(K, axis=2)
    scale = np.where(np.einsum("tii->ti", K) == 0, 1.0 / np.sqrt(np.maximum(rn, 1e-300)), scale)
    Ks = K * scale[:, :, None] * scale[:, None, :]
    bs = b * scale
    bad = np.zeros(len(K), dtype=bool)
    try:
        xs = np.linalg.solve(Ks, bs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        xs = np.zeros_like(bs)
        bad[:] = True
    r = np.einsum("tij,tj->ti", Ks, xs) - bs
    tol = 1e-10 * (np.linalg.norm(bs, axis=1) + 1e-300)
    bad |= ~np.isfinite(xs).all(axis=1) | (np.linalg.norm(r, axis=1) > tol)
    if bad.any():
        log.debug("%d local systems solved by truncated eigendecomposition", int(bad.sum()))
        w, V = np.linalg.eigh(Ks[bad])
        cut = rtol * np.abs(w).max(axis=1, keepdims=True)
        winv = np.where(np.abs(w) > cut, 1.0 / np.where(w == 0, 1.0, w), 0.0)
        xs[bad] = np.einsum("tij,tj->ti", V, winv * np.einsum("tji,tj->ti", V, bs[bad]))
    return xs * scale, np.where(bad)[0]


def step1_element_corrections(
    mesh: TetMesh,
    data: CurrentData,
    kp: int,
    quad_order: int | None = None,
    chunk: int = 2048,
) -> BrokenNedelecField:
    """Per cell: minimise ``||curl Hhat - j^Delta||_T`` over R_k'(T) with ``Hhat`` orthogonal to grad P_k'(T)."""
    g = mesh.geometry
    Rcc = T.nedelec_curlcurl(kp)
    Rg = T.nedelec_orthonormal_coupling(kp, kp)
    Rs = T.orthonormal_stiffness(kp)
    ned = reference_element(Family.NEDELEC1_TET, kp)
    n, m = Rcc.shape[0], Rg.shape[1]
    order = 2 * (kp + 1) + 2 if quad_order is None else quad_order
    rule = tet_quadrature(min(order, 20))
    Cq = ned.curls(rule.points) * rule.weights[:, None, None]
    coef = np.zeros((mesh.num_cells, n))
    res = np.zeros(mesh.num_cells)
    rhs_norm = np.zeros(mesh.num_cells)
    gauge = np.zeros(mesh.num_cells)
    fallback = []
    for sl in _chunks(mesh.num_cells, chunk):
        C = T.contract(g.metric[sl], Rcc) / g.absdet[sl][:, None, None]
        C = T.symmetrize(C)
        G = np.transpose(T.contract(g.metric_inv[sl], Rg), (0, 2, 1)) * g.absdet[sl][:, None, None]
        jd = data.residual(mesh, rule.points, sl)  # (nc, nq, 3)
        # (j, curl N_a)_T = sign(det) sum_q w (J^T j) . curlhat N_a
        jt = np.einsum("tji,tqj->tqi", g.J[sl], jd) * np.sign(g.detJ[sl])[:, None, None]
        r = np.einsum("tqi,qai->ta", jt, Cq)
        nc = C.shape[0]
        K = np.zeros((nc, n + m, n + m))
        K[:, :n, :n] = C
        K[:, n:, :n] = G
        K[:, :n, n:] = np.transpose(G, (0, 2, 1))
        b = np.zeros((nc, n + m))
        b[:, :n] = r
        x, bad = _batched_kkt_solve(K, b)
        c = x[:, :n]
        coef[sl] = c
        fallback.extend((bad + sl.start).tolist())
        # residual of the curl equation at the quadrature points
        curl = np.einsum("tij,qaj,ta->tqi", g.J[sl], ned.curls(rule.points), c) / g.detJ[sl][:, None, None]
        diff = curl - jd
        w = rule.weights[None, :] * g.absdet[sl][:, None]
        res[sl] = np.sqrt(np.einsum("tq,tqi,tqi->t", w, diff, diff))
        rhs_norm[sl] = np.sqrt(np.einsum("tq,tqi,tqi->t", w, jd, jd))
        M = T.contract(g.metric_inv[sl], T.nedelec_mass(kp)) * g.absdet[sl][:, None, None]
        Hn = np.sqrt(np.maximum(np.einsum("ta,tab,tb->t", c, M, c), 0.0))
        Gn = np.sqrt(np.einsum("tcc->tc", T.contract(g.metric_inv[sl], Rs)) * g.absdet[sl][:, None])
        Gc = np.abs(np.einsum("tca,ta->tc", G, c)) / np.maximum(Gn * Hn[:, None], 1e-300)
        gauge[sl] = Gc.max(axis=1, initial=0.0)
    fieldv = nedelec_field(mesh, kp, coef)
    return BrokenNedelecField(kp, coef, fieldv, res, rhs_norm, gauge, np.array(fallback, dtype=np.int64))


# ---------------------------------------------------------------------------
# face geometry helpers


@dataclass(frozen=True, eq=False)
class FaceGeometry:
    """Affine parametrisation ``x = v0 + F (s, t)`` of faces with sorted vertices."""

    faces: np.ndarray
    v0: np.ndarray
    F: np.ndarray  # (nf, 3, 2)
    normals: np.ndarray
    areas: np.ndarray

    @classmethod
    def build(cls, mesh: TetMesh, topo: MeshTopology, faces: np.ndarray) -> "FaceGeometry":
        v = mesh.vertices[topo.faces[faces]]
        F = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)
        areas = 0.5 * np.linalg.norm(np.cross(F[:, :, 0], F[:, :, 1]), axis=1)
        return cls(faces, v[:, 0], F, topo.face_normals[faces], areas)

    def points(self, st: np.ndarray) -> np.ndarray:
        return self.v0[:, None, :] + np.einsum("fij,qj->fqi", self.F, st)

    @property
    def metric_inv(self) -> np.ndarray:
        return np.linalg.inv(np.einsum("fki,fkj->fij", self.F, self.F))

    def frames(self) -> np.ndarray:
        """Orthonormal tangents: t1 along the lowest-index edge, t2 = n x t1."""
        t1 = self.F[:, :, 0] / np.linalg.norm(self.F[:, :, 0], axis=1, keepdims=True)
        return np.stack([t1, np.cross(self.normals, t1)], axis=1)


def traces(mesh: TetMesh, field, cells: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Values of a broken field on ``cells`` at physical points ``x`` (nf, nq, 3)."""
    return field.values_at(cells, mesh.geometry.to_reference(x, cells))


def tangential_jumps(mesh, topo, field, faces, st) -> np.ndarray:
    """``n+ x (F+ - F-)`` at face points, shape (nf, nq, 3)."""
    fg = FaceGeometry.build(mesh, topo, faces)
    x = fg.points(st)
    tp, tm = topo.face_cells[faces, 0], topo.face_cells[faces, 1]
    d = traces(mesh, field, tp, x) - traces(mesh, field, tm, x)
    return np.cross(fg.normals[:, None, :], d)


# ---------------------------------------------------------------------------
# step 2


@dataclass(frozen=True, eq=False)
class FacePotentialSet:
    """Nodal values of ``lambda_f`` in LagrangeTri(k') on each interior face."""

    degree: int
    faces: np.ndarray
    coefficients: np.ndarray
    frames: np.ndarray
    normals: np.ndarray
    residual: np.ndarray
    jump_norm: np.ndarray
    mean: np.ndarray
    areas: np.ndarray


def step2_face_potentials(
    mesh: TetMesh,
    topo: MeshTopology,
    H_h,
    hatH: BrokenNedelecField,
    kp: int,
    quad_order: int | None = None,
    jump_data: np.ndarray | None = None,
) -> FacePotentialSet:
    """Per interior face: ``-n x grad_f lambda = [[H_h + Hhat]]`` in least squares, ``(lambda, 1)_f = 0``.

    ``jump_data`` overrides the jump samples (nf, nq, 3) at the points of
    ``tri_quadrature(quad_order)``.
    """
    faces = topo.interior_faces
    order = 2 * kp + 2 if quad_order is None else quad_order
    rule = tri_quadrature(min(order, 20))
    tri = reference_element(Family.LAGRANGE_TRI, kp)
    fg = FaceGeometry.build(mesh, topo, faces)
    nl = tri.dim
    if jump_data is None:
        W = H_h + hatH.field
        jump = tangential_jumps(mesh, topo, W, faces, rule.points)
    else:
        jump = np.asarray(jump_data, dtype=float)
    n = fg.normals
    # -n x grad lambda = jump  <=>  grad_f lambda = n x jump (jump is tangential)
    target = np.cross(n[:, None, :], jump)
    Ginv = fg.metric_inv
    jac = 2.0 * fg.areas
    dphi = tri.grads(rule.points)  # (nq, nl, 2)
    phi = tri.values(rule.points)  # (nq, nl)
    w = rule.weights
    K = np.einsum("q,qai,fij,qbj->fab", w, dphi, Ginv, dphi) * jac[:, None, None]
    Ft = np.einsum("fki,fqk->fqi", fg.F, target)
    b = np.einsum("q,fqi,fij,qaj->fa", w, Ft, Ginv, dphi) * jac[:, None]
    mvec = (w @ phi)[None, :] * jac[:, None]
    nf = len(faces)
    KK = np.zeros((nf, nl + 1, nl + 1))
    KK[:, :nl, :nl] = T.symmetrize(K) if nf else K
    KK[:, :nl, nl] = mvec
    KK[:, nl, :nl] = mvec
    bb = np.zeros((nf, nl + 1))
    bb[:, :nl] = b
    x, _ = _batched_kkt_solve(KK, bb) if nf else (np.zeros((0, nl + 1)), None)
    lam = x[:, :nl]
    # residual of the surface-curl equation at the quadrature points
    grad = np.einsum("fij,fjk,qak,fa->fqi", fg.F, Ginv, dphi, lam)
    r = -np.cross(n[:, None, :], grad) - jump
    res = np.sqrt(np.einsum("q,fqi,fqi->f", w, r, r) * jac)
    jn = np.sqrt(np.einsum("q,fqi,fqi->f", w, jump, jump) * jac)
    mean = np.einsum("fa,fa->f", mvec, lam)
    return FacePotentialSet(kp, faces, lam, fg.frames(), n, res, jn, mean, fg.areas)


# ---------------------------------------------------------------------------
# step 3


@dataclass(frozen=True, eq=False)
class BrokenLagrangeField:
    """Broken P_k' field given by nodal values per cell (NT, nloc)."""

    degree: int
    values: np.ndarray
    field: CellScalarField
    node_residual: np.ndarray
    node_sum: np.ndarray
    jump_error: np.ndarray
    node_map: DofMap


def lagrange_field(mesh: TetMesh, k: int, nodal: np.ndarray) -> CellScalarField:
    lag = reference_element(Family.LAGRANGE_TET, k)
    return CellScalarField(nodal @ lag.coef, k, mesh.geometry.Jinv)


def step3_node_distribution(
    mesh: TetMesh, topo: MeshTopology, potentials: FacePotentialSet, kp: int
) -> BrokenLagrangeField:
    """Nodal least-squares problems ``phi_T+ - phi_T- = lambda_f``, ``sum_T phi_T = 0``, solved at once.

    The normal equations decouple node by node; they are assembled as one
    block-diagonal sparse system.
    """
    lag = reference_element(Family.LAGRANGE_TET, kp)
    nloc = lag.dim
    nt = mesh.num_cells
    gdm = dof_map(mesh, topo, Family.LAGRANGE_TET, kp)
    t2t = tri_to_tet_face_nodes(kp)
    faces = potentials.faces
    ntri = t2t.shape[1]
    tp, tm = topo.face_cells[faces, 0], topo.face_cells[faces, 1]
    lp, lm = topo.face_local[faces, 0], topo.face_local[faces, 1]
    up = tp[:, None] * nloc + t2t[lp]  # (nf, ntri)
    um = tm[:, None] * nloc + t2t[lm]
    nfr = len(faces) * ntri
    rows_f = np.arange(nfr)
    # node-sum rows, one per global node
    node_of = gdm.cell_dofs.ravel()
    rows_s = nfr + node_of
    rows = np.concatenate([rows_f, rows_f, rows_s])
    cols = np.concatenate([up.ravel(), um.ravel(), np.arange(nt * nloc)])
    vals = np.concatenate([np.ones(nfr), -np.ones(nfr), np.ones(nt * nloc)])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(nfr + gdm.num_dofs, nt * nloc))
    rhs = np.concatenate([potentials.coefficients.ravel(), np.zeros(gdm.num_dofs)])
    N = (A.T @ A).tocsc()
    phi = spla.splu(N).solve(A.T @ rhs) if nt else np.zeros(0)
    r = A @ phi - rhs
    # residual per global node: face rows belong to the node of (T+, a+)
    face_node = node_of[up.ravel()]
    rr = np.bincount(face_node, weights=r[:nfr] ** 2, minlength=gdm.num_dofs)
    rr += r[nfr:] ** 2
    values = phi.reshape(nt, nloc)
    node_sum = np.abs(np.bincount(node_of, weights=phi, minlength=gdm.num_dofs))
    jump_err = np.abs(r[:nfr]).reshape(len(faces), ntri).max(axis=1, initial=0.0)
    return BrokenLagrangeField(
        kp, values, lagrange_field(mesh, kp, values), np.sqrt(rr), node_sum, jump_err, gdm
    )


# ---------------------------------------------------------------------------
# step 4


@dataclass(frozen=True, eq=False)
class PatchSolution:
    vertex: int
    dofs: np.ndarray
    alpha: np.ndarray
    matrix: np.ndarray
    rhs: np.ndarray


@dataclass(frozen=True, eq=False)
class PatchCorrectionSet:
    """Global continuous P_{k'+1} field ``alpha = sum_nu alpha_nu``."""

    degree: int
    coefficients: np.ndarray
    dofmap: DofMap
    field: CellScalarField
    orthogonality_residual: np.ndarray
    patch_sizes: np.ndarray
    patches: list | None = None


@lru_cache(maxsize=None)
def _node_interpolation(kp: int) -> tuple[np.ndarray, np.ndarray]:
    """P_k' basis at the P_{k'+1} nodes and barycentric coordinates of those nodes."""
    q = kp + 1
    lagq = reference_element(Family.LAGRANGE_TET, q)
    E = reference_element(Family.LAGRANGE_TET, kp).values(lagq.nodes)
    bary = np.array(_tet_node_indices(q), dtype=float) / q
    E.setflags(write=False)
    bary.setflags(write=False)
    return E, bary


def step4_patch_corrections(
    mesh: TetMesh,
    topo: MeshTopology,
    patches: list[VertexPatch] | None,
    phi: BrokenLagrangeField,
    kp: int,
    keep_patches: bool = False,
) -> PatchCorrectionSet:
    """Per vertex: continuous ``alpha_nu`` of degree k'+1, zero on Gamma_nu, with
    ``(mu grad alpha_nu, grad psi) = (mu grad_h(theta_nu phi), grad psi)`` on the patch."""
    patches = vertex_patches(mesh, topo) if patches is None else patches
    q = kp + 1
    lagq = reference_element(Family.LAGRANGE_TET, q)
    gdm = dof_map(mesh, topo, Family.LAGRANGE_TET, q)
    E, bary = _node_interpolation(kp)
    phi_q = phi.values @ E.T  # (NT, nq)
    g = mesh.geometry
    Kloc = T.symmetrize(
        T.contract(g.metric_inv, T.lagrange_stiffness(q)) * (g.absdet * mesh.cell_mu)[:, None, None]
    )
    sc = g.sorted_cells
    on_face = bary == 0  # on_face[n, i]: node n lies on the face opposite local vertex i
    alpha = np.zeros(gdm.num_dofs)
    ortho = np.zeros(len(patches))
    sizes = np.zeros(len(patches), dtype=np.int64)
    gamma_mask = np.zeros(topo.num_faces, dtype=bool)
    kept = [] if keep_patches else None
    for p in patches:
        cells = p.cells
        iv = np.argmax(sc[cells] == p.vertex, axis=1)
        w = bary[:, iv].T * phi_q[cells]  # theta_nu * phi at the P_q nodes
        K = Kloc[cells]
        rhs_loc = np.einsum("tab,tb->ta", K, w)
        dofs = gdm.cell_dofs[cells]
        uniq, inv = np.unique(dofs, return_inverse=True)
        inv = inv.reshape(dofs.shape)
        nu = len(uniq)
        gamma_mask[p.boundary_manifold] = True
        opp = topo.cell_faces[cells, iv]
        cons_cells = gamma_mask[opp]
        gamma_mask[p.boundary_manifold] = False
        fixed = np.zeros(nu, dtype=bool)
        if cons_cells.any():
            fixed[inv[cons_cells][on_face[:, iv[cons_cells]].T]] = True
        Kp = np.zeros((nu, nu))
        np.add.at(Kp, (inv[:, :, None], inv[:, None, :]), K)
        bp = np.bincount(inv.ravel(), weights=rhs_loc.ravel(), minlength=nu)
        free = ~fixed
        Kf, bf = Kp[np.ix_(free, free)], bp[free]
        sizes[p.vertex] = int(free.sum())
        if not free.any():
            a = np.zeros(0)
        elif len(p.boundary_manifold) == 0:
            a = np.linalg.lstsq(Kf, bf, rcond=PIVOT_RTOL)[0]
        else:
            try:
                a = np.linalg.solve(Kf, bf)
            except np.linalg.LinAlgError:
                a = np.linalg.lstsq(Kf, bf, rcond=PIVOT_RTOL)[0]
        scale = np.linalg.norm(bf) + np.linalg.norm(Kf) * np.linalg.norm(a)
        ortho[p.vertex] = np.linalg.norm(Kf @ a - bf) / scale if scale > 0 else 0.0
        alpha[uniq[free]] += a
        if kept is not None:
            kept.append(PatchSolution(p.vertex, uniq[free], a, Kf, bf))
    cellv = alpha[gdm.cell_dofs]
    fieldv = CellScalarField(cellv @ lagq.coef, q, g.Jinv)
    return PatchCorrectionSet(q, alpha, gdm, fieldv, ortho, sizes, kept)


# ---------------------------------------------------------------------------
# step 5 and the comparison estimators


def _negated(f: CellScalarField) -> CellScalarField:
    return CellScalarField(-f.coef, f.degree, f.Jinv)


def estimator_field(hatH: BrokenNedelecField, phi: BrokenLagrangeField, alphas: PatchCorrectionSet | None):
    """``Hhat + grad_h phi - grad alpha`` (without alpha when ``alphas`` is None)."""
    F = hatH.field + phi.field.gradient_field()
    if alphas is not None:
        F = F + _negated(alphas.field).gradient_field()
    return F


def step5_estimator(mesh: TetMesh, hatH, phi, alphas, kp: int):
    """Indicators ``eta_T`` and the field ``Ht``."""
    F = estimator_field(hatH, phi, alphas)
    eta2 = weighted_norms(mesh, F, order=2 * (kp + 1))
    return np.sqrt(eta2), F


def legacy_estimator(mesh: TetMesh, hatH, phi, kp: int) -> tuple[float, np.ndarray]:
    """``||mu^{1/2} (Hhat + grad_h phi)||`` and its cell contributions."""
    eta2 = weighted_norms(mesh, estimator_field(hatH, phi, None), order=2 * kp)
    return float(np.sqrt(eta2.sum())), np.sqrt(eta2)


def residual_estimator(
    mesh: TetMesh, topo: MeshTopology, H_h, j_h, j, k: int, quad_order: int | None = None
) -> tuple[float, np.ndarray]:
    """``mu_h`` with cell terms ``h_T^2/k^2 ||j - curl H_h||_T^2`` and face terms
    ``h_f/k ||[[H_h]]||_f^2`` shared equally by the two cells of each face."""
    order = 2 * k + 4 if quad_order is None else quad_order
    data = CurrentData(j, j_h)
    rule = tet_quadrature(min(order, 20))
    g = mesh.geometry
    cell = np.empty(mesh.num_cells)
    for sl in _chunks(mesh.num_cells, 2048):
        r = data.residual(mesh, rule.points, sl)
        cell[sl] = np.einsum("q,tqi,tqi->t", rule.weights, r, r) * g.absdet[sl]
    cell *= mesh.diameters**2 / k**2
    faces = topo.interior_faces
    frule = tri_quadrature(min(2 * k, 20))
    jump = tangential_jumps(mesh, topo, H_h, faces, frule.points)
    area = topo.face_areas(mesh.vertices)[faces]
    fterm = np.einsum("q,fqi,fqi->f", frule.weights, jump, jump) * 2.0 * area
    fterm *= topo.face_diameters(mesh.vertices)[faces] / k
    mu2 = cell.copy()
    np.add.at(mu2, topo.face_cells[faces, 0], 0.5 * fterm)
    np.add.at(mu2, topo.face_cells[faces, 1], 0.5 * fterm)
    return float(np.sqrt(mu2.sum())), np.sqrt(mu2)


# ---------------------------------------------------------------------------
# report


@dataclass
class EstimateReport:
    """Indicators, global values and diagnostics of one estimator evaluation."""

    eta_T: np.ndarray
    mu_T: np.ndarray
    eta_legacy_T: np.ndarray
    eta: float
    mu: float
    eta_legacy: float
    diagnostics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_dict(self, per_cell: bool = True) -> dict:
        out = {
            "eta": self.eta,
            "mu": self.mu,
            "eta_legacy": self.eta_legacy,
            "diagnostics": {k: _jsonable(v) for k, v in self.diagnostics.items()},
            "timings": dict(self.timings),
        }
        if per_cell:
            out["eta_T"] = self.eta_T.tolist()
            out["mu_T"] = self.mu_T.tolist()
            out["eta_legacy_T"] = self.eta_legacy_T.tolist()
        return out


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


@dataclass(frozen=True, eq=False)
class Equilibration:
    """All intermediate objects of one estimator evaluation."""

    report: EstimateReport
    hatH: BrokenNedelecField
    potentials: FacePotentialSet
    phi: BrokenLagrangeField
    alphas: PatchCorrectionSet
    field: object
    data: CurrentData


def _max(a) -> float:
    a = np.asarray(a)
    return float(a.max()) if a.size else 0.0


def equilibrium_residuals(mesh, topo, H_h, Ht, data: CurrentData, kp: int, jump_scale: float):
    """Relative cell curl residuals and face jump residuals of ``H_h + Ht``."""
    rule = tet_quadrature(min(2 * kp + 4, 20))
    g = mesh.geometry
    res = np.empty(mesh.num_cells)
    ref = np.empty(mesh.num_cells)
    for sl in _chunks(mesh.num_cells, 2048):
        r = data.residual(mesh, rule.points, sl)
        d = Ht.curl(rule.points, sl) - r
        res[sl] = np.einsum("q,tqi,tqi->t", rule.weights, d, d) * g.absdet[sl]
        ref[sl] = np.einsum("q,tqi,tqi->t", rule.weights, r, r) * g.absdet[sl]
    cscale = np.sqrt(ref.sum())
    faces = topo.interior_faces
    frule = tri_quadrature(min(2 * kp + 2, 20))
    jump = tangential_jumps(mesh, topo, H_h + Ht, faces, frule.points)
    area = topo.face_areas(mesh.vertices)[faces]
    fj = np.sqrt(np.einsum("q,fqi,fqi->f", frule.weights, jump, jump) * 2.0 * area)
    cell_rel = np.sqrt(res) / cscale if cscale > 0 else np.sqrt(res)
    face_rel = fj / jump_scale if jump_scale > 0 else fj
    return cell_rel, face_rel


def estimate(
    mesh: TetMesh,
    topology: MeshTopology | None,
    j,
    H_h,
    j_h,
    k: int,
    kp: int | None = None,
    correction=None,
    keep_patches: bool = False,
    check_equilibrium: bool = True,
) -> Equilibration:
    """Run the full construction and the comparison estimators."""
    topo = topology or mesh.topology
    kp = k if kp is None else kp
    if kp < k:
        raise ValueError(f"k' = {kp} must be at least k = {k}")
    data = CurrentData(j, j_h, correction)
    times = {}
    t = time.perf_counter()
    hatH = step1_element_corrections(mesh, data, kp)
    times["step1"] = time.perf_counter() - t
    t = time.perf_counter()
    pots = step2_face_potentials(mesh, topo, H_h, hatH, kp)
    times["step2"] = time.perf_counter() - t
    t = time.perf_counter()
    phi = step3_node_distribution(mesh, topo, pots, kp)
    times["step3"] = time.perf_counter() - t
    t = time.perf_counter()
    alphas = step4_patch_corrections(mesh, topo, None, phi, kp, keep_patches)
    times["step4"] = time.perf_counter() - t
    t = time.perf_counter()
    eta_T, Ht = step5_estimator(mesh, hatH, phi, alphas, kp)
    times["step5"] = time.perf_counter() - t
    t = time.perf_counter()
    eta_leg, eta_leg_T = legacy_estimator(mesh, hatH, phi, kp)
    mu, mu_T = residual_estimator(mesh, topo, H_h, j_h, j, k)
    times["comparison"] = time.perf_counter() - t

    jscale = float(np.sqrt(np.sum(pots.jump_norm**2)))
    lam_scale = _max(np.abs(pots.coefficients))
    diag = {
        "step1_curl_residual_rel": _max(hatH.curl_residual) / max(float(np.sqrt(np.sum(hatH.rhs_norm**2))), 1e-300),
        "step1_gauge_residual_rel": _max(hatH.gauge_residual),
        "step1_fallback_cells": int(len(hatH.fallback_cells)),
        "step2_residual_rel": _max(pots.residual) / jscale if jscale > 0 else _max(pots.residual),
        "step2_mean_abs": _max(np.abs(pots.mean)),
        "step2_mean_rel": _max(np.abs(pots.mean) / np.maximum(lam_scale * pots.areas, 1e-300)) if lam_scale > 0 else 0.0,
        "step3_node_residual_rel": _max(phi.node_residual) / lam_scale if lam_scale > 0 else _max(phi.node_residual),
        "step3_node_sum_rel": _max(phi.node_sum) / lam_scale if lam_scale > 0 else _max(phi.node_sum),
        "step3_jump_error_rel": _max(phi.jump_error) / lam_scale if lam_scale > 0 else _max(phi.jump_error),
        "step4_orthogonality_rel": _max(alphas.orthogonality_residual),
        "jump_scale": jscale,
    }
    if check_equilibrium:
        t = time.perf_counter()
        cell_rel, face_rel = equilibrium_residuals(mesh, topo, H_h, Ht, data, kp, jscale)
        diag["equilibrium_curl_rel"] = _max(cell_rel)
        diag["equilibrium_jump_rel"] = _max(face_rel)
        times["equilibrium_check"] = time.perf_counter() - t
    report = EstimateReport(
        eta_T=eta_T,
        mu_T=mu_T,
        eta_legacy_T=eta_leg_T,
        eta=float(np.sqrt(np.sum(eta_T**2))),
        mu=mu,
        eta_legacy=eta_leg,
        diagnostics=diag,
        timings=times,
    )
    return Equilibration(report, hatH, pots, phi, alphas, Ht, data)

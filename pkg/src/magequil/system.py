"""Assembly and solution of the gauged curl-curl problem.

Find ``u_h`` in the Nedelec space with zero tangential trace and a
Lagrange multiplier ``p_h`` in the continuous Lagrange space with zero
trace such that::

    (mu^{-1} curl u_h, curl w) + (grad p_h, w) = (j, w)
    (u_h, grad psi)                             = 0

All cell matrices are contractions of precomputed reference tensors with
the cell metric, which is exact for affine cells.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import polynomials as poly
from .discretization import tensors as T
from .discretization.dofmap import DofMap, dof_map
from .discretization.elements import Family, reference_element
from .discretization.fields import CellScalarField, CellVectorField, _chunks
from .discretization.quadrature import tet_quadrature
from .mesh import MeshTopology, TetMesh

log = logging.getLogger(__name__)

Evaluator = Callable[[np.ndarray], np.ndarray]


class SolverError(RuntimeError):
    """Assembly or solver failure."""


def _scatter(dm_r: DofMap, dm_c: DofMap, local: np.ndarray, cells=slice(None)):
    r = dm_r.cell_dofs[cells]
    c = dm_c.cell_dofs[cells]
    R = np.broadcast_to(r[:, :, None], local.shape)
    Cc = np.broadcast_to(c[:, None, :], local.shape)
    keep = (R >= 0) & (Cc >= 0)
    return R[keep], Cc[keep], local[keep]


def _upper(block):
    r, c, v = block
    keep = r <= c
    return r[keep], c[keep], v[keep]


def _assemble_symmetric(blocks, n: int) -> sp.csr_matrix:
    """Assemble the upper triangle and mirror it, so the result is exactly symmetric."""
    U = _assemble([_upper(b) for b in blocks], (n, n))
    M = (U + sp.triu(U, 1).T).tocsr()
    M.sort_indices()
    return M


def _assemble(blocks, shape) -> sp.csr_matrix:
    rows = np.concatenate([b[0] for b in blocks]) if blocks else np.zeros(0, int)
    cols = np.concatenate([b[1] for b in blocks]) if blocks else np.zeros(0, int)
    vals = np.concatenate([b[2] for b in blocks]) if blocks else np.zeros(0)
    M = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    M.sum_duplicates()
    M.sort_indices()
    return M


def local_curlcurl(mesh: TetMesh, k: int, cells=slice(None)) -> np.ndarray:
    g = mesh.geometry
    loc = T.contract(g.metric[cells], T.nedelec_curlcurl(k))
    loc /= (mesh.cell_mu[cells] * g.absdet[cells])[:, None, None]
    return T.symmetrize(loc)


def local_mass(mesh: TetMesh, k: int, cells=slice(None), weight=None) -> np.ndarray:
    g = mesh.geometry
    w = g.absdet[cells] if weight is None else g.absdet[cells] * weight[cells]
    loc = T.contract(g.metric_inv[cells], T.nedelec_mass(k)) * w[:, None, None]
    return T.symmetrize(loc)


def local_gradient_coupling(mesh: TetMesh, k: int, cells=slice(None)) -> np.ndarray:
    """(N_a, grad psi_c) per cell, shape (nt, n_ned, n_lag)."""
    g = mesh.geometry
    R = T.nedelec_lagrange_coupling(k, k)
    return T.contract(g.metric_inv[cells], R) * g.absdet[cells][:, None, None]


def local_stiffness(mesh: TetMesh, k: int, cells=slice(None), mu=None) -> np.ndarray:
    g = mesh.geometry
    w = g.absdet[cells] if mu is None else g.absdet[cells] * mu[cells]
    loc = T.contract(g.metric_inv[cells], T.lagrange_stiffness(k)) * w[:, None, None]
    return T.symmetrize(loc)


def load_vectors(mesh: TetMesh, k: int, j: Evaluator, order: int, chunk: int = 2048):
    """Cell loads ``(j, N_a)_T`` and ``(j, grad psi_c)_T``."""
    rule = tet_quadrature(min(order, 20))
    ned = reference_element(Family.NEDELEC1_TET, k)
    lag = reference_element(Family.LAGRANGE_TET, k)
    Nq = ned.values(rule.points) * rule.weights[:, None, None]
    Gq = lag.grads(rule.points) * rule.weights[:, None, None]
    g = mesh.geometry
    bu = np.empty((mesh.num_cells, ned.dim))
    bp = np.empty((mesh.num_cells, lag.dim))
    for sl in _chunks(mesh.num_cells, chunk):
        x = g.to_physical(rule.points, sl)
        jv = np.asarray(j(x), dtype=float).reshape(x.shape)
        jr = np.einsum("tij,tqj->tqi", g.Jinv[sl], jv) * g.absdet[sl][:, None, None]
        bu[sl] = np.einsum("tqi,qai->ta", jr, Nq)
        bp[sl] = np.einsum("tqi,qci->tc", jr, Gq)
    return bu, bp


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FieldCoefficients:
    """Coefficient vector of a discrete field in the space of ``dofmap``."""

    dofmap: DofMap
    values: np.ndarray

    def __post_init__(self):
        if len(self.values) != self.dofmap.num_dofs:
            raise ValueError(
                f"coefficient length {len(self.values)} != space dimension {self.dofmap.num_dofs}"
            )

    def cell_values(self) -> np.ndarray:
        return self.dofmap.cell_values(self.values)


@dataclass(frozen=True, eq=False)
class SparseSystem:
    """Saddle-point system ``[[A, B^T], [B, 0]]`` with its load."""

    mesh: TetMesh
    k: int
    matrix: sp.csr_matrix
    rhs: np.ndarray
    A: sp.csr_matrix
    B: sp.csr_matrix
    load: np.ndarray
    load_raw: np.ndarray
    correction: np.ndarray
    u_map: DofMap
    p_map: DofMap
    info: dict = field(default_factory=dict)

    @property
    def n_u(self) -> int:
        return self.A.shape[0]

    @property
    def n_p(self) -> int:
        return self.B.shape[0]

    def write_matrix_market(self, path) -> None:
        from scipy.io import mmwrite

        mmwrite(str(path), self.matrix)


def assemble_system(
    mesh: TetMesh,
    topology: MeshTopology | None,
    k: int,
    j: Evaluator,
    quad_order: int | None = None,
    compatibility_correction: bool = True,
    chunk: int = 2048,
) -> SparseSystem:
    """Assemble the gauged curl-curl system of degree ``k``.

    The load is corrected by the discrete gradient part of ``j``: with
    ``q`` solving ``(grad q, grad psi) = (j, grad psi)`` the load becomes
    ``b - B^T q`` (skipped with ``compatibility_correction=False``).
    """
    topo = topology or mesh.topology
    t0 = time.perf_counter()
    udm = dof_map(mesh, topo, Family.NEDELEC1_TET, k, constraint="zero-tangential-trace")
    pdm = dof_map(mesh, topo, Family.LAGRANGE_TET, k, constraint="zero-trace")
    if udm.num_dofs == 0:
        raise SolverError("Nedelec space with zero tangential trace is empty on this mesh")
    order = 2 * k + 4 if quad_order is None else quad_order
    ablocks, bblocks, sblocks = [], [], []
    for sl in _chunks(mesh.num_cells, chunk):
        ablocks.append(_scatter(udm, udm, local_curlcurl(mesh, k, sl), sl))
        bblocks.append(_scatter(pdm, udm, np.transpose(local_gradient_coupling(mesh, k, sl), (0, 2, 1)), sl))
        if compatibility_correction and pdm.num_dofs:
            sblocks.append(_scatter(pdm, pdm, local_stiffness(mesh, k, sl), sl))
    A = _assemble_symmetric(ablocks, udm.num_dofs)
    B = _assemble(bblocks, (pdm.num_dofs, udm.num_dofs))
    bu, bp = load_vectors(mesh, k, j, order, chunk)
    b = _gather(udm, bu)
    q = np.zeros(pdm.num_dofs)
    if compatibility_correction and pdm.num_dofs:
        S = _assemble_symmetric(sblocks, pdm.num_dofs)
        g = _gather(pdm, bp)
        if np.any(g):
            q = spla.splu(S.tocsc()).solve(g)
    b_corr = b - B.T @ q
    K = sp.bmat([[A, B.T], [B, None]], format="csr")
    rhs = np.concatenate([b_corr, np.zeros(pdm.num_dofs)])
    info = {"assembly_seconds": time.perf_counter() - t0, "quad_order": order}
    return SparseSystem(mesh, k, K, rhs, A, B, b_corr, b, q, udm, pdm, info)


def correction_field(system: SparseSystem) -> CellVectorField | None:
    """``grad q`` of the compatibility correction as a broken field, or None if ``q = 0``."""
    if not np.any(system.correction):
        return None
    mesh, k = system.mesh, system.k
    nodal = FieldCoefficients(system.p_map, system.correction).cell_values()
    coef = nodal @ reference_element(Family.LAGRANGE_TET, k).coef
    return CellScalarField(coef, k, mesh.geometry.Jinv).gradient_field()


def _gather(dm: DofMap, local: np.ndarray) -> np.ndarray:
    d = dm.cell_dofs
    keep = d >= 0
    return np.bincount(d[keep], weights=local[keep], minlength=dm.num_dofs)


def solve_system(
    system: SparseSystem, method: str = "direct", tol: float = 1e-10, maxiter: int = 20000
) -> tuple[FieldCoefficients, FieldCoefficients]:
    """Solve the saddle-point system; the residual is stored in ``system.info``."""
    K, rhs = system.matrix, system.rhs
    n_u = system.n_u
    t0 = time.perf_counter()
    if not np.all(np.isfinite(rhs)):
        raise SolverError("load vector has non-finite entries")
    if not np.any(rhs):
        x = np.zeros_like(rhs)
    elif method == "direct":
        x = _direct(K, rhs)
    elif method == "minres":
        x = _minres(system, tol, maxiter)
    else:
        raise SolverError(f"unknown solver {method!r}")
    nb = np.linalg.norm(rhs)
    res = np.linalg.norm(K @ x - rhs) / nb if nb else 0.0
    system.info.update(
        solve_seconds=time.perf_counter() - t0, relative_residual=float(res), method=method
    )
    if not res <= tol:
        raise SolverError(f"{method} solve reached relative residual {res:.3e} > tol {tol:.1e}")
    return FieldCoefficients(system.u_map, x[:n_u]), FieldCoefficients(system.p_map, x[n_u:])


def nested_dissection(K: sp.spmatrix) -> np.ndarray | None:
    """Fill-reducing nested-dissection permutation of the graph of ``K`` (METIS)."""
    try:
        import pymetis
    except ImportError:  # pragma: no cover - pymetis is a declared dependency
        return None
    G = (abs(K) + abs(K).T).tocsr()
    G.setdiag(0)
    G.eliminate_zeros()
    if G.nnz == 0:
        return None
    perm, _ = pymetis.nested_dissection(adjacency=pymetis.CSRAdjacency(G.indptr, G.indices))
    return np.asarray(perm, dtype=np.int64)


class Factorization:
    """Sparse LU in a nested-dissection ordering.

    ``definite=True`` disables pivoting (diagonal pivots of an SPD matrix);
    otherwise threshold partial pivoting handles the zero block of a
    saddle-point matrix.
    """

    def __init__(self, K: sp.spmatrix, definite: bool = False):
        K = sp.csr_matrix(K)
        self.perm = nested_dissection(K)
        opts = dict(SymmetricMode=True)
        thresh = 0.0 if definite else 0.1
        if self.perm is None:
            self.lu = spla.splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=thresh, options=opts)
        else:
            Kp = K[self.perm][:, self.perm].tocsc()
            self.lu = spla.splu(Kp, permc_spec="NATURAL", diag_pivot_thresh=thresh, options=opts)

    @property
    def fill(self) -> int:
        return int(self.lu.L.nnz + self.lu.U.nnz)

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.perm is None:
            return self.lu.solve(b)
        x = np.empty_like(b)
        x[self.perm] = self.lu.solve(b[self.perm])
        return x


def _direct(K: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    lu = Factorization(K)
    x = lu.solve(rhs)
    # one step of iterative refinement
    x += lu.solve(rhs - K @ x)
    return x


def _minres(system: SparseSystem, tol: float, maxiter: int) -> np.ndarray:
    """MINRES with block-diagonal preconditioner diag(A + M, S).

    ``M`` is the ``1/mu`` weighted mass and ``S`` the ``mu`` weighted stiffness,
    so the preconditioner matches the operator for any permeability contrast.
    """
    mesh, k = system.mesh, system.k
    udm, pdm = system.u_map, system.p_map
    mu = mesh.cell_mu
    M = _assemble_symmetric([_scatter(udm, udm, local_mass(mesh, k, weight=1.0 / mu))], udm.num_dofs)
    S = _assemble_symmetric([_scatter(pdm, pdm, local_stiffness(mesh, k, mu=mu))], pdm.num_dofs)
    lu_u = Factorization(system.A + M, definite=True)
    lu_p = Factorization(S, definite=True) if pdm.num_dofs else None
    n_u = system.n_u

    def apply(r):
        out = np.empty_like(r)
        out[:n_u] = lu_u.solve(r[:n_u])
        if lu_p is not None:
            out[n_u:] = lu_p.solve(r[n_u:])
        return out

    P = spla.LinearOperator(system.matrix.shape, matvec=apply, dtype=float)
    count = [0]

    def step(_):
        count[0] += 1

    # The stopping test acts on the preconditioned residual, whose ratio to the
    # true residual grows with the contrast of mu. Restart on the true residual
    # with the target rescaled by the ratio observed so far.
    K, b = system.matrix, system.rhs
    nb = np.linalg.norm(b)
    x = np.zeros_like(b)
    r, rtol, info = b, 1e-3 * tol, 0
    for _ in range(4):
        d, info = spla.minres(K, r, M=P, rtol=rtol, maxiter=maxiter, callback=step)
        x += d
        nr_old = np.linalg.norm(r)
        r = b - K @ x
        nr = np.linalg.norm(r)
        if nb == 0 or nr <= tol * nb:
            break
        gap = max(nr / (rtol * nr_old), 1.0)
        rtol = max(0.1 * tol * nb / (nr * gap), 1e-15)
    system.info["iterations"] = count[0]
    if info < 0:
        raise SolverError(f"minres failed (info={info})")
    return x


@dataclass(frozen=True, eq=False)
class DiscreteFields:
    """``H_h = mu^{-1} curl u_h`` and ``j_h = curl H_h`` as broken fields."""

    H: CellVectorField
    j: CellVectorField


def curl_field(mesh: TetMesh, k: int, cell_coefficients: np.ndarray, scale=None) -> CellVectorField:
    """Broken field ``scale * curl u`` for Nedelec cell coefficients (NT, nloc)."""
    ned = reference_element(Family.NEDELEC1_TET, k)
    g = mesh.geometry
    coef = np.einsum("ta,ami->tmi", cell_coefficients, ned.curl_coef())
    s = np.ones(mesh.num_cells) if scale is None else scale
    factor = g.J * (s / g.detJ)[:, None, None]
    return CellVectorField(coef, k, factor, g.Jinv)


def nedelec_field(mesh: TetMesh, k: int, cell_coefficients: np.ndarray) -> CellVectorField:
    """Broken Nedelec field from cell coefficients (NT, nloc)."""
    ned = reference_element(Family.NEDELEC1_TET, k)
    g = mesh.geometry
    coef = np.einsum("ta,ami->tmi", cell_coefficients, ned.coef)
    return CellVectorField(coef, k, np.transpose(g.Jinv, (0, 2, 1)), g.Jinv)


def discrete_fields(mesh: TetMesh, u_h: FieldCoefficients) -> DiscreteFields:
    k = u_h.dofmap.degree
    H = curl_field(mesh, k, u_h.cell_values(), 1.0 / mesh.cell_mu)
    return DiscreteFields(H, curl_of(mesh, H))


def curl_of(mesh: TetMesh, F: CellVectorField) -> CellVectorField:
    """Physical curl of a broken field as a field with identity factor."""
    dc = poly.jacobian(F.coef, F.degree)  # (NT, m, 3, 3) reference Jacobian of coefficients
    D = F.factor[:, None] @ dc @ F.Jinv[:, None]
    coef = np.stack(
        [D[..., 2, 1] - D[..., 1, 2], D[..., 0, 2] - D[..., 2, 0], D[..., 1, 0] - D[..., 0, 1]],
        axis=-1,
    )
    eye = np.broadcast_to(np.eye(3), (mesh.num_cells, 3, 3))
    return CellVectorField(coef, F.degree, eye, F.Jinv)


def energy_error(
    mesh: TetMesh,
    H_h,
    exact_H: Evaluator,
    quad_order: int = 12,
    chunk: int = 2048,
) -> tuple[float, np.ndarray]:
    """``||mu^{1/2} (H - H_h)||`` and its squared per-cell contributions."""
    rule = tet_quadrature(min(quad_order, 20))
    g = mesh.geometry
    per = np.empty(mesh.num_cells)
    for sl in _chunks(mesh.num_cells, chunk):
        x = g.to_physical(rule.points, sl)
        d = np.asarray(exact_H(x), dtype=float).reshape(x.shape)
        if H_h is not None:
            d = d - H_h.values(rule.points, sl)
        per[sl] = (
            np.einsum("q,tq->t", rule.weights, np.einsum("tqi,tqi->tq", d, d))
            * g.absdet[sl]
            * mesh.cell_mu[sl]
        )
    return float(np.sqrt(per.sum())), per

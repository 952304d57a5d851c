"""Reference-element polynomial bases.

Each family is built in two stages. A spanning set is generated from the
definitional form of the space (for example ``v + x x w`` for the
first-kind Nedelec space) and L2-orthonormalized on the reference cell,
which also yields its dimension. The degrees of freedom (point values,
edge/face/interior moments) are then applied to the orthonormal set and
the resulting generalized Vandermonde matrix is inverted to obtain the
dual (nodal) basis.

Local vertex numbering follows the reference tetrahedron; when a mesh cell
is mapped with its vertices sorted by global index, every edge and face
parametrization below is shared verbatim by the neighbouring cell, so
conforming assembly needs no orientation signs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.special import eval_legendre

from . import polynomials as poly
from .quadrature import QuadratureRule, line_quadrature, tet_quadrature, tri_quadrature

REF_VERTICES = np.array(
    [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
)
LOCAL_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
# face i is opposite local vertex i
LOCAL_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))

TRI_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
TRI_EDGES = ((0, 1), (0, 2), (1, 2))

MAX_DEGREE = 7


class Family(str, Enum):
    LAGRANGE_TET = "LagrangeTet"
    NEDELEC1_TET = "Nedelec1Tet"
    RAVIART_THOMAS_TET = "RaviartThomasTet"
    LAGRANGE_TRI = "LagrangeTri"


class BasisError(ValueError):
    pass


def space_dimension(family: Family | str, k: int) -> int:
    """Dimension of the local polynomial space of ``family`` and degree ``k``."""
    family = Family(family)
    if not isinstance(k, (int, np.integer)):
        raise BasisError(f"degree must be an integer, got {k!r}")
    kmin = 0 if family in (Family.LAGRANGE_TET, Family.LAGRANGE_TRI) else 1
    if k < kmin:
        raise BasisError(f"{family.value} requires degree >= {kmin}, got {k}")
    if family is Family.NEDELEC1_TET:
        return k * (k + 2) * (k + 3) // 2
    if family is Family.RAVIART_THOMAS_TET:
        return k * (k + 1) * (k + 3) // 2
    if family is Family.LAGRANGE_TET:
        return (k + 1) * (k + 2) * (k + 3) // 6
    return (k + 1) * (k + 2) // 2


# ---------------------------------------------------------------------------
# multi-indices of equispaced Lagrange nodes, ordered by entity


def _tet_node_indices(k: int) -> list[tuple[int, int, int, int]]:
    """Barycentric multi-indices (a0..a3), sum k, ordered vertex/edge/face/interior."""
    if k == 0:
        return [(0, 0, 0, 0)]
    out = []
    for v in range(4):
        a = [0, 0, 0, 0]
        a[v] = k
        out.append(tuple(a))
    for i, j in LOCAL_EDGES:
        for t in range(1, k):
            a = [0, 0, 0, 0]
            a[i], a[j] = k - t, t
            out.append(tuple(a))
    for fa, fb, fc in LOCAL_FACES:
        for s in range(1, k):
            for t in range(1, k - s):
                a = [0, 0, 0, 0]
                a[fa], a[fb], a[fc] = k - s - t, s, t
                out.append(tuple(a))
    for s in range(1, k):
        for t in range(1, k - s):
            for u in range(1, k - s - t):
                out.append((k - s - t - u, s, t, u))
    return out


def _tri_node_indices(k: int) -> list[tuple[int, int, int]]:
    if k == 0:
        return [(0, 0, 0)]
    out = []
    for v in range(3):
        a = [0, 0, 0]
        a[v] = k
        out.append(tuple(a))
    for i, j in TRI_EDGES:
        for t in range(1, k):
            a = [0, 0, 0]
            a[i], a[j] = k - t, t
            out.append(tuple(a))
    for s in range(1, k):
        for t in range(1, k - s):
            out.append((k - s - t, s, t))
    return out


# ---------------------------------------------------------------------------
# orthonormal scalar bases (used as moment test functions and spanning sets)


def _orthonormalize(span: np.ndarray, p: int, rule: QuadratureRule, ncomp: int):
    """L2-orthonormal basis of the column span of ``span`` (nspan, m[, ncomp])."""
    vals = poly.evaluate(span, rule.points, p)  # (nq, nspan, [c])
    sw = np.sqrt(rule.weights)
    if ncomp == 1:
        Q = vals * sw[:, None]
    else:
        Q = (vals * sw[:, None, None]).transpose(0, 2, 1).reshape(-1, span.shape[0])
    # columns of Q are the sampled spanning functions
    U, s, Vt = np.linalg.svd(Q, full_matrices=False)
    rank = int(np.sum(s > 1e-10 * s[0]))
    T = Vt[:rank].T / s[:rank]
    return np.tensordot(T.T, span, axes=([1], [0])), rank


@lru_cache(maxsize=None)
def orthonormal_scalar_basis(k: int, dim: int = 3) -> np.ndarray:
    """L2-orthonormal basis of P_k on the reference simplex, degree-graded.

    Row 0 is the constant function; rows are ordered so that the first
    ``dim P_j`` rows span ``P_j`` for every ``j <= k``.
    """
    exps = poly.exponents(k, dim)
    m = len(exps)
    rule = (tet_quadrature if dim == 3 else tri_quadrature)(2 * k)
    V = poly.monomials(rule.points, k) * np.sqrt(rule.weights)[:, None]
    # Gram-Schmidt in degree order == thin QR of the weighted Vandermonde
    Qm, R = np.linalg.qr(V)
    coef = np.linalg.inv(R).T  # rows: orthonormal functions in monomial coefficients
    sign = np.sign(np.diag(R))
    coef = coef * sign[:, None]
    coef.setflags(write=False)
    assert coef.shape == (m, m)
    return coef


# ---------------------------------------------------------------------------
# degree-of-freedom functionals: L_i(f) = sum_p W[i, p, :] . f(points[p])


@dataclass(frozen=True)
class Functionals:
    points: np.ndarray  # (np, dim)
    weights: np.ndarray  # (nL, np, ncomp)

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Apply to samples ``values`` (..., np, ncomp) -> (..., nL)."""
        return np.einsum("lpc,...pc->...l", self.weights, values)


def _stack_functionals(blocks: list[tuple[np.ndarray, np.ndarray]], ncomp: int) -> Functionals:
    pts = np.concatenate([b[0] for b in blocks], axis=0)
    nL = sum(b[1].shape[0] for b in blocks)
    W = np.zeros((nL, len(pts), ncomp))
    row = col = 0
    for p, w in blocks:
        W[row : row + w.shape[0], col : col + len(p)] = w
        row += w.shape[0]
        col += len(p)
    return Functionals(pts, W)


def _edge_moment_block(k: int, i: int, j: int):
    rule = line_quadrature(2 * k)
    s = rule.points[:, 0]
    pts = REF_VERTICES[i] + s[:, None] * (REF_VERTICES[j] - REF_VERTICES[i])
    t = REF_VERTICES[j] - REF_VERTICES[i]
    q = np.stack([eval_legendre(m, 2 * s - 1) for m in range(k)])  # (k, nq)
    W = (q * rule.weights)[:, :, None] * t[None, None, :]
    return pts, W


def _face_param(fa: int, fb: int, fc: int, st: np.ndarray):
    va, vb, vc = REF_VERTICES[fa], REF_VERTICES[fb], REF_VERTICES[fc]
    return va + st[:, :1] * (vb - va) + st[:, 1:2] * (vc - va), vb - va, vc - va


def _face_tangent_block(k: int, face):
    rule = tri_quadrature(2 * k)
    qb = orthonormal_scalar_basis(k - 2, 2)
    q = poly.evaluate(qb, rule.points, k - 2).T  # (nqb, nq)
    pts, t1, t2 = _face_param(*face, rule.points)
    Wq = q * rule.weights
    W = np.concatenate(
        [Wq[:, :, None] * t1[None, None, :], Wq[:, :, None] * t2[None, None, :]]
    )
    return pts, W


def _face_normal_block(k: int, face):
    rule = tri_quadrature(2 * k)
    qb = orthonormal_scalar_basis(k - 1, 2)
    q = poly.evaluate(qb, rule.points, k - 1).T
    pts, t1, t2 = _face_param(*face, rule.points)
    n = np.cross(t1, t2)
    W = (q * rule.weights)[:, :, None] * n[None, None, :]
    return pts, W


def _interior_vector_block(k: int, qdeg: int):
    rule = tet_quadrature(k + qdeg)
    qb = orthonormal_scalar_basis(qdeg, 3)
    q = poly.evaluate(qb, rule.points, qdeg).T * rule.weights  # (nqb, nq)
    W = np.concatenate([q[:, :, None] * np.eye(3)[c][None, None, :] for c in range(3)])
    return rule.points.copy(), W


def _point_block(points: np.ndarray):
    return points, np.eye(len(points))[:, :, None]


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceElement:
    """Nodal basis of one family and degree on the reference cell.

    Attributes
    ----------
    coef : ndarray
        Monomial coefficients, shape (nb, m) for scalar families and
        (nb, m, 3) for vector families, over ``exponents(poly_degree)``.
    entity_dofs : dict
        ``entity_dofs[d][e]`` lists the local dofs owned by local entity
        ``e`` of dimension ``d`` (vertices, edges, faces, cell).
    functionals : Functionals
        The defining degrees of freedom (dual to ``coef``).
    """

    family: Family
    degree: int
    poly_degree: int
    coef: np.ndarray
    entity_dofs: dict
    functionals: Functionals
    nodes: np.ndarray | None = None
    node_indices: tuple | None = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def dim(self) -> int:
        return self.coef.shape[0]

    @property
    def is_vector(self) -> bool:
        return self.coef.ndim == 3

    @property
    def ref_dim(self) -> int:
        return 2 if self.family is Family.LAGRANGE_TRI else 3

    # derived coefficient tensors -----------------------------------------
    def grad_coef(self) -> np.ndarray:
        if "grad" not in self._cache:
            self._cache["grad"] = poly.gradient(self.coef, self.poly_degree, self.ref_dim)
        return self._cache["grad"]

    def curl_coef(self) -> np.ndarray:
        if "curl" not in self._cache:
            self._cache["curl"] = poly.curl(self.coef, self.poly_degree)
        return self._cache["curl"]

    def div_coef(self) -> np.ndarray:
        if "div" not in self._cache:
            self._cache["div"] = poly.divergence(self.coef, self.poly_degree)
        return self._cache["div"]

    def curl_jacobian_coef(self) -> np.ndarray:
        if "curljac" not in self._cache:
            self._cache["curljac"] = poly.jacobian(self.curl_coef(), self.poly_degree)
        return self._cache["curljac"]

    # evaluation -------------------------------------------------------------
    def values(self, points) -> np.ndarray:
        return poly.evaluate(self.coef, points, self.poly_degree)

    def grads(self, points) -> np.ndarray:
        return poly.evaluate(self.grad_coef(), points, self.poly_degree)

    def curls(self, points) -> np.ndarray:
        return poly.evaluate(self.curl_coef(), points, self.poly_degree)

    def divs(self, points) -> np.ndarray:
        return poly.evaluate(self.div_coef(), points, self.poly_degree)

    def interpolate_reference(self, values: np.ndarray) -> np.ndarray:
        """Dof values of a reference field sampled at ``functionals.points``."""
        if not self.is_vector:
            values = values[..., None]
        return self.functionals.apply(values)


def _build(family: Family, k: int) -> ReferenceElement:
    dim = space_dimension(family, k)
    if k > MAX_DEGREE:
        raise BasisError(f"degree {k} above supported maximum {MAX_DEGREE}")

    if family in (Family.LAGRANGE_TET, Family.LAGRANGE_TRI):
        rd = 3 if family is Family.LAGRANGE_TET else 2
        p = k
        span = np.eye(len(poly.exponents(p, rd)))
        rule = (tet_quadrature if rd == 3 else tri_quadrature)(2 * p)
        S, rank = _orthonormalize(span, p, rule, 1)
        idx = _tet_node_indices(k) if rd == 3 else _tri_node_indices(k)
        verts = REF_VERTICES if rd == 3 else TRI_VERTICES
        if k == 0:
            nodes = verts.mean(axis=0, keepdims=True)
        else:
            nodes = np.array(idx, dtype=float) @ verts / k
        funcs = _stack_functionals([_point_block(nodes)], 1)
        entity_dofs = _lagrange_entity_dofs(idx, k, rd)
    elif family is Family.NEDELEC1_TET:
        p = k
        exps = poly.exponents(p)
        m = len(exps)
        low = np.where(exps.sum(axis=1) <= k - 1)[0]
        hom = np.where(exps.sum(axis=1) == k - 1)[0]
        cols = []
        for c in range(3):
            for i in low:
                v = np.zeros((m, 3))
                v[i, c] = 1.0
                cols.append(v)
        X = [poly.coordinate_matrix(p, a) for a in range(3)]
        for c in range(3):
            for i in hom:
                w = np.zeros(m)
                w[i] = 1.0
                # x cross (e_c w)
                e = np.eye(3)[c]
                v = np.zeros((m, 3))
                for a in range(3):
                    xw = X[a] @ w
                    for b in range(3):
                        # (x cross e)_b = sum_a eps_{b a c'} x_a e_c'
                        eps = np.cross(np.eye(3)[a], e)[b]
                        if eps:
                            v[:, b] += eps * xw
                cols.append(v)
        span = np.array(cols)
        S, rank = _orthonormalize(span, p, tet_quadrature(2 * p), 3)
        blocks = [_edge_moment_block(k, i, j) for i, j in LOCAL_EDGES]
        if k >= 2:
            blocks += [_face_tangent_block(k, f) for f in LOCAL_FACES]
        if k >= 3:
            blocks.append(_interior_vector_block(k, k - 3))
        funcs = _stack_functionals(blocks, 3)
        ne, nf = k, k * (k - 1)
        entity_dofs = _moment_entity_dofs(0, ne, nf, dim - 6 * ne - 4 * nf)
        nodes, idx = None, None
    elif family is Family.RAVIART_THOMAS_TET:
        p = k
        exps = poly.exponents(p)
        m = len(exps)
        low = np.where(exps.sum(axis=1) <= k - 1)[0]
        hom = np.where(exps.sum(axis=1) == k - 1)[0]
        cols = []
        for c in range(3):
            for i in low:
                v = np.zeros((m, 3))
                v[i, c] = 1.0
                cols.append(v)
        for i in hom:
            w = np.zeros(m)
            w[i] = 1.0
            cols.append(np.stack([poly.coordinate_matrix(p, a) @ w for a in range(3)], axis=-1))
        span = np.array(cols)
        S, rank = _orthonormalize(span, p, tet_quadrature(2 * p), 3)
        blocks = [_face_normal_block(k, f) for f in LOCAL_FACES]
        if k >= 2:
            blocks.append(_interior_vector_block(k, k - 2))
        funcs = _stack_functionals(blocks, 3)
        nf = k * (k + 1) // 2
        entity_dofs = _moment_entity_dofs(0, 0, nf, dim - 4 * nf)
        nodes, idx = None, None
    else:  # pragma: no cover
        raise BasisError(family)

    if rank != dim:
        raise BasisError(
            f"{family.value}({k}): spanning set has rank {rank}, expected {dim}"
        )
    vals = poly.evaluate(S, funcs.points, p)
    if vals.ndim == 2:
        vals = vals[..., None]
    V = np.einsum("lpc,psc->ls", funcs.weights, vals)  # (nL, nS)
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > 1e12:
        raise BasisError(f"{family.value}({k}): ill-conditioned dual basis (cond={cond:.2e})")
    coef = np.tensordot(np.linalg.inv(V).T, S, axes=([1], [0]))
    # one step of iterative refinement of the duality L_l(phi_b) = delta_lb
    vals = poly.evaluate(coef, funcs.points, p)
    if vals.ndim == 2:
        vals = vals[..., None]
    E = np.einsum("lpc,pbc->lb", funcs.weights, vals) - np.eye(dim)
    coef = coef - np.tensordot(E.T, coef, axes=([1], [0]))
    coef.setflags(write=False)
    return ReferenceElement(
        family=family,
        degree=k,
        poly_degree=p,
        coef=coef,
        entity_dofs=entity_dofs,
        functionals=funcs,
        nodes=nodes,
        node_indices=tuple(idx) if idx is not None else None,
    )


def _lagrange_entity_dofs(idx, k: int, rd: int) -> dict:
    nv = rd + 1
    edges = LOCAL_EDGES if rd == 3 else TRI_EDGES
    ent = {0: [[] for _ in range(nv)], 1: [[] for _ in edges]}
    if rd == 3:
        ent[2] = [[] for _ in LOCAL_FACES]
        ent[3] = [[]]
    else:
        ent[2] = [[]]
    if k == 0:
        ent[rd][0].append(0)
        return ent
    for n, a in enumerate(idx):
        support = tuple(i for i in range(nv) if a[i] > 0)
        d = len(support) - 1
        if d == 0:
            ent[0][support[0]].append(n)
        elif d == 1:
            ent[1][edges.index(support)].append(n)
        elif d == 2 and rd == 3:
            ent[2][[tuple(sorted(f)) for f in LOCAL_FACES].index(support)].append(n)
        else:
            ent[rd][0].append(n)
    return ent


def _moment_entity_dofs(nv: int, ne: int, nf: int, ni: int) -> dict:
    ent = {0: [[] for _ in range(4)], 1: [], 2: [], 3: []}
    n = 0
    for _ in LOCAL_EDGES:
        ent[1].append(list(range(n, n + ne)))
        n += ne
    for _ in LOCAL_FACES:
        ent[2].append(list(range(n, n + nf)))
        n += nf
    ent[3].append(list(range(n, n + ni)))
    return ent


@lru_cache(maxsize=None)
def reference_element(family: Family | str, k: int) -> ReferenceElement:
    return _build(Family(family), int(k))


@dataclass(frozen=True)
class BasisTable:
    """Reference basis tabulated at the points of a quadrature rule.

    ``values`` has shape (nq, nb) or (nq, nb, 3); ``derived`` holds gradients
    (Lagrange), curls (Nedelec) or divergences (Raviart-Thomas).
    """

    family: Family
    degree: int
    rule: QuadratureRule
    values: np.ndarray
    derived: np.ndarray
    node_coordinates: np.ndarray | None

    @property
    def cardinality(self) -> int:
        return self.values.shape[1]


def reference_basis(family: Family | str, k: int, rule: QuadratureRule) -> BasisTable:
    el = reference_element(family, k)
    pts = rule.points
    vals = el.values(pts)
    if el.family is Family.NEDELEC1_TET:
        der = el.curls(pts)
    elif el.family is Family.RAVIART_THOMAS_TET:
        der = el.divs(pts)
    else:
        der = el.grads(pts)
    return BasisTable(el.family, k, rule, vals, der, el.nodes)


@lru_cache(maxsize=None)
def tri_to_tet_face_nodes(k: int) -> np.ndarray:
    """For each local tet face, the tet Lagrange node of every triangle node.

    Row ``f`` maps the ``LagrangeTri(k)`` node numbering on local face
    ``LOCAL_FACES[f]`` (vertices taken in sorted order) to ``LagrangeTet(k)``
    local node indices.
    """
    tet = {a: n for n, a in enumerate(_tet_node_indices(k))}
    tri = _tri_node_indices(k)
    out = np.zeros((4, len(tri)), dtype=np.int64)
    for f, face in enumerate(LOCAL_FACES):
        for n, b in enumerate(tri):
            a = [0, 0, 0, 0]
            for loc, v in enumerate(face):
                a[v] = b[loc]
            out[f, n] = tet[tuple(a)]
    out.setflags(write=False)
    return out

"""Reference integrals of basis products.

For an affine cell, an integral of a product of mapped basis functions
equals a contraction ``sum_ij G[i, j] R[a, b, i, j]`` of a reference
tensor ``R`` with a 3x3 cell metric ``G``: ``J^{-1} J^{-T}`` for products of
covariant or gradient fields, ``J^T J`` for products of Piola-mapped
curls. These tensors are computed once per degree.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import polynomials as poly
from .elements import Family, orthonormal_scalar_basis, reference_element
from .quadrature import tet_quadrature


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def nedelec_mass(k: int) -> np.ndarray:
    rule = tet_quadrature(2 * k)
    N = reference_element(Family.NEDELEC1_TET, k).values(rule.points)
    return _frozen(np.einsum("q,qai,qbj->abij", rule.weights, N, N))


@lru_cache(maxsize=None)
def nedelec_curlcurl(k: int) -> np.ndarray:
    rule = tet_quadrature(2 * k)
    C = reference_element(Family.NEDELEC1_TET, k).curls(rule.points)
    return _frozen(np.einsum("q,qai,qbj->abij", rule.weights, C, C))


@lru_cache(maxsize=None)
def nedelec_lagrange_coupling(k: int, m: int) -> np.ndarray:
    """``int N_a,i dpsi_c/dx_j`` for Nedelec degree ``k`` and Lagrange degree ``m``."""
    rule = tet_quadrature(k + m)
    N = reference_element(Family.NEDELEC1_TET, k).values(rule.points)
    G = reference_element(Family.LAGRANGE_TET, m).grads(rule.points)
    return _frozen(np.einsum("q,qai,qcj->acij", rule.weights, N, G))


@lru_cache(maxsize=None)
def nedelec_orthonormal_coupling(k: int, m: int) -> np.ndarray:
    """``int N_a,i dq_c/dx_j`` with ``q`` the non-constant orthonormal P_m basis."""
    rule = tet_quadrature(k + m)
    N = reference_element(Family.NEDELEC1_TET, k).values(rule.points)
    qc = orthonormal_scalar_basis(m, 3)[1:]
    G = poly.evaluate(poly.gradient(qc, m), rule.points, m)
    return _frozen(np.einsum("q,qai,qcj->acij", rule.weights, N, G))


@lru_cache(maxsize=None)
def orthonormal_stiffness(m: int) -> np.ndarray:
    """``int dq_a/dx_i dq_b/dx_j`` for the non-constant orthonormal P_m basis."""
    rule = tet_quadrature(max(2 * m - 2, 0))
    qc = orthonormal_scalar_basis(m, 3)[1:]
    G = poly.evaluate(poly.gradient(qc, m), rule.points, m)
    return _frozen(np.einsum("q,qai,qbj->abij", rule.weights, G, G))


@lru_cache(maxsize=None)
def lagrange_stiffness(k: int) -> np.ndarray:
    rule = tet_quadrature(max(2 * k - 2, 0))
    G = reference_element(Family.LAGRANGE_TET, k).grads(rule.points)
    return _frozen(np.einsum("q,qai,qbj->abij", rule.weights, G, G))


def contract(metric: np.ndarray, tensor: np.ndarray) -> np.ndarray:
    """``sum_ij metric[t, i, j] tensor[a, b, i, j]`` -> (nt, na, nb)."""
    na, nb = tensor.shape[:2]
    return (metric.reshape(-1, 9) @ tensor.reshape(na * nb, 9).T).reshape(-1, na, nb)


def symmetrize(loc: np.ndarray) -> np.ndarray:
    return 0.5 * (loc + np.transpose(loc, (0, 2, 1)))

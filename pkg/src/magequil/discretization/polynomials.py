"""Monomial coefficient algebra on reference coordinates.

A scalar polynomial of total degree ``<= p`` in ``dim`` variables is a
coefficient vector over ``exponents(p, dim)``; vector fields carry a trailing
component axis. Differentiation and multiplication by a coordinate are
linear maps on these coefficients, which lets every basis family be built
from its definitional form and differentiated exactly.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import product

import numpy as np


@lru_cache(maxsize=None)
def exponents(p: int, dim: int = 3) -> np.ndarray:
    """Exponent tuples of total degree ``<= p``, sorted by degree then lexicographically."""
    exps = [e for e in product(range(p + 1), repeat=dim) if sum(e) <= p]
    exps.sort(key=lambda e: (sum(e), tuple(-x for x in e)))
    arr = np.array(exps, dtype=np.int64).reshape(-1, dim)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def _index(p: int, dim: int) -> dict:
    return {tuple(e): i for i, e in enumerate(exponents(p, dim))}


def homogeneous_mask(p: int, degree: int, dim: int = 3) -> np.ndarray:
    return exponents(p, dim).sum(axis=1) == degree


def monomials(points: np.ndarray, p: int) -> np.ndarray:
    """Evaluate all monomials of degree ``<= p`` at ``points`` (..., dim) -> (..., m)."""
    points = np.asarray(points, dtype=float)
    dim = points.shape[-1]
    exps = exponents(p, dim)
    powers = np.ones(points.shape[:-1] + (dim, p + 1))
    for d in range(1, p + 1):
        powers[..., d] = powers[..., d - 1] * points
    out = np.ones(points.shape[:-1] + (len(exps),))
    for axis in range(dim):
        out = out * powers[..., axis, exps[:, axis]]
    return out


@lru_cache(maxsize=None)
def derivative_matrix(p: int, axis: int, dim: int = 3) -> np.ndarray:
    """Matrix D with ``coef(d/dx_axis f) = D @ coef(f)``."""
    exps = exponents(p, dim)
    idx = _index(p, dim)
    D = np.zeros((len(exps), len(exps)))
    for j, e in enumerate(exps):
        if e[axis] == 0:
            continue
        f = list(e)
        f[axis] -= 1
        D[idx[tuple(f)], j] = e[axis]
    D.setflags(write=False)
    return D


@lru_cache(maxsize=None)
def coordinate_matrix(p: int, axis: int, dim: int = 3) -> np.ndarray:
    """Matrix X with ``coef(x_axis * f) = X @ coef(f)`` for ``deg f <= p - 1``."""
    exps = exponents(p, dim)
    idx = _index(p, dim)
    X = np.zeros((len(exps), len(exps)))
    for j, e in enumerate(exps):
        if sum(e) >= p:
            continue
        f = list(e)
        f[axis] += 1
        X[idx[tuple(f)], j] = 1.0
    X.setflags(write=False)
    return X


def gradient(coef: np.ndarray, p: int, dim: int = 3) -> np.ndarray:
    """Gradient of scalar polynomials: (..., m) -> (..., m, dim)."""
    return np.stack(
        [coef @ derivative_matrix(p, a, dim).T for a in range(dim)], axis=-1
    )


def jacobian(coef: np.ndarray, p: int) -> np.ndarray:
    """Jacobian of 3-vector polynomials: (..., m, 3) -> (..., m, 3, 3), entry [i, j] = d f_i / d x_j."""
    return np.stack(
        [np.einsum("nm,...mi->...ni", derivative_matrix(p, a), coef) for a in range(3)],
        axis=-1,
    )


def curl(coef: np.ndarray, p: int) -> np.ndarray:
    """Curl of 3-vector polynomials: (..., m, 3) -> (..., m, 3)."""
    J = jacobian(coef, p)
    return np.stack(
        [
            J[..., 2, 1] - J[..., 1, 2],
            J[..., 0, 2] - J[..., 2, 0],
            J[..., 1, 0] - J[..., 0, 1],
        ],
        axis=-1,
    )


def divergence(coef: np.ndarray, p: int) -> np.ndarray:
    """Divergence of 3-vector polynomials: (..., m, 3) -> (..., m)."""
    J = jacobian(coef, p)
    return J[..., 0, 0] + J[..., 1, 1] + J[..., 2, 2]


def evaluate(coef: np.ndarray, points: np.ndarray, p: int) -> np.ndarray:
    """Evaluate polynomials: coef (nb, m, *comp), points (npts, dim) -> (npts, nb, *comp)."""
    V = monomials(points, p)
    return np.tensordot(V, coef, axes=([1], [1]))

"""Positive-weight quadrature on the reference simplices.

Rules are collapsed (conical) Gauss-Jacobi products: a Gauss rule in each
coordinate of the unit cube, mapped onto the simplex by the Duffy
transform. The Jacobian factors are absorbed into the Jacobi weights, so
all weights are strictly positive and a rule with ``n`` points per
direction integrates polynomials of total degree ``2n - 1`` exactly.

Reference domains:

* interval ``[0, 1]``
* triangle with vertices ``(0,0), (1,0), (0,1)`` (area 1/2)
* tetrahedron with vertices ``(0,0,0), (1,0,0), (0,1,0), (0,0,1)`` (volume 1/6)
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_ORDER = 20


class QuadratureError(ValueError):
    """Raised for unsupported quadrature orders."""


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights on a reference simplex.

    Attributes
    ----------
    points : ndarray, shape (nq, dim)
        Reference coordinates.
    weights : ndarray, shape (nq,)
        Positive weights summing to the reference measure.
    exactness_degree : int
        Total polynomial degree integrated exactly.
    """

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.weights)


def _gauss_jacobi01(n: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule on [0, 1] for the weight (1 - t)**alpha."""
    x, w = roots_jacobi(n, alpha, 0.0)
    t = 0.5 * (1.0 + x)
    return t, w / 2.0 ** (alpha + 1)


def _points_per_direction(order: int) -> int:
    if not isinstance(order, (int, np.integer)) or order < 0 or order > MAX_ORDER:
        raise QuadratureError(f"unsupported quadrature order {order!r} (0..{MAX_ORDER})")
    return max(1, (int(order) + 2) // 2)


@lru_cache(maxsize=None)
def line_quadrature(order: int) -> QuadratureRule:
    n = _points_per_direction(order)
    t, w = _gauss_jacobi01(n, 0.0)
    pts = t[:, None]
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, 2 * n - 1)


@lru_cache(maxsize=None)
def tri_quadrature(order: int) -> QuadratureRule:
    """Rule on the reference triangle exact to total degree ``>= order``."""
    n = _points_per_direction(order)
    a, wa = _gauss_jacobi01(n, 1.0)
    b, wb = _gauss_jacobi01(n, 0.0)
    A, B = np.meshgrid(a, b, indexing="ij")
    W = np.outer(wa, wb)
    pts = np.column_stack([A.ravel(), (B * (1.0 - A)).ravel()])
    w = W.ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, 2 * n - 1)


@lru_cache(maxsize=None)
def tet_quadrature(order: int) -> QuadratureRule:
    """Rule on the reference tetrahedron exact to total degree ``>= order``."""
    n = _points_per_direction(order)
    a, wa = _gauss_jacobi01(n, 2.0)
    b, wb = _gauss_jacobi01(n, 1.0)
    c, wc = _gauss_jacobi01(n, 0.0)
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    W = wa[:, None, None] * wb[None, :, None] * wc[None, None, :]
    x = A
    y = B * (1.0 - A)
    z = C * (1.0 - A) * (1.0 - B)
    pts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    w = W.ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, 2 * n - 1)

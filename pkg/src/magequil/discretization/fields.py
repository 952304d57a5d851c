"""Broken polynomial fields stored per cell in reference monomials.

A vector field on cell ``t`` is ``L_t @ c_t(xhat)`` where ``c_t`` is a
polynomial in the reference coordinates of the sorted-vertex map and
``L_t`` a constant 3x3 factor (``J^{-T}`` for covariant fields,
``J / det J`` for Piola fields, possibly scaled by ``1/mu``). Scalar fields
are plain reference polynomials. Physical derivatives follow from
``d/dx = (d/dxhat) J^{-1}``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import polynomials as poly
from .quadrature import tet_quadrature


def _chunks(n: int, size: int):
    for s in range(0, n, size):
        yield slice(s, min(n, s + size))


@dataclass(frozen=True, eq=False)
class CellVectorField:
    """Piecewise polynomial vector field, shape of ``coef`` is (NT, m, 3)."""

    coef: np.ndarray
    degree: int
    factor: np.ndarray
    Jinv: np.ndarray

    @property
    def num_cells(self) -> int:
        return self.coef.shape[0]

    def values(self, ref_points: np.ndarray, cells=slice(None)) -> np.ndarray:
        """Values at reference points shared by all cells: (nc, nq, 3)."""
        V = poly.monomials(ref_points, self.degree)
        c = V @ self.coef[cells]
        return c @ np.swapaxes(self.factor[cells], 1, 2)

    def values_at(self, cells: np.ndarray, ref_points: np.ndarray) -> np.ndarray:
        """Values at per-cell reference points ``ref_points`` (nc, nq, 3)."""
        V = poly.monomials(ref_points, self.degree)
        c = V @ self.coef[cells]
        return c @ np.swapaxes(self.factor[cells], 1, 2)

    def jacobian(self, ref_points: np.ndarray, cells=slice(None)) -> np.ndarray:
        """Physical Jacobian ``dF_i/dx_j`` at shared reference points: (nc, nq, 3, 3)."""
        dc = poly.jacobian(self.coef[cells], self.degree)  # (nc, m, 3, 3)
        V = poly.monomials(ref_points, self.degree)
        nc, m = dc.shape[:2]
        d = (V @ dc.reshape(nc, m, 9)).reshape(nc, -1, 3, 3)
        return self.factor[cells][:, None] @ d @ self.Jinv[cells][:, None]

    def curl(self, ref_points: np.ndarray, cells=slice(None)) -> np.ndarray:
        D = self.jacobian(ref_points, cells)
        return np.stack(
            [D[..., 2, 1] - D[..., 1, 2], D[..., 0, 2] - D[..., 2, 0], D[..., 1, 0] - D[..., 0, 1]],
            axis=-1,
        )

    def divergence(self, ref_points: np.ndarray, cells=slice(None)) -> np.ndarray:
        D = self.jacobian(ref_points, cells)
        return np.trace(D, axis1=-2, axis2=-1)

    def __add__(self, other: "CellVectorField") -> "CellVectorField":
        return SumField((self, other))


@dataclass(frozen=True, eq=False)
class SumField:
    """Sum of broken vector fields evaluated term by term."""

    terms: tuple

    @property
    def num_cells(self) -> int:
        return self.terms[0].num_cells

    def values(self, ref_points, cells=slice(None)):
        return sum(t.values(ref_points, cells) for t in self.terms)

    def values_at(self, cells, ref_points):
        return sum(t.values_at(cells, ref_points) for t in self.terms)

    def jacobian(self, ref_points, cells=slice(None)):
        return sum(t.jacobian(ref_points, cells) for t in self.terms)

    def curl(self, ref_points, cells=slice(None)):
        return sum(t.curl(ref_points, cells) for t in self.terms)

    def __add__(self, other):
        return SumField(self.terms + (other,))


@dataclass(frozen=True, eq=False)
class CellScalarField:
    """Piecewise polynomial scalar field, ``coef`` has shape (NT, m)."""

    coef: np.ndarray
    degree: int
    Jinv: np.ndarray

    @property
    def num_cells(self) -> int:
        return self.coef.shape[0]

    def values(self, ref_points: np.ndarray, cells=slice(None)) -> np.ndarray:
        return np.einsum("qm,tm->tq", poly.monomials(ref_points, self.degree), self.coef[cells])

    def values_at(self, cells, ref_points) -> np.ndarray:
        return np.einsum("tqm,tm->tq", poly.monomials(ref_points, self.degree), self.coef[cells])

    def gradient_field(self) -> CellVectorField:
        """Broken physical gradient as a covariant vector field."""
        g = poly.gradient(self.coef, self.degree)  # (NT, m, 3)
        return CellVectorField(g, self.degree, np.transpose(self.Jinv, (0, 2, 1)), self.Jinv)

    def gradient(self, ref_points, cells=slice(None)) -> np.ndarray:
        return self.gradient_field().values(ref_points, cells)


def weighted_norms(mesh, field, weight=None, order: int | None = None, chunk: int = 4096):
    """Per-cell ``(sum_q w |det J| weight |F|^2)`` for a broken vector field."""
    deg = getattr(field, "degree", None)
    if order is None:
        order = 2 * max(t.degree for t in field.terms) if deg is None else 2 * deg
    rule = tet_quadrature(min(order, 20))
    g = mesh.geometry
    w = mesh.cell_mu if weight is None else weight
    out = np.empty(mesh.num_cells)
    for sl in _chunks(mesh.num_cells, chunk):
        v = field.values(rule.points, sl)
        out[sl] = np.einsum("q,tq->t", rule.weights, np.einsum("tqi,tqi->tq", v, v)) * g.absdet[sl] * w[sl]
    return out

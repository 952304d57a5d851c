"""The benchmark problems and helpers for error reporting."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..mesh import TetMesh, l_brick_mesh, unit_cube_mesh
from . import _exact

Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Problem:
    """Benchmark definition.

    Attributes
    ----------
    name : str
    make_mesh : callable
        ``make_mesh(kind)`` returns the initial mesh, with ``kind`` one of
        ``"default"`` (adaptive/uniform runs) or ``"fixed"`` (degree sweeps).
    mu_rule : callable
        Maps cell centroids (NT, 3) to permeabilities.
    j : callable
        Current density, (..., 3) -> (..., 3); divergence free.
    H, u : callable or None
        Exact magnetic field and vector potential where known.
    """

    name: str
    make_mesh: Callable[[str], TetMesh]
    mu_rule: Callable[[np.ndarray], np.ndarray]
    j: Field
    H: Optional[Field] = None
    u: Optional[Field] = None
    singular_edge: bool = False
    params: tuple = ()

    def initial_mesh(self, kind: str = "default") -> TetMesh:
        m = self.make_mesh(kind)
        return m.with_mu(self.mu_rule(m.centroids))

    @property
    def has_exact(self) -> bool:
        return self.H is not None


def _unit_mu(c):
    return np.ones(len(c))


def _cube_mesh(default_scheme, default_n):
    def make(kind):
        if kind == "fixed":
            return unit_cube_mesh("center24", 1)
        return unit_cube_mesh(default_scheme, default_n)

    return make


def _guard_edge(f: Field) -> Field:
    def g(p):
        p = np.asarray(p, dtype=float)
        if np.any(np.hypot(p[..., 0], p[..., 1]) < 1e-14):
            raise ValueError("field is singular on the edge r = 0")
        return f(p)

    return g


def _constant_j(p):
    p = np.asarray(p, dtype=float)
    out = np.zeros(p.shape)
    out[..., 0] = 1.0
    return out


def disc_mu_rule(mu2: float, mu1: float = 1.0):
    def rule(c):
        inside = (c[:, 1] < 0.5) & (c[:, 2] < 0.5)
        return np.where(inside, mu1, mu2)

    return rule


def catalog(ell: int = 1) -> dict[str, Problem]:
    """All benchmark problems; ``ell`` sets the contrast ``mu2 = 10**ell`` of ``disc_mu``."""
    return {
        "cube_poly": Problem(
            "cube_poly", _cube_mesh("kuhn6", 2), _unit_mu,
            _exact.cube_poly_j, _exact.cube_poly_H, _exact.cube_poly_u,
        ),
        "cube_sine": Problem(
            "cube_sine", _cube_mesh("kuhn6", 2), _unit_mu,
            _exact.cube_sine_j, _exact.cube_sine_H, _exact.cube_sine_u,
        ),
        "lbrick_singular": Problem(
            "lbrick_singular", lambda kind: l_brick_mesh(), _unit_mu,
            _guard_edge(_exact.lbrick_singular_j), _guard_edge(_exact.lbrick_singular_H),
            _guard_edge(_exact.lbrick_singular_u), singular_edge=True,
        ),
        "disc_mu": Problem(
            "disc_mu", lambda kind: unit_cube_mesh("kuhn6", 2), disc_mu_rule(10.0 ** ell),
            _constant_j, params=(("ell", ell),),
        ),
    }


def get_problem(name: str, ell: int = 1) -> Problem:
    cat = catalog(ell)
    if name not in cat:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(cat)}")
    return cat[name]


def evaluate_exact(problem: Problem, what: str, point) -> np.ndarray:
    """Closed-form ``u``, ``H`` or ``j`` at ``point`` (..., 3)."""
    if what not in ("u", "H", "j"):
        raise ValueError(f"unknown field {what!r}")
    f = getattr(problem, what)
    if f is None:
        raise ValueError(f"{problem.name} has no exact {what}")
    return f(np.asarray(point, dtype=float))


def efficiency_index(eta: float, error: float) -> float:
    """``eta / error``; NaN flags a zero or undefined error."""
    if not np.isfinite(error) or error <= 0.0:
        return float("nan")
    return float(eta) / float(error)

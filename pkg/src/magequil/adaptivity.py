"""Bulk marking and the solve, estimate, mark, refine loop."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .benchmarks.problems import Problem, efficiency_index
from .discretization.dofmap import dof_map
from .discretization.elements import Family
from .discretization.quadrature import tet_quadrature
from .equilibration import Equilibration, estimate
from .mesh import TetMesh
from .refine import bisect, uniform_refine
from .system import (
    DiscreteFields,
    SolverError,
    assemble_system,
    correction_field,
    discrete_fields,
    energy_error,
    solve_system,
)

log = logging.getLogger(__name__)


class AdaptivityError(RuntimeError):
    """A level of the loop failed; ``level`` names it."""

    def __init__(self, level: int, message: str):
        super().__init__(f"level {level}: {message}")
        self.level = level


# ---------------------------------------------------------------------------
# marking


def dorfler_mark(indicators, theta: float) -> np.ndarray:
    """Smallest prefix of cells, by descending indicator, carrying ``theta`` of the total.

    Parameters
    ----------
    indicators : array_like
        Squared indicators ``eta_T**2``.
    theta : float
        Bulk fraction, ``0 < theta <= 1``.

    Returns
    -------
    ndarray of int
        Marked cells in selection order; ties are broken by cell index.
    """
    v = np.asarray(indicators, dtype=float).ravel()
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError("indicators must be finite and nonnegative")
    total = v.sum()
    if total == 0.0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(len(v)), -v))
    if theta == 1.0:
        return order[v[order] > 0]
    csum = np.cumsum(v[order])
    n = int(np.searchsorted(csum, theta * total, side="left")) + 1
    return order[: min(n, len(v))]


# ---------------------------------------------------------------------------
# records


@dataclass
class AdaptiveRecord:
    """One level of a convergence study."""

    level: int
    NT: int
    N_h: int
    error: float
    eta: float
    mu: float
    eta_legacy: float
    eff_index: float
    seconds: float
    diagnostics: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {
            "level": self.level,
            "NT": self.NT,
            "N_h": self.N_h,
            "error": self.error,
            "eta": self.eta,
            "mu": self.mu,
            "eta_legacy": self.eta_legacy,
            "eff_index": self.eff_index,
            "seconds": self.seconds,
        }


@dataclass(frozen=True, eq=False)
class LevelState:
    """Mesh and discrete solution of one level; ``parents`` maps cells to the previous level."""

    mesh: TetMesh
    fields: DiscreteFields
    estimate: Equilibration
    parents: np.ndarray | None


def nedelec_dimension(mesh: TetMesh, k: int) -> int:
    """``dim R_k`` on ``mesh`` without boundary conditions."""
    return dof_map(mesh, mesh.topology, Family.NEDELEC1_TET, k).num_dofs


def local_efficiency(mesh: TetMesh, eta_T: np.ndarray, err2_T: np.ndarray) -> float:
    """``max_T eta_T / ||error||_{omega_T}`` with ``omega_T`` the cells sharing a vertex with T."""
    nt, nv = mesh.num_cells, mesh.num_vertices
    inc = sp.csr_matrix((np.ones(4 * nt), (np.repeat(np.arange(nt), 4), mesh.cells.ravel())), (nt, nv))
    adj = (inc @ inc.T).tocsr()
    adj.data[:] = 1.0
    nb = adj @ err2_T
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(nb > 0, eta_T / np.sqrt(nb), np.nan)
    return float(np.nanmax(r)) if np.isfinite(r).any() else float("nan")


# ---------------------------------------------------------------------------
# the loop


@dataclass
class LoopSettings:
    """Parameters of :func:`adaptive_loop` (see the CLI configuration)."""

    k: int
    kp: int | None = None
    theta: float = 0.5
    dof_budget: int = 10**5
    mode: str = "adaptive"
    max_levels: int | None = None
    solver: str = "direct"
    tol: float = 1e-10
    compatibility_correction: bool = True
    load_order: int | None = None
    error_order: int | None = None
    mesh_kind: str = "default"

    def __post_init__(self):
        if self.kp is None:
            self.kp = self.k
        if not 1 <= self.k <= self.kp <= 6:
            raise ValueError(f"need 1 <= k <= k' <= 6, got k={self.k}, k'={self.kp}")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        if self.dof_budget < 1:
            raise ValueError("dof_budget must be at least 1")
        if self.mode not in ("uniform", "adaptive"):
            raise ValueError(f"mode must be 'uniform' or 'adaptive', got {self.mode!r}")


def solve_level(problem: Problem, mesh: TetMesh, s: LoopSettings):
    """Assemble, solve and estimate on one mesh."""
    order = 2 * (s.kp + 1) + 2 if s.load_order is None else s.load_order
    system = assemble_system(mesh, mesh.topology, s.k, problem.j, order, s.compatibility_correction)
    u, p = solve_system(system, s.solver, s.tol)
    fields = discrete_fields(mesh, u)
    est = estimate(
        mesh, mesh.topology, problem.j, fields.H, fields.j, s.k, s.kp,
        correction=correction_field(system),
    )
    return system, u, p, fields, est


def _error(problem: Problem, mesh: TetMesh, fields: DiscreteFields, s: LoopSettings):
    if not problem.has_exact:
        return float("nan"), None
    order = 2 * s.kp + 8 if s.error_order is None else s.error_order
    return energy_error(mesh, fields.H, problem.H, order)


def adaptive_loop(
    problem: Problem,
    settings: LoopSettings,
    on_level: Callable[[AdaptiveRecord, LevelState], None] | None = None,
    keep_states: bool = False,
    mesh: TetMesh | None = None,
):
    """Run solve, estimate, mark, refine until the dof budget is exceeded.

    Returns
    -------
    records : list of AdaptiveRecord
    states : list of LevelState
        Only with ``keep_states=True``; otherwise the final state alone.
    """
    s = settings
    mesh = problem.initial_mesh(s.mesh_kind) if mesh is None else mesh
    records: list[AdaptiveRecord] = []
    states: list[LevelState] = []
    parents = None
    level = 0
    while True:
        n_h = nedelec_dimension(mesh, s.k)
        if n_h > s.dof_budget and level > 0:
            break
        if s.max_levels is not None and level >= s.max_levels:
            break
        t0 = time.perf_counter()
        try:
            system, u, p, fields, est = solve_level(problem, mesh, s)
        except (SolverError, np.linalg.LinAlgError, ValueError) as exc:
            raise AdaptivityError(level, str(exc)) from exc
        err, err_T = _error(problem, mesh, fields, s)
        rep = est.report
        diag = dict(rep.diagnostics)
        diag.update(
            solver_residual=system.info.get("relative_residual"),
            solver_seconds=system.info.get("solve_seconds"),
            gauge_residual=_gauge_residual(system, u),
            multiplier_max=float(np.abs(p.values).max(initial=0.0)),
            n_u=system.n_u,
            n_p=system.n_p,
            estimator_seconds=dict(rep.timings),
        )
        if err_T is not None:
            diag["local_efficiency"] = local_efficiency(mesh, rep.eta_T, err_T)
        rec = AdaptiveRecord(
            level, mesh.num_cells, n_h, err, rep.eta, rep.mu, rep.eta_legacy,
            efficiency_index(rep.eta, err), time.perf_counter() - t0, diag,
        )
        state = LevelState(mesh, fields, est, parents)
        records.append(rec)
        if keep_states:
            states.append(state)
        else:
            states = [state]
        log.info("level %d NT=%d N_h=%d eta=%.4e err=%.4e", level, rec.NT, n_h, rep.eta, err)
        if on_level is not None:
            on_level(rec, state)
        if n_h >= s.dof_budget:
            break
        if s.mode == "uniform":
            mesh, parents = uniform_refine(mesh, return_parents=True)
        else:
            marked = dorfler_mark(rep.eta_T**2, s.theta)
            if len(marked) == 0:
                break
            mesh, parents = bisect(mesh, marked, return_parents=True)
        level += 1
    return records, states


def _gauge_residual(system, u) -> float:
    """``max |(u_h, grad psi)|`` over the multiplier basis, scaled by ``||b|| + ||A||_max ||u||``."""
    if system.n_p == 0:
        return 0.0
    scale = np.linalg.norm(system.load) + abs(system.A).max() * np.linalg.norm(u.values)
    return float(np.abs(system.B @ u.values).max() / scale) if scale > 0 else 0.0


def observed_rates(records: list[AdaptiveRecord], last: int | None = None) -> np.ndarray:
    """Rates ``-d log(error) / d log(N_h)`` between consecutive records."""
    n = np.array([r.N_h for r in records], dtype=float)
    e = np.array([r.error for r in records], dtype=float)
    if last is not None:
        n, e = n[-last:], e[-last:]
    return -np.diff(np.log(e)) / np.diff(np.log(n))


def fitted_rate(records: list[AdaptiveRecord], last: int, what: str = "error") -> float:
    """Least-squares slope of ``log(what)`` against ``log(N_h)`` over the last records."""
    rs = records[-last:]
    n = np.log([r.N_h for r in rs])
    y = np.log([getattr(r, what) for r in rs])
    return float(-np.polyfit(n, y, 1)[0])


# ---------------------------------------------------------------------------
# reference solution for problems without a closed form


def ancestor_maps(states: list[LevelState]) -> list[np.ndarray]:
    """For each level, the map from cells of the final mesh to cells of that level."""
    nt = states[-1].mesh.num_cells
    maps = [None] * len(states)
    cur = np.arange(nt)
    maps[-1] = cur
    for i in range(len(states) - 1, 0, -1):
        cur = states[i].parents[cur]
        maps[i - 1] = cur
    return maps


def errors_against_reference(
    states: list[LevelState], reference: LevelState, to_reference: list[np.ndarray], order: int
) -> list[float]:
    """``||mu^{1/2} (H_ref - H_h)||`` for each state, integrated on the reference mesh.

    Both fields are polynomial on every reference cell, so the quadrature is exact
    for ``order >= 2(k-1)``.
    """
    fine = reference.mesh
    rule = tet_quadrature(min(order, 20))
    g = fine.geometry
    out = []
    chunk = 4096
    for st, anc in zip(states, to_reference):
        tot = 0.0
        for a in range(0, fine.num_cells, chunk):
            sl = slice(a, min(a + chunk, fine.num_cells))
            x = g.to_physical(rule.points, sl)
            href = reference.fields.H.values(rule.points, sl)
            cc = anc[sl]
            ref_pts = st.mesh.geometry.to_reference(x, cc)
            d = href - st.fields.H.values_at(cc, ref_pts)
            tot += float(
                np.einsum("q,tqi,tqi,t->", rule.weights, d, d, g.absdet[sl] * fine.cell_mu[sl])
            )
        out.append(math.sqrt(max(tot, 0.0)))
    return out


def reference_solution(
    problem: Problem,
    states: list[LevelState],
    settings: LoopSettings,
    extra: int = 8,
    dof_budget: int | None = None,
):
    """Continue the adaptive loop ``extra`` levels past ``states[-1]``.

    Returns
    -------
    reference : LevelState
        Final state, used as the error reference.
    to_reference : list of ndarray
        For each base state, the ancestor index of every reference cell.
    levels_done : int
        Extra levels actually computed (fewer than ``extra`` if the budget ran out).
    """
    if extra < 0:
        raise ValueError("extra must be nonnegative")
    s = settings
    chain = [states[-1]]
    done = 0
    budget = dof_budget if dof_budget is not None else np.iinfo(np.int64).max
    while done < extra:
        marked = dorfler_mark(chain[-1].estimate.report.eta_T ** 2, s.theta)
        if len(marked) == 0:
            break
        mesh, parents = bisect(chain[-1].mesh, marked, return_parents=True)
        if nedelec_dimension(mesh, s.k) > budget:
            log.warning("reference stopped after %d of %d extra levels: budget", done, extra)
            break
        _, _, _, fields, est = solve_level(problem, mesh, s)
        chain.append(LevelState(mesh, fields, est, parents))
        done += 1
    full = list(states[:-1]) + chain
    maps = ancestor_maps(full)
    return chain[-1], maps[: len(states)], done

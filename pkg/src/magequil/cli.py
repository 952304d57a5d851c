"""Command line driver.

Usage::

    magequil run <config>
    magequil ksweep <config> --k 1,2,3,4
    magequil export-mesh <config> --level N

Configurations are plain ``key = value`` files with ``#`` comments. Relative
output directories are resolved against ``$MAGEQUIL_OUTPUT_ROOT`` (default:
the working directory).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .adaptivity import (
    AdaptiveRecord,
    AdaptivityError,
    LoopSettings,
    adaptive_loop,
    errors_against_reference,
    nedelec_dimension,
    reference_solution,
    solve_level,
)
from .benchmarks.problems import catalog, efficiency_index, get_problem
from .meshio import write_vtk
from .system import SolverError, energy_error

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "MAGEQUIL_OUTPUT_ROOT"
CSV_COLUMNS = ("level", "NT", "N_h", "error", "eta", "mu", "eta_legacy", "eff_index", "seconds")
KSWEEP_COLUMNS = ("k", "eff_index_eta", "eff_index_mu", "eff_index_eta_legacy")
CHECK_SUITES = ("solver", "constraints", "equilibrium", "reliability")

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid configuration text."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Validated run parameters; see :func:`parse_config` for the keys."""

    problem: str
    k: int
    kp: int
    mode: str = "adaptive"
    theta: float = 0.5
    dof_budget: int = 100_000
    levels: int | None = None
    mesh: str = "default"
    ell: int = 1
    load_quadrature: int | None = None
    error_quadrature: int | None = None
    solver: str = "direct"
    tol: float = 1e-10
    compatibility_correction: bool = True
    reference_extra: int = 8
    reference_budget: int | None = None
    checks: tuple[str, ...] = ("solver", "constraints")
    vtk: bool = False
    outdir: str = "out"
    seed: int = 0

    def settings(self, **overrides) -> LoopSettings:
        kw = dict(
            k=self.k, kp=self.kp, theta=self.theta, dof_budget=self.dof_budget,
            mode=self.mode, max_levels=self.levels, solver=self.solver, tol=self.tol,
            compatibility_correction=self.compatibility_correction,
            load_order=self.load_quadrature, error_order=self.error_quadrature,
            mesh_kind=self.mesh,
        )
        kw.update(overrides)
        return LoopSettings(**kw)

    def output_dir(self) -> Path:
        out = Path(self.outdir)
        if not out.is_absolute():
            out = Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / out
        return out

    def echo(self) -> dict:
        d = asdict(self)
        d["checks"] = list(self.checks)
        return d


def _bool(v: str) -> bool:
    s = v.lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _opt_int(v: str):
    return None if v.lower() in ("none", "auto", "") else int(v)


def _checks(v: str) -> tuple[str, ...]:
    items = tuple(s.strip() for s in v.split(",") if s.strip())
    if items == ("none",):
        return ()
    bad = [s for s in items if s not in CHECK_SUITES]
    if bad:
        raise ValueError(f"unknown check suite(s) {bad}; choose from {list(CHECK_SUITES)}")
    return items


_KEYS = {
    "problem": ("problem", str),
    "k": ("k", int),
    "k'": ("kp", int),
    "kp": ("kp", int),
    "mode": ("mode", str),
    "theta": ("theta", float),
    "dof_budget": ("dof_budget", int),
    "levels": ("levels", _opt_int),
    "mesh": ("mesh", str),
    "ell": ("ell", int),
    "load_quadrature": ("load_quadrature", _opt_int),
    "error_quadrature": ("error_quadrature", _opt_int),
    "solver": ("solver", str),
    "tol": ("tol", float),
    "compatibility_correction": ("compatibility_correction", _bool),
    "reference_extra": ("reference_extra", int),
    "reference_budget": ("reference_budget", _opt_int),
    "checks": ("checks", _checks),
    "vtk": ("vtk", _bool),
    "outdir": ("outdir", str),
    "seed": ("seed", int),
}


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines into a :class:`RunConfig`.

    Defaults: ``k' = k``, ``theta = 0.5``, ``solver = direct``, ``tol = 1e-10``.

    Raises
    ------
    ConfigError
        Unknown key, malformed line, duplicate key or out-of-range value; the
        message carries the line number.
    """
    values: dict[str, object] = {}
    where: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        name, conv = _KEYS[key]
        if name in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[name] = conv(val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
        where[name] = lineno

    def fail(name: str, msg: str):
        at = f"line {where[name]}: " if name in where else ""
        raise ConfigError(at + msg)

    if "problem" not in values:
        raise ConfigError("problem required")
    if "k" not in values:
        raise ConfigError("k required")
    if values["problem"] not in catalog():
        fail("problem", f"unknown problem {values['problem']!r}; choose from {sorted(catalog())}")
    values.setdefault("kp", values["k"])
    cfg = RunConfig(**values)
    if not 1 <= cfg.k <= 6:
        fail("k", f"k must lie in [1, 6], got {cfg.k}")
    if not cfg.k <= cfg.kp <= 6:
        fail("kp", f"k' must lie in [k, 6], got {cfg.kp}")
    if not 0.0 < cfg.theta <= 1.0:
        fail("theta", f"theta must lie in (0, 1], got {cfg.theta}")
    if cfg.dof_budget < 1:
        fail("dof_budget", f"dof_budget must be at least 1, got {cfg.dof_budget}")
    if cfg.mode not in ("uniform", "adaptive"):
        fail("mode", f"mode must be 'uniform' or 'adaptive', got {cfg.mode!r}")
    if cfg.mesh not in ("default", "fixed"):
        fail("mesh", f"mesh must be 'default' or 'fixed', got {cfg.mesh!r}")
    if cfg.solver not in ("direct", "minres"):
        fail("solver", f"solver must be 'direct' or 'minres', got {cfg.solver!r}")
    if not cfg.tol > 0:
        fail("tol", "tol must be positive")
    if cfg.levels is not None and cfg.levels < 1:
        fail("levels", "levels must be at least 1")
    if cfg.reference_extra < 0:
        fail("reference_extra", "reference_extra must be nonnegative")
    for q in ("load_quadrature", "error_quadrature"):
        v = getattr(cfg, q)
        if v is not None and not 0 <= v <= 20:
            fail(q, f"{q} must lie in [0, 20]")
    return cfg


# ---------------------------------------------------------------------------
# invariant suites


@dataclass
class CheckResult:
    suite: str
    invariant: str
    level: int
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)


_SUITE_ITEMS = {
    "solver": (("solver_residual", None), ("gauge_residual", 1e-9)),
    "constraints": (
        ("step1_gauge_residual_rel", 1e-10),
        ("step2_mean_rel", 1e-12),
        ("step3_node_sum_rel", 1e-12),
        ("step4_orthogonality_rel", 1e-9),
    ),
    "equilibrium": (
        ("equilibrium_curl_rel", 1e-8),
        ("equilibrium_jump_rel", 1e-8),
        ("step1_curl_residual_rel", 1e-9),
        ("step2_residual_rel", 1e-9),
        ("step3_node_residual_rel", 1e-9),
        ("step3_jump_error_rel", 1e-9),
    ),
}


def check_record(rec: AdaptiveRecord, suites, tol: float) -> list[CheckResult]:
    out = []
    for suite in suites:
        if suite == "reliability":
            if math.isfinite(rec.error):
                out.append(CheckResult(suite, "error_le_eta", rec.level, rec.error / rec.eta - 1.0 if rec.eta > 0 else (0.0 if rec.error == 0 else math.inf), 1e-8))
            continue
        for name, t in _SUITE_ITEMS[suite]:
            v = rec.diagnostics.get(name)
            if v is None:
                continue
            out.append(CheckResult(suite, name, rec.level, float(v), tol if t is None else t))
    return out


# ---------------------------------------------------------------------------
# output


def format_value(v) -> str:
    """Integers verbatim; floats with 12 significant digits."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    x = float(v)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.11e}"


def records_csv(records: list[AdaptiveRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        row = r.row()
        w.writerow([format_value(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _json_float(x):
    return None if (isinstance(x, float) and not math.isfinite(x)) else x


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return _json_float(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_clean(payload), indent=2, default=_json_default) + "\n")


@dataclass
class RunOutcome:
    status: int
    records: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    failure: dict | None = None
    outdir: Path | None = None


# ---------------------------------------------------------------------------
# commands


def run(config: RunConfig) -> RunOutcome:
    """Execute a convergence study and write ``records.csv`` and ``report.json``."""
    out = config.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    problem = get_problem(config.problem, config.ell)
    settings = config.settings()
    t0 = time.perf_counter()
    need_reference = not problem.has_exact and config.reference_extra > 0

    def on_level(rec, state):
        if config.vtk:
            write_vtk(out / f"mesh_level{rec.level}.vtk", state.mesh, {"eta_T": state.estimate.report.eta_T})

    failure = None
    records: list[AdaptiveRecord] = []
    reference_info = None
    try:
        records, states = adaptive_loop(problem, settings, on_level=on_level, keep_states=need_reference)
        if need_reference:
            ref, maps, done = reference_solution(
                problem, states, settings, config.reference_extra, config.reference_budget
            )
            order = config.error_quadrature or 2 * config.k
            errs = errors_against_reference(states, ref, maps, order)
            for r, e in zip(records, errs):
                r.error = e
                r.eff_index = efficiency_index(r.eta, e)
            reference_info = {
                "extra_levels": done,
                "requested_extra_levels": config.reference_extra,
                "NT": ref.mesh.num_cells,
                "N_h": nedelec_dimension(ref.mesh, config.k),
            }
    except (AdaptivityError, SolverError) as exc:
        failure = {"status": "error", "kind": type(exc).__name__, "message": str(exc),
                   "level": getattr(exc, "level", None)}

    checks = [c for r in records for c in check_record(r, config.checks, config.tol)]
    bad = [c for c in checks if not c.passed]
    if failure is None and bad:
        first = bad[0]
        failure = {"status": "invariant_violation", "suite": first.suite, "invariant": first.invariant,
                   "level": first.level, "value": first.value, "tolerance": first.tolerance,
                   "violations": [asdict(c) for c in bad]}
    (out / "records.csv").write_text(records_csv(records))
    report = {
        "config": config.echo(),
        "records": [dict(r.row(), diagnostics=r.diagnostics) for r in records],
        "checks": [dict(asdict(c), passed=c.passed) for c in checks],
        "reference": reference_info,
        "failure": failure,
        "total_seconds": time.perf_counter() - t0,
    }
    write_json(out / "report.json", report)
    if failure is not None:
        write_json(out / "failure.json", failure)
        status = EXIT_INVARIANT if failure["status"] == "invariant_violation" else EXIT_RUNTIME
    else:
        status = EXIT_OK
    return RunOutcome(status, records, checks, failure, out)


def ksweep(config: RunConfig, k_list) -> RunOutcome:
    """Efficiency indices on the fixed initial mesh for each degree in ``k_list``."""
    out = config.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    problem = get_problem(config.problem, config.ell)
    if not problem.has_exact:
        raise ConfigError(f"ksweep needs an exact solution; {problem.name} has none")
    mesh = problem.initial_mesh("fixed")
    shift = config.kp - config.k
    rows, details = [], []
    for k in k_list:
        s = config.settings(k=k, kp=k + shift, mode="uniform", max_levels=1, mesh_kind="fixed")
        system, _, _, fields, est = solve_level(problem, mesh, s)
        order = config.error_quadrature or 2 * s.kp + 8
        err, _ = energy_error(mesh, fields.H, problem.H, order)
        r = est.report
        rows.append((k, efficiency_index(r.eta, err), efficiency_index(r.mu, err),
                     efficiency_index(r.eta_legacy, err)))
        details.append({"k": k, "kp": s.kp, "error": err, "eta": r.eta, "mu": r.mu,
                        "eta_legacy": r.eta_legacy, "N_h": nedelec_dimension(mesh, k),
                        "diagnostics": r.diagnostics})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(KSWEEP_COLUMNS)
    for row in rows:
        w.writerow([format_value(row[0])] + [format_value(v) for v in row[1:]])
    (out / "ksweep.csv").write_text(buf.getvalue())
    write_json(out / "ksweep.json", {"config": config.echo(), "rows": details})
    return RunOutcome(EXIT_OK, rows, [], None, out)


def export_mesh(config: RunConfig, level: int) -> Path:
    """Run to ``level`` and write its mesh with ``mu`` and ``eta_T``."""
    if level < 0:
        raise ConfigError("level must be nonnegative")
    out = config.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    problem = get_problem(config.problem, config.ell)
    s = config.settings(max_levels=level + 1, dof_budget=np.iinfo(np.int64).max)
    _, states = adaptive_loop(problem, s)
    st = states[-1]
    return write_vtk(out / f"mesh_level{level}.vtk", st.mesh, {"eta_T": st.estimate.report.eta_T},
                     title=f"{config.problem} level {level}")


def _parse_k_list(text: str) -> list[int]:
    try:
        ks = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --k list {text!r}") from exc
    if not ks or any(not 1 <= k <= 6 for k in ks):
        raise ConfigError("--k entries must lie in [1, 6]")
    return ks


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="magequil", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress per level")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="convergence study")
    r.add_argument("config")
    ks = sub.add_parser("ksweep", help="degree sweep on the fixed mesh")
    ks.add_argument("config")
    ks.add_argument("--k", default="1,2,3,4", help="comma separated degrees")
    ex = sub.add_parser("export-mesh", help="write the mesh of one level as VTK")
    ex.add_argument("config")
    ex.add_argument("--level", type=int, required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = parse_config(Path(args.config).read_text())
        if args.command == "run":
            outcome = run(config)
            if outcome.failure is not None:
                print(json.dumps(_clean(outcome.failure), default=_json_default)[:2000], file=sys.stderr)
            return outcome.status
        if args.command == "ksweep":
            ksweep(config, _parse_k_list(args.k))
            return EXIT_OK
        path = export_mesh(config, args.level)
        print(path)
        return EXIT_OK
    except (ConfigError, OSError) as exc:
        print(json.dumps({"status": "config_error", "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except (AdaptivityError, SolverError) as exc:
        print(json.dumps({"status": "error", "message": str(exc)}), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

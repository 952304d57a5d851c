import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from magequil import cli
from magequil.benchmarks import Problem
from magequil.cli import (
    CSV_COLUMNS,
    EXIT_CONFIG,
    EXIT_INVARIANT,
    EXIT_OK,
    ConfigError,
    format_value,
    ksweep,
    main,
    parse_config,
    run,
)
from magequil.meshio import read_vtk
from magequil.mesh import unit_cube_mesh


def read_csv(path):
    return list(csv.reader(io.StringIO(path.read_text())))


def test_defaults():
    c = parse_config("problem = cube_poly\nk = 2")
    assert (c.kp, c.theta, c.solver, c.tol, c.mode) == (2, 0.5, "direct", 1e-10, "adaptive")
    assert c.compatibility_correction is True


def test_prime_key_and_comments():
    c = parse_config("# study\nproblem = cube_sine   # smooth\nk = 1\nk' = 3\ntheta=0.3\n\n")
    assert (c.k, c.kp, c.theta) == (1, 3, 0.3)


@pytest.mark.parametrize(
    "text, match",
    [
        ("", "problem required"),
        ("problem = cube_poly", "k required"),
        ("problem = cube_poly\nk = 0", "line 2"),
        ("problem = cube_poly\nk = 7", "line 2"),
        ("problem = cube_poly\nk = 2\nkp = 1", "line 3"),
        ("problem = cube_poly\nk = 1\ntheta = 0", "line 3"),
        ("problem = cube_poly\nk = 1\ntheta = 1.5", "line 3"),
        ("problem = cube_poly\nk = 1\ndof_budget = 0", "line 3"),
        ("problem = cube_poly\nk = 1\ncolour = red", "line 3: unknown key"),
        ("problem = cube_poly\nk = 1\nk = 2", "duplicate"),
        ("problem = cube_poly\nk = one", "line 2"),
        ("problem = cube_poly\nk = 1\nmode = random", "line 3"),
        ("problem = cube_poly\nk = 1\nsolver = cg", "line 3"),
        ("problem = cube_poly\nk 1", "line 2"),
        ("problem = torus\nk = 1", "line 1"),
        ("problem = cube_poly\nk = 1\nchecks = speed", "line 3"),
    ],
)
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_format_value():
    assert format_value(12) == "12"
    assert format_value(np.int64(3)) == "3"
    assert format_value(1 / 3) == "3.33333333333e-01"
    assert len(format_value(np.pi).split("e")[0].replace(".", "")) == 12
    assert format_value(float("nan")) == "nan"


@pytest.fixture
def outroot(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path))
    return tmp_path


CUBE_K1 = "problem = cube_poly\nk = 1\nmode = uniform\nlevels = 3\nchecks = solver,constraints,reliability\n"


def test_run_cube_poly_uniform(outroot):
    cfg = parse_config(CUBE_K1 + "outdir = a\n")
    outcome = run(cfg)
    assert outcome.status == EXIT_OK
    rows = read_csv(outroot / "a" / "records.csv")
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 4
    for r in rows[1:]:
        assert 1.0 <= float(r[CSV_COLUMNS.index("eff_index")]) <= 2.0
    report = json.loads((outroot / "a" / "report.json").read_text())
    assert report["config"]["k"] == 1 and report["failure"] is None
    assert "step2_mean_rel" in report["records"][0]["diagnostics"]
    assert not (outroot / "a" / "failure.json").exists()


def test_run_is_deterministic(outroot):
    for name in ("x", "y"):
        assert run(parse_config(CUBE_K1.replace("levels = 3", "levels = 2") + f"outdir = {name}\n")).status == EXIT_OK

    def strip(p):
        i = CSV_COLUMNS.index("seconds")
        return [r[:i] + r[i + 1:] for r in read_csv(p)]

    assert strip(outroot / "x" / "records.csv") == strip(outroot / "y" / "records.csv")


def test_zero_current(outroot, monkeypatch):
    def zero(x):
        return np.zeros(np.shape(x))

    P = Problem("zero", lambda kind: unit_cube_mesh("kuhn6", 2), lambda c: np.ones(len(c)), zero, zero, zero)
    monkeypatch.setattr(cli, "get_problem", lambda name, ell=1: P)
    outcome = run(parse_config("problem = cube_poly\nk = 2\nmode = uniform\nlevels = 2\noutdir = z\n"))
    assert outcome.status == EXIT_OK
    for r in outcome.records:
        assert r.error <= 1e-14 and r.eta <= 1e-14 and r.mu <= 1e-14
        assert np.isnan(r.eff_index)
    assert read_csv(outroot / "z" / "records.csv")[1][CSV_COLUMNS.index("eff_index")] == "nan"


def test_invariant_violation_exit(outroot):
    # smooth non-polynomial data is not exactly equilibrated by the discrete sequence
    cfg = parse_config("problem = cube_sine\nk = 2\nmode = uniform\nlevels = 1\nchecks = equilibrium\noutdir = f\n")
    outcome = run(cfg)
    assert outcome.status == EXIT_INVARIANT
    fail = json.loads((outroot / "f" / "failure.json").read_text())
    assert fail["status"] == "invariant_violation" and fail["suite"] == "equilibrium"
    assert fail["invariant"]


def test_vtk_output(outroot):
    run(parse_config("problem = cube_poly\nk = 1\nmode = adaptive\nlevels = 2\nvtk = yes\noutdir = v\n"))
    mesh, fields = read_vtk(outroot / "v" / "mesh_level1.vtk")
    assert mesh.num_cells == len(fields["eta_T"]) > 48


def test_ksweep_single(outroot):
    cfg = parse_config("problem = cube_sine\nk = 1\noutdir = s\n")
    outcome = ksweep(cfg, [1])
    rows = read_csv(outroot / "s" / "ksweep.csv")
    assert rows[0] == ["k", "eff_index_eta", "eff_index_mu", "eff_index_eta_legacy"]
    assert len(rows) == 2 and rows[1][0] == "1"
    assert len(outcome.records) == 1


def test_ksweep_needs_exact(outroot):
    with pytest.raises(ConfigError):
        ksweep(parse_config("problem = disc_mu\nk = 1\n"), [1])


def test_main_verbs(outroot, tmp_path, capsys):
    cfgfile = tmp_path / "c.cfg"
    cfgfile.write_text("problem = cube_poly\nk = 1\nmode = uniform\nlevels = 1\noutdir = m\n")
    assert main(["run", str(cfgfile)]) == EXIT_OK
    assert main(["ksweep", str(cfgfile), "--k", "1,2"]) == EXIT_OK
    assert len(read_csv(outroot / "m" / "ksweep.csv")) == 3
    assert main(["export-mesh", str(cfgfile), "--level", "1"]) == EXIT_OK
    assert (outroot / "m" / "mesh_level1.vtk").exists()
    assert main(["ksweep", str(cfgfile), "--k", "0"]) == EXIT_CONFIG
    bad = tmp_path / "bad.cfg"
    bad.write_text("k = 1\n")
    assert main(["run", str(bad)]) == EXIT_CONFIG
    assert "problem required" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


CONFIGS = sorted((Path(__file__).parents[1] / "configs").glob("*.cfg"))


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    cfg = parse_config(path.read_text())
    assert cfg.outdir == path.stem


def test_shipped_configs_present():
    assert len(CONFIGS) == 12


import numpy as np
import pytest
import scipy.sparse as sp

from magequil.benchmarks import get_problem
from magequil.discretization.elements import Family, reference_element
from magequil.discretization.quadrature import tet_quadrature
from magequil.mesh import TetMesh, unit_cube_mesh
from magequil.refine import uniform_refine
from magequil.system import (
    FieldCoefficients,
    SolverError,
    assemble_system,
    discrete_fields,
    energy_error,
    local_curlcurl,
    solve_system,
)

from conftest import random_affine


def zero(x):
    return np.zeros(np.shape(x))


def random_cell(rng, mu=1.0):
    J = random_affine(rng)
    v = np.vstack([np.zeros(3), J.T]) + rng.standard_normal(3)
    return TetMesh.from_arrays(v, np.array([[0, 1, 2, 3]]), mu)


def dense_curls(mesh, k, rule):
    """Physical curls of the cell basis at the rule points, from the reference element."""
    g = mesh.geometry
    C = reference_element(Family.NEDELEC1_TET, k).curls(rule.points)
    return np.einsum("ij,qaj->qai", g.J[0], C) / g.detJ[0]


@pytest.fixture(scope="module")
def cube_poly_k3():
    P = get_problem("cube_poly")
    mesh = P.initial_mesh()
    system = assemble_system(mesh, None, 3, P.j)
    u, p = solve_system(system)
    return P, mesh, system, u, p


def test_zero_load():
    mesh = unit_cube_mesh("kuhn6", 2)
    system = assemble_system(mesh, None, 2, zero)
    assert not np.any(system.rhs)
    u, p = solve_system(system)
    assert not np.any(u.values) and not np.any(p.values)
    f = discrete_fields(mesh, u)
    pts = tet_quadrature(4).points
    assert not np.any(f.H.values(pts)) and not np.any(f.j.values(pts))


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_one_cell_curlcurl_matches_dense(rng, k):
    mu = 2.5
    mesh = random_cell(rng, mu)
    rule = tet_quadrature(2 * k)
    C = dense_curls(mesh, k, rule)
    dense = np.einsum("q,qai,qbi->ab", rule.weights, C, C) * abs(mesh.geometry.detJ[0]) / mu
    loc = local_curlcurl(mesh, k)[0]
    assert np.max(np.abs(loc - dense)) <= 1e-12 * max(1.0, np.max(np.abs(dense)))


@pytest.mark.parametrize("k", [1, 2, 3])
def test_matrix_symmetric(k):
    system = assemble_system(unit_cube_mesh("center24", 1), None, k, get_problem("cube_sine").j)
    assert abs(system.A - system.A.T).max() == 0
    assert abs(system.matrix - system.matrix.T).max() == 0
    assert system.matrix.shape == (system.n_u + system.n_p,) * 2


def test_empty_space_reported():
    mesh = TetMesh.from_arrays(np.vstack([np.zeros(3), np.eye(3)]), np.array([[0, 1, 2, 3]]))
    with pytest.raises(SolverError, match="empty"):
        assemble_system(mesh, None, 1, zero)


def test_cube_poly_k3_residual_and_gauge(cube_poly_k3):
    _, _, system, u, p = cube_poly_k3
    assert system.info["relative_residual"] <= 1e-10
    scale = np.linalg.norm(system.load) + abs(system.A).max() * np.linalg.norm(u.values)
    assert np.max(np.abs(system.B @ u.values)) <= 1e-9 * scale


def test_galerkin_orthogonality(cube_poly_k3):
    _, _, system, u, p = cube_poly_k3
    scale = np.linalg.norm(system.load) + abs(system.A).max() * np.linalg.norm(u.values)
    assert np.max(np.abs(system.A @ u.values - system.load)) <= 1e-9 * scale
    # the multiplier vanishes for compatible data
    assert np.max(np.abs(p.values)) <= 1e-9 * max(1.0, np.max(np.abs(u.values)))


def test_direct_and_minres_agree(rng):
    mesh = unit_cube_mesh("kuhn6", 2)
    system = assemble_system(mesh, None, 2, zero)
    # consistent random load: rhs in the range of the matrix
    x0 = rng.standard_normal(system.matrix.shape[0])
    rhs = system.matrix @ x0
    s = type(system)(**{**system.__dict__, "rhs": rhs, "info": {}})
    ud, pd = solve_system(s, "direct")
    um, pm = solve_system(s, "minres", tol=1e-10)
    ref = np.concatenate([ud.values, pd.values])
    got = np.concatenate([um.values, pm.values])
    assert np.linalg.norm(got - ref) <= 1e-8 * np.linalg.norm(ref)
    assert np.linalg.norm(ref - x0) <= 1e-8 * np.linalg.norm(x0)
    assert s.info["iterations"] > 0


@pytest.mark.parametrize("ell", [1, 3, 5])
def test_minres_true_residual_under_contrast(ell):
    P = get_problem("disc_mu", ell)
    mesh = uniform_refine(P.initial_mesh("default"))
    mesh = mesh.with_mu(P.mu_rule(mesh.centroids))
    system = assemble_system(mesh, None, 2, P.j)
    ud, _ = solve_system(system, "direct")
    um, _ = solve_system(system, "minres", tol=1e-10)
    assert system.info["relative_residual"] <= 1e-10
    assert np.linalg.norm(um.values - ud.values) <= 1e-7 * np.linalg.norm(ud.values)


def test_unknown_method():
    system = assemble_system(unit_cube_mesh("kuhn6", 2), None, 1, get_problem("cube_poly").j)
    with pytest.raises(SolverError):
        solve_system(system, "cg")


def test_compatibility_correction_switch():
    mesh = unit_cube_mesh("kuhn6", 1)

    def grad_j(x):
        # gradient of the bubble x y z (1-x)(1-y)(1-z), which lies in the multiplier space at k=6
        a = x * (1 - x)
        da = 1 - 2 * x
        return np.stack(
            [da[..., 0] * a[..., 1] * a[..., 2], a[..., 0] * da[..., 1] * a[..., 2], a[..., 0] * a[..., 1] * da[..., 2]],
            axis=-1,
        )

    on = assemble_system(mesh, None, 6, grad_j)
    off = assemble_system(mesh, None, 6, grad_j, compatibility_correction=False)
    assert np.linalg.norm(off.load) > 1e-3
    assert np.linalg.norm(on.load) <= 1e-10 * np.linalg.norm(off.load)
    assert np.array_equal(off.load, off.load_raw)


def test_matrix_market_dump(tmp_path):
    system = assemble_system(unit_cube_mesh("kuhn6", 2), None, 1, get_problem("cube_poly").j)
    system.write_matrix_market(tmp_path / "K.mtx")
    from scipy.io import mmread

    assert abs(sp.csr_matrix(mmread(str(tmp_path / "K.mtx"))) - system.matrix).max() == 0


# ---------------------------------------------------------------------------
# discrete fields


def test_field_coefficients_length():
    system = assemble_system(unit_cube_mesh("kuhn6", 2), None, 1, zero)
    with pytest.raises(ValueError):
        FieldCoefficients(system.u_map, np.zeros(system.n_u + 1))


def test_lowest_order_field_constant_per_cell(rng):
    mesh = unit_cube_mesh("kuhn6", 2)
    system = assemble_system(mesh, None, 1, zero)
    f = discrete_fields(mesh, FieldCoefficients(system.u_map, rng.standard_normal(system.n_u)))
    v = f.H.values(tet_quadrature(3).points)
    assert np.allclose(v, v[:, :1, :], atol=1e-13)
    assert np.allclose(f.j.values(tet_quadrature(3).points), 0, atol=1e-12)


@pytest.mark.parametrize("k", [2, 3])
def test_field_values_match_dense(rng, k):
    mesh = unit_cube_mesh("kuhn6", 2).with_mu(rng.uniform(1, 3, 48))
    system = assemble_system(mesh, None, k, zero)
    u = FieldCoefficients(system.u_map, rng.standard_normal(system.n_u))
    rule = tet_quadrature(2 * k)
    H = discrete_fields(mesh, u).H.values(rule.points)
    g = mesh.geometry
    C = reference_element(Family.NEDELEC1_TET, k).curls(rule.points)
    c = u.cell_values()
    dense = np.einsum("ta,tij,qaj->tqi", c, g.J, C) / (g.detJ * mesh.cell_mu)[:, None, None]
    assert np.allclose(H, dense, rtol=0, atol=1e-12 * np.abs(dense).max())
    # moments
    m = np.einsum("q,tqi->ti", rule.weights, H)
    assert np.allclose(m, np.einsum("q,tqi->ti", rule.weights, dense), atol=1e-12 * np.abs(dense).max())


# ---------------------------------------------------------------------------
# energy error


def test_energy_error_of_exact_field(rng):
    mesh = unit_cube_mesh("kuhn6", 2)
    system = assemble_system(mesh, None, 2, zero)
    f = discrete_fields(mesh, FieldCoefficients(system.u_map, rng.standard_normal(system.n_u)))
    g = mesh.geometry
    cells = np.arange(mesh.num_cells)

    def exact(x):
        # evaluate the discrete field itself at the physical points
        ref = g.to_reference(x, cells)
        return f.H.values_at(cells, ref)

    err, per = energy_error(mesh, f.H, exact, 6)
    assert err <= 1e-13 and per.shape == (48,)


def test_energy_error_constant():
    mesh = unit_cube_mesh("center24", 1)
    c = np.array([1.0, -2.0, 2.0])
    err, per = energy_error(mesh, None, lambda x: np.broadcast_to(c, x.shape), 2)
    assert err == pytest.approx(3.0, rel=1e-13)
    assert per.sum() == pytest.approx(9.0, rel=1e-13)


def test_cube_poly_k3_convergence_ratio():
    P = get_problem("cube_poly")
    mesh = P.initial_mesh()
    errors = []
    for _ in range(3):
        system = assemble_system(mesh, None, 3, P.j)
        u, _ = solve_system(system)
        errors.append(energy_error(mesh, discrete_fields(mesh, u).H, P.H, 14)[0])
        mesh = uniform_refine(mesh)
    assert errors[1] / errors[2] == pytest.approx(8, rel=0.15)

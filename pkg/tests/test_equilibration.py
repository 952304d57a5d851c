import dataclasses

import numpy as np
import pytest

from magequil.benchmarks import get_problem
from magequil.discretization.elements import Family, reference_element, space_dimension
from magequil.discretization.fields import CellScalarField, weighted_norms
from magequil.discretization.quadrature import tri_quadrature
from magequil.equilibration import (
    CurrentData,
    FaceGeometry,
    FacePotentialSet,
    estimate,
    legacy_estimator,
    residual_estimator,
    step1_element_corrections,
    step2_face_potentials,
    step3_node_distribution,
    step4_patch_corrections,
    step5_estimator,
    traces,
)
from magequil.mesh import two_tet_mesh, unit_cube_mesh, vertex_patches
from magequil.refine import uniform_refine
from magequil.system import (
    assemble_system,
    correction_field,
    curl_of,
    discrete_fields,
    energy_error,
    solve_system,
)

from oracles import (
    fit_field,
    min_norm_preimage,
    patch_energy,
    random_curl_data,
    single_cell,
    zero_field,
)


def solve(problem, mesh, k):
    system = assemble_system(mesh, None, k, problem.j, quad_order=2 * (k + 1) + 2)
    u, _ = solve_system(system)
    f = discrete_fields(mesh, u)
    return f, correction_field(system)


def run(problem_name, mesh, k, kp=None, keep_patches=False):
    P = get_problem(problem_name)
    mesh = mesh.with_mu(P.mu_rule(mesh.centroids))
    f, corr = solve(P, mesh, k)
    eq = estimate(mesh, None, P.j, f.H, f.j, k, kp, correction=corr, keep_patches=keep_patches)
    return P, mesh, f, eq


@pytest.fixture(scope="module")
def poly_center24():
    return run("cube_poly", unit_cube_mesh("center24", 1), 3)


@pytest.fixture(scope="module")
def sine_two_level():
    return run("cube_sine", uniform_refine(unit_cube_mesh("kuhn6", 1)), 1, keep_patches=True)


def linear_H(x):
    A = np.array([[0.3, -1.0, 0.2], [0.5, 0.1, 0.7], [-0.4, 0.9, 0.0]])
    return x @ A.T + np.array([1.0, 2.0, -0.5])


def curl_linear_H(x):
    A = np.array([[0.3, -1.0, 0.2], [0.5, 0.1, 0.7], [-0.4, 0.9, 0.0]])
    c = np.array([A[2, 1] - A[1, 2], A[0, 2] - A[2, 0], A[1, 0] - A[0, 1]])
    return np.broadcast_to(c, np.shape(x)).copy()


# ---------------------------------------------------------------------------
# trivial data


@pytest.mark.parametrize("kp", [1, 2, 3])
def test_equilibrated_data_gives_zero(kp):
    """A conforming H_h with j = curl H_h leaves nothing to equilibrate."""
    mesh = unit_cube_mesh("kuhn6", 2)
    H = fit_field(mesh, linear_H, 1)
    jh = curl_of(mesh, H)
    eq = estimate(mesh, None, curl_linear_H, H, jh, 1, kp)
    assert np.max(np.abs(eq.hatH.coefficients)) <= 1e-12
    assert np.max(np.abs(eq.potentials.coefficients)) <= 1e-12
    assert np.max(np.abs(eq.phi.values)) <= 1e-12
    assert np.max(np.abs(eq.alphas.coefficients)) <= 1e-12
    assert eq.report.eta <= 1e-12 and eq.report.eta_legacy <= 1e-12
    assert eq.report.mu <= 1e-11


def test_residual_estimator_single_face():
    mesh = two_tet_mesh()
    topo = mesh.topology
    (f,) = topo.interior_faces
    n = topo.face_normals[f]
    t = np.cross(n, [1.0, 0.3, -0.2])
    t /= np.linalg.norm(t)
    g = 2.5
    coef = np.zeros((2, 1, 3))
    tp = topo.face_cells[f, 0]
    coef[tp, 0] = g * t
    H = dataclasses.replace(zero_field(mesh), coef=coef)
    mu, mu_T = residual_estimator(mesh, topo, H, zero_field(mesh), lambda x: np.zeros(np.shape(x)), 1)
    area = topo.face_areas(mesh.vertices)[f]
    hf = topo.face_diameters(mesh.vertices)[f]
    assert mu**2 == pytest.approx(hf * g**2 * area, rel=1e-13)
    assert mu_T[0] == pytest.approx(mu_T[1], rel=1e-13)
    assert np.sum(mu_T**2) == pytest.approx(mu**2, rel=1e-13)


# ---------------------------------------------------------------------------
# step 1


def test_step1_six_unknowns():
    mesh = single_cell(np.random.default_rng(0))
    data = CurrentData(lambda x: np.zeros(np.shape(x)), zero_field(mesh))
    h = step1_element_corrections(mesh, data, 1)
    assert space_dimension(Family.NEDELEC1_TET, 1) == 6
    assert h.coefficients.shape == (1, 6)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("kp", [1, 2, 3])
def test_step1_matches_min_norm_oracle(seed, kp):
    rng = np.random.default_rng(100 * kp + seed)
    mesh = single_cell(rng)
    r = random_curl_data(rng, mesh, kp)
    h = step1_element_corrections(mesh, CurrentData(r, zero_field(mesh)), kp)
    c_ref, norm_ref = min_norm_preimage(mesh, kp, r)
    norm = np.sqrt(weighted_norms(mesh, h.field, order=2 * kp)[0])
    assert norm == pytest.approx(norm_ref, rel=1e-8)
    assert np.allclose(h.coefficients[0], c_ref, atol=1e-8 * np.abs(c_ref).max())
    assert h.curl_residual[0] <= 1e-10 * h.rhs_norm[0]
    assert h.gauge_residual[0] <= 1e-10


# ---------------------------------------------------------------------------
# step 2


def test_step2_three_unknowns_per_face():
    *_, eq = run("cube_sine", unit_cube_mesh("kuhn6", 2), 1)
    assert eq.potentials.coefficients.shape[1] == 3


@pytest.mark.parametrize("kp", [2, 3])
def test_step2_round_trip(kp):
    rng = np.random.default_rng(7)
    mesh = unit_cube_mesh("center24", 1)
    topo = mesh.topology
    faces = topo.interior_faces
    fg = FaceGeometry.build(mesh, topo, faces)
    a = rng.standard_normal(3)
    B = rng.standard_normal((3, 3))

    def lam(x):  # a quadratic in space, restricted to each face is in P_2(f)
        return x @ a + np.einsum("...i,ij,...j->...", x, B, x)

    def grad(x):
        return a + x @ (B + B.T)

    rule = tri_quadrature(2 * kp + 2)
    x = fg.points(rule.points)
    n = fg.normals[:, None, :]
    jump = -np.cross(n, grad(x))  # only the tangential part of grad enters
    pots = step2_face_potentials(mesh, topo, None, None, kp, jump_data=jump)
    mean = np.einsum("q,fq->f", rule.weights, lam(x)) / rule.weights.sum()
    nodes = fg.points(reference_element(Family.LAGRANGE_TRI, kp).nodes)
    expect = lam(nodes) - mean[:, None]
    assert np.max(np.abs(pots.coefficients - expect)) <= 1e-10 * np.abs(expect).max()
    assert np.max(np.abs(pots.mean)) <= 1e-12
    assert np.max(pots.residual) <= 1e-10 * max(pots.jump_norm.max(), 1.0)


def test_step2_zero_jump():
    mesh = unit_cube_mesh("kuhn6", 2)
    topo = mesh.topology
    rule = tri_quadrature(4)
    jump = np.zeros((len(topo.interior_faces), len(rule.weights), 3))
    pots = step2_face_potentials(mesh, topo, None, None, 1, jump_data=jump)
    assert not np.any(pots.coefficients)


def test_face_frames(poly_center24):
    _, mesh, _, eq = poly_center24
    fr = eq.potentials.frames
    n = eq.potentials.normals
    assert np.allclose(np.einsum("fai,fbi->fab", fr, fr), np.eye(2), atol=1e-14)
    assert np.allclose(np.einsum("fai,fi->fa", fr, n), 0, atol=1e-14)
    assert np.allclose(np.cross(n, fr[:, 0]), fr[:, 1], atol=1e-14)


# ---------------------------------------------------------------------------
# step 3


def potentials_on(mesh, values_per_face, kp):
    topo = mesh.topology
    faces = topo.interior_faces
    nl = reference_element(Family.LAGRANGE_TRI, kp).dim
    nf = len(faces)
    coef = np.broadcast_to(np.asarray(values_per_face, dtype=float)[:, None], (nf, nl)).copy()
    z = np.zeros(nf)
    return FacePotentialSet(kp, faces, coef, np.zeros((nf, 2, 3)), topo.face_normals[faces], z, z, z, z)


@pytest.mark.parametrize("kp", [1, 2])
def test_step3_two_cells_split_jump(kp):
    mesh = two_tet_mesh()
    topo = mesh.topology
    c = 0.8
    phi = step3_node_distribution(mesh, topo, potentials_on(mesh, [c], kp), kp)
    (f,) = topo.interior_faces
    tp, tm = topo.face_cells[f]
    lag = reference_element(Family.LAGRANGE_TET, kp)
    sc = mesh.geometry.sorted_cells
    # nodes on the shared face: all other nodes vanish
    fx = mesh.vertices[topo.faces[f]]
    for t, sign in ((tp, 1.0), (tm, -1.0)):
        x = mesh.geometry.to_physical(lag.nodes, [t])[0]
        on = np.abs(np.cross(fx[1] - fx[0], fx[2] - fx[0]) @ (x - fx[0]).T) < 1e-12
        assert np.allclose(phi.values[t, on], sign * c / 2, atol=1e-14)
        assert np.allclose(phi.values[t, ~on], 0, atol=1e-14)
    assert np.max(phi.node_sum) <= 1e-14
    assert sc.shape == (2, 4)


def test_step3_zero_potentials():
    mesh = unit_cube_mesh("kuhn6", 2)
    phi = step3_node_distribution(mesh, mesh.topology, potentials_on(mesh, np.zeros(len(mesh.topology.interior_faces)), 2), 2)
    assert not np.any(phi.values)


def test_step3_interior_vertex_center24(poly_center24):
    _, mesh, _, eq = poly_center24
    centre = int(np.argmin(np.linalg.norm(mesh.vertices - 0.5, axis=1)))
    assert len(mesh.topology.cells_of_vertex(centre)) == 24
    # the global node at the centre vertex carries one value per incident cell
    node = eq.phi.node_map
    lag = reference_element(Family.LAGRANGE_TET, eq.phi.degree)
    at_centre = np.linalg.norm(mesh.geometry.to_physical(lag.nodes) - 0.5, axis=2) < 1e-12
    ids = np.unique(node.cell_dofs[at_centre])
    assert ids.size == 1 and at_centre.sum() == 24
    assert eq.phi.node_residual[ids[0]] <= 1e-9 * np.abs(eq.potentials.coefficients).max()
    scale = np.abs(eq.potentials.coefficients).max()
    assert np.max(eq.phi.node_residual) <= 1e-9 * scale
    assert np.max(eq.phi.node_sum) <= 1e-12 * scale
    assert np.max(eq.phi.jump_error) <= 1e-10 * scale


# ---------------------------------------------------------------------------
# step 4


def test_step4_zero_phi():
    mesh = unit_cube_mesh("kuhn6", 2)
    topo = mesh.topology
    zero = step3_node_distribution(mesh, topo, potentials_on(mesh, np.zeros(len(topo.interior_faces)), 1), 1)
    a = step4_patch_corrections(mesh, topo, None, zero, 1)
    assert not np.any(a.coefficients)


def test_step4_interior_patch_dimension():
    mesh = unit_cube_mesh("center24", 1)
    topo = mesh.topology
    *_, eq = run("cube_sine", mesh, 1)
    centre = int(np.argmin(np.linalg.norm(mesh.vertices - 0.5, axis=1)))
    n_edges = int(np.sum(np.any(topo.edges == centre, axis=1)))
    assert eq.alphas.patch_sizes[centre] == 1 + n_edges == 15


def test_step4_energy_optimality(sine_two_level):
    _, mesh, _, eq = sine_two_level
    rng = np.random.default_rng(3)
    alphas, phi = eq.alphas, eq.phi
    patches = vertex_patches(mesh)
    q = alphas.degree
    for sol, p in zip(alphas.patches, patches):
        if sol.dofs.size == 0:
            continue
        a = np.zeros(alphas.dofmap.num_dofs)
        a[sol.dofs] = sol.alpha
        e_opt = patch_energy(mesh, phi.field, p.vertex, p.cells, a, alphas.dofmap, q)
        for _ in range(20):
            v = np.zeros_like(a)
            v[sol.dofs] = sol.alpha + rng.standard_normal(sol.dofs.size) * np.exp(rng.uniform(-6, 0))
            e = patch_energy(mesh, phi.field, p.vertex, p.cells, v, alphas.dofmap, q)
            assert e_opt <= e * (1 + 1e-12)


def test_step4_vanishes_on_gamma(sine_two_level):
    _, mesh, _, eq = sine_two_level
    topo = mesh.topology
    alphas = eq.alphas
    lag = reference_element(Family.LAGRANGE_TET, alphas.degree)
    rule = tri_quadrature(2 * alphas.degree)
    for sol, p in zip(alphas.patches, vertex_patches(mesh)):
        if len(p.boundary_manifold) == 0:
            continue
        a = np.zeros(alphas.dofmap.num_dofs)
        a[sol.dofs] = sol.alpha
        f = CellScalarField(a[alphas.dofmap.cell_dofs] @ lag.coef, alphas.degree, mesh.geometry.Jinv)
        fg = FaceGeometry.build(mesh, topo, p.boundary_manifold)
        x = fg.points(rule.points)
        # the patch cell adjacent to each Gamma face
        fc = topo.face_cells[p.boundary_manifold]
        inside = np.where(np.isin(fc[:, 0], p.cells), fc[:, 0], fc[:, 1])
        vals = f.values_at(inside, mesh.geometry.to_reference(x, inside))
        assert np.max(np.abs(vals)) <= 1e-12 * max(1.0, np.abs(sol.alpha).max())
    assert np.max(alphas.orthogonality_residual) <= 1e-9


# ---------------------------------------------------------------------------
# step 5 and comparison estimators


def test_eta_is_root_sum_square(sine_two_level):
    r = sine_two_level[3].report
    for glob, per in ((r.eta, r.eta_T), (r.mu, r.mu_T), (r.eta_legacy, r.eta_legacy_T)):
        assert glob**2 == pytest.approx(np.sum(per**2), rel=1e-12)


def test_legacy_equals_eta_without_alpha(sine_two_level):
    _, mesh, _, eq = sine_two_level
    zero = dataclasses.replace(eq.alphas, field=CellScalarField(np.zeros_like(eq.alphas.field.coef), eq.alphas.degree, mesh.geometry.Jinv))
    eta_T, _ = step5_estimator(mesh, eq.hatH, eq.phi, zero, 1)
    leg, leg_T = legacy_estimator(mesh, eq.hatH, eq.phi, 1)
    assert np.sqrt(np.sum(eta_T**2)) == pytest.approx(leg, rel=1e-12)
    assert np.allclose(eta_T, leg_T, rtol=1e-10, atol=1e-14)


def test_compatible_data_equilibrium_and_reliability(poly_center24):
    P, mesh, f, eq = poly_center24
    d = eq.report.diagnostics
    assert d["equilibrium_curl_rel"] <= 1e-8
    assert d["equilibrium_jump_rel"] <= 1e-8
    assert d["step1_gauge_residual_rel"] <= 1e-10
    assert d["step2_mean_rel"] <= 1e-12
    assert d["step3_node_sum_rel"] <= 1e-12
    assert d["step4_orthogonality_rel"] <= 1e-9
    err, _ = energy_error(mesh, f.H, P.H, 14)
    assert err <= eq.report.eta * (1 + 1e-8)
    assert eq.report.eta / err <= 2


def test_jump_cancellation_pointwise(poly_center24):
    _, mesh, f, eq = poly_center24
    topo = mesh.topology
    faces = topo.interior_faces
    fg = FaceGeometry.build(mesh, topo, faces)
    x = fg.points(tri_quadrature(6).points)
    tp, tm = topo.face_cells[faces, 0], topo.face_cells[faces, 1]
    W = f.H + eq.field
    d = traces(mesh, W, tp, x) - traces(mesh, W, tm, x)
    jump = np.cross(fg.normals[:, None, :], d)
    ref = np.abs(traces(mesh, f.H, tp, x) - traces(mesh, f.H, tm, x)).max()
    assert np.abs(jump).max() <= 1e-8 * ref


def test_kp_below_k_rejected():
    mesh = unit_cube_mesh("kuhn6", 2)
    H = fit_field(mesh, linear_H, 1)
    with pytest.raises(ValueError):
        estimate(mesh, None, curl_linear_H, H, curl_of(mesh, H), 2, 1)


def test_report_json(sine_two_level):
    import json

    d = sine_two_level[3].report.to_dict()
    back = json.loads(json.dumps(d))
    assert back["eta"] == sine_two_level[3].report.eta
    assert len(back["eta_T"]) == 48
    assert set(back["timings"]) >= {"step1", "step2", "step3", "step4", "step5"}

import numpy as np
import pytest

from magequil.benchmarks import catalog, efficiency_index, evaluate_exact, get_problem
from magequil.discretization.quadrature import tri_quadrature
from magequil.equilibration import FaceGeometry
from magequil.refine import uniform_refine

EXACT = ["cube_poly", "cube_sine", "lbrick_singular"]


def jacobian_fd(f, x, h):
    """Fourth-order central differences of a vector field at points x (n, 3), step h (n,)."""
    out = np.empty(x.shape + (3,))
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1.0
        s = h[:, None] * e
        d = (-f(x + 2 * s) + 8 * f(x + s) - 8 * f(x - s) + f(x - 2 * s)) / (12 * h[:, None])
        out[:, :, j] = d
    return out


def curl_fd(f, x, h):
    D = jacobian_fd(f, x, h)
    return np.stack([D[:, 2, 1] - D[:, 1, 2], D[:, 0, 2] - D[:, 2, 0], D[:, 1, 0] - D[:, 0, 1]], axis=-1)


def random_points(rng, name, n=100):
    if name == "lbrick_singular":
        pts = []
        while len(pts) < n:
            p = rng.uniform([-1, -1, 0], [1, 1, 1])
            if not (p[0] > 0 and p[1] < 0) and np.hypot(p[0], p[1]) > 0.05:
                pts.append(p)
        x = np.array(pts)
    else:
        x = rng.uniform(0.02, 0.98, (n, 3))
    return x


def test_catalog_names():
    assert set(catalog()) == {"cube_poly", "cube_sine", "lbrick_singular", "disc_mu"}
    with pytest.raises(KeyError):
        get_problem("nope")


def test_cube_poly_u_centre():
    P = get_problem("cube_poly")
    assert np.allclose(evaluate_exact(P, "u", [0.5, 0.5, 0.5]), [1 / 16] * 3, rtol=0, atol=1e-15)


def test_cube_poly_H_origin():
    assert np.allclose(evaluate_exact(get_problem("cube_poly"), "H", [0.0, 0.0, 0.0]), 0, atol=1e-15)


def test_cube_sine_H_centre():
    P = get_problem("cube_sine")
    assert np.allclose(evaluate_exact(P, "u", [0.5, 0.5, 0.5]), 1.0, atol=1e-15)
    assert np.allclose(evaluate_exact(P, "H", [0.5, 0.5, 0.5]), 0, atol=1e-15)


def test_cube_poly_j_is_quadratic():
    P = get_problem("cube_poly")
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (30, 3))
    h = np.full(30, 0.05)
    # third derivatives of a quadratic vanish: fourth-order stencils of its Jacobian are exact
    J1 = jacobian_fd(P.j, x, h)
    J2 = jacobian_fd(P.j, x, 2 * h)
    assert np.allclose(J1, J2, atol=1e-11)


@pytest.mark.parametrize("name", EXACT)
def test_curl_H_equals_j(rng, name):
    P = get_problem(name)
    x = random_points(rng, name)
    r = np.hypot(x[:, 0], x[:, 1]) if name == "lbrick_singular" else np.ones(len(x))
    h = 1e-3 * np.minimum(r, 1.0)
    j = P.j(x)
    c = curl_fd(P.H, x, h)
    assert np.max(np.linalg.norm(c - j, axis=1) / np.maximum(np.linalg.norm(j, axis=1), 1.0)) <= 1e-9


@pytest.mark.parametrize("name", EXACT)
def test_H_is_curl_u(rng, name):
    P = get_problem(name)
    x = random_points(rng, name)
    r = np.hypot(x[:, 0], x[:, 1]) if name == "lbrick_singular" else np.ones(len(x))
    h = 1e-3 * np.minimum(r, 1.0)
    H = P.H(x)
    c = curl_fd(P.u, x, h)
    assert np.max(np.linalg.norm(c - H, axis=1) / np.maximum(np.linalg.norm(H, axis=1), 1.0)) <= 1e-9


@pytest.mark.parametrize("name", EXACT + ["disc_mu"])
def test_div_j_vanishes(rng, name):
    """Flux of j through the boundary of 100 random cells, relative to the absolute flux."""
    P = get_problem(name)
    mesh = uniform_refine(P.initial_mesh())
    r = np.hypot(mesh.vertices[:, 0], mesh.vertices[:, 1])[mesh.cells].min(axis=1)
    # the singular formulas stay away from the reentrant edge
    pool = np.flatnonzero(r > 0.05) if P.singular_edge else np.arange(mesh.num_cells)
    cells = rng.choice(pool, 100, replace=False)
    v = mesh.vertices[mesh.cells[cells]]
    rule = tri_quadrature(16)
    net = np.zeros(100)
    gross = np.zeros(100)
    for opp in range(4):
        tri = v[:, [i for i in range(4) if i != opp]]
        a, b, c = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
        nrm = np.cross(b, c)  # twice the area times the unit normal
        out = np.sign(np.einsum("ti,ti->t", nrm, a - v[:, opp]))
        x = a[:, None] + rule.points[:, :1] * b[:, None] + rule.points[:, 1:] * c[:, None]
        jn = np.einsum("tqi,ti->tq", P.j(x), nrm) * out[:, None]
        flux = jn @ rule.weights
        net += flux
        gross += np.abs(jn) @ rule.weights
    assert np.max(np.abs(net)) <= 1e-9 * gross.max()


@pytest.mark.parametrize("name", EXACT)
def test_tangential_trace_of_u(name):
    P = get_problem(name)
    mesh = uniform_refine(P.initial_mesh())
    topo = mesh.topology
    fg = FaceGeometry.build(mesh, topo, topo.boundary_faces)
    x = fg.points(tri_quadrature(6).points)
    t = np.cross(fg.normals[:, None, :], P.u(x))
    assert np.max(np.linalg.norm(t, axis=2)) <= 1e-12


@pytest.mark.parametrize("ell", [1, 2, 3])
def test_disc_mu_contrast(ell):
    P = get_problem("disc_mu", ell=ell)
    m = P.initial_mesh()
    c = m.centroids
    inside = (c[:, 1] < 0.5) & (c[:, 2] < 0.5)
    assert np.all(m.cell_mu[inside] == 1.0) and np.all(m.cell_mu[~inside] == 10.0**ell)
    assert m.cell_mu.max() / m.cell_mu.min() == 10.0**ell
    assert not P.has_exact
    assert np.allclose(P.j(np.random.default_rng(0).uniform(size=(5, 3))), [1.0, 0.0, 0.0])


def test_disc_mu_no_exact():
    with pytest.raises(ValueError):
        evaluate_exact(get_problem("disc_mu"), "H", [0.5, 0.5, 0.5])


def test_unknown_field():
    with pytest.raises(ValueError):
        evaluate_exact(get_problem("cube_poly"), "B", [0.5, 0.5, 0.5])


@pytest.mark.parametrize("what", ["u", "H", "j"])
def test_singular_edge_rejected(what):
    with pytest.raises(ValueError, match="singular"):
        evaluate_exact(get_problem("lbrick_singular"), what, [0.0, 0.0, 0.5])


@pytest.mark.parametrize("eta, err, expect", [(2.0, 1.0, 2.0), (1.5, 1.5, 1.0)])
def test_efficiency_index(eta, err, expect):
    assert efficiency_index(eta, err) == expect


@pytest.mark.parametrize("err", [0.0, float("nan"), -1.0])
def test_efficiency_index_sentinel(err):
    assert np.isnan(efficiency_index(1.0, err))


@pytest.mark.parametrize("kind, nt", [("default", 48), ("fixed", 24)])
def test_cube_meshes(kind, nt):
    assert get_problem("cube_sine").initial_mesh(kind).num_cells == nt


def test_lbrick_mesh():
    assert get_problem("lbrick_singular").initial_mesh("fixed").num_cells == 36

import math

import numpy as np
import pytest

from app.solver.errors import MaterialError, SolverError
from app.solver.mesh import FaceClass, Subdomain
from app.solver.problems import (
    COOK_TIP,
    UnknownProblemError,
    cook_right_edge_length,
    elasticity_exact_params,
    elasticity_source_params,
    elasticity_stress_params,
    get_problem,
    inside_convex,
    problem_cooks_membrane,
    thermal_exact,
    thermal_gradient,
    thermal_source,
)

STEP = 1e-4


def _laplacian(fn, x, y, h=STEP):
    return (fn(x + h, y) + fn(x - h, y) + fn(x, y + h) + fn(x, y - h) - 4.0 * fn(x, y)) / (h * h)


def test_thermal_values_at_origin():
    assert thermal_exact(0.0, 0.0) == pytest.approx(1.0)
    assert thermal_source(0.0, 0.0) == pytest.approx(math.pi ** 2 / 2.0)
    np.testing.assert_allclose(thermal_gradient(0.0, 0.0), [0.0, 0.0])


def test_thermal_vanishes_on_unit_circle_boundary():
    assert thermal_exact(1.0, 0.0) == pytest.approx(0.0, abs=1e-15)
    assert thermal_exact(0.0, -1.0) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("x, y", [(0.3, -0.4), (-0.7, 0.2), (1e-9, 0.0)])
def test_thermal_source_is_minus_laplacian(x, y):
    assert thermal_source(x, y) == pytest.approx(-_laplacian(thermal_exact, x, y), rel=1e-5)


def test_thermal_source_continuous_at_origin():
    assert thermal_source(1e-9, 0.0) == pytest.approx(thermal_source(2e-8, 0.0), rel=1e-12)


def test_thermal_gradient_matches_differences():
    x, y = 0.4, -0.3
    fd = [
        (thermal_exact(x + STEP, y) - thermal_exact(x - STEP, y)) / (2 * STEP),
        (thermal_exact(x, y + STEP) - thermal_exact(x, y - STEP)) / (2 * STEP),
    ]
    np.testing.assert_allclose(thermal_gradient(x, y), fd, rtol=1e-7)


@pytest.mark.parametrize("E, nu", [(250.0, 0.3), (25.0, 0.49999)])
def test_elasticity_exact_vanishes_on_boundary(E, nu):
    t = np.linspace(-1.0, 1.0, 7)
    for x, y in [(t, np.ones_like(t)), (t, -np.ones_like(t)), (np.ones_like(t), t), (-np.ones_like(t), t)]:
        np.testing.assert_allclose(elasticity_exact_params(x, y, E, nu), 0.0, atol=1e-13)


@pytest.mark.parametrize("theta", [1, 2])
def test_elasticity_stress_and_source_consistent(theta):
    E, nu = 250.0, 0.3
    x, y = 0.3, -0.6
    h = 1e-5

    def stress(px, py):
        return elasticity_stress_params(px, py, E, nu, theta)

    # -div(sigma) with sigma = (s_xx, s_yy, s_xy)
    dsx = (stress(x + h, y) - stress(x - h, y)) / (2 * h)
    dsy = (stress(x, y + h) - stress(x, y - h)) / (2 * h)
    expected = -np.array([dsx[0] + dsy[2], dsx[2] + dsy[1]])
    np.testing.assert_allclose(elasticity_source_params(x, y, E, nu, theta), expected, rtol=1e-6)


def test_elasticity_stress_matches_displacement():
    E, nu, theta = 250.0, 0.3, 1
    x, y = -0.2, 0.45
    h = 1e-6

    def u(px, py):
        return elasticity_exact_params(px, py, E, nu)

    du_dx = (u(x + h, y) - u(x - h, y)) / (2 * h)
    du_dy = (u(x, y + h) - u(x, y - h)) / (2 * h)
    strain = np.array([du_dx[0], du_dy[1], du_dy[0] + du_dx[1]])
    lam = E / ((1 + nu) * (1 - theta * nu))
    D = lam * np.array([[1 + (1 - theta) * nu, nu, 0], [nu, 1 + (1 - theta) * nu, 0], [0, 0, 0.5 * (1 - theta * nu)]])
    np.testing.assert_allclose(elasticity_stress_params(x, y, E, nu, theta), D @ strain, rtol=1e-5)


def test_problem_registry():
    thermal = get_problem("thermal_square")
    assert (thermal.n_comp, thermal.tau, thermal.gamma) == (1, 10.0, 1e2)
    elastic = get_problem("elasticity_square")
    assert elastic.n_comp == 2
    assert (elastic.tau, elastic.default_gamma(), elastic.default_gamma(mixed_degree=True)) == (250.0, 2.5e3, 2.5e4)
    assert elastic.materials[1].nu == 0.49999
    cook = get_problem("cooks_membrane", nu_hdg=0.3)
    assert (cook.tau, cook.gamma, cook.tip) == (10.0, 1e4, COOK_TIP)
    assert cook.materials[1].nu == 0.3
    with pytest.raises(UnknownProblemError):
        get_problem("l_shape")


def test_grid_size_doubles():
    problem = get_problem("thermal_square")
    assert [problem.grid_size(level) for level in range(4)] == [2, 4, 8, 16]
    with pytest.raises(SolverError):
        problem.grid_size(-1)


def test_checkerboard_materials():
    problem = get_problem("elasticity_square")
    mesh = problem.build_mesh(0)
    cg = mesh.elements_in(Subdomain.CG)
    np.testing.assert_array_equal(problem.element_materials(mesh, cg), 0)
    np.testing.assert_array_equal(problem.element_materials(mesh, mesh.elements_in(Subdomain.HDG)), 1)
    assert len(mesh.faces_of_class(FaceClass.INTERFACE)) == 4
    D = problem.constitutive(mesh, cg)
    root = problem.sqrt_constitutive(mesh, cg)
    np.testing.assert_allclose(root[0] @ root[0], D[0], rtol=1e-12)


def test_cook_traction():
    problem = problem_cooks_membrane()
    assert cook_right_edge_length() == pytest.approx(16.0)
    assert problem.metadata["traction"] == pytest.approx(6.25)
    t = problem.traction(np.array([[48.0, 50.0], [24.0, 52.0]]))
    np.testing.assert_allclose(t, [[0.0, 6.25], [0.0, 0.0]])
    np.testing.assert_allclose(problem.dirichlet(np.zeros((3, 2))), 0.0)


def test_cook_rejects_incompressible_soft_material():
    with pytest.raises(MaterialError):
        problem_cooks_membrane(nu_hdg=0.5)


def test_inside_convex_is_strict():
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    assert inside_convex(0.5, 0.5, square)
    assert not inside_convex(1.0, 0.5, square)
    assert not inside_convex(1.5, 0.5, square)


def _subdomain_points(problem_name, subdomain, n=100, margin=0.01, seed=7):
    """Random points of one subdomain, kept a margin away from material and subdomain boundaries"""
    rng = np.random.default_rng(seed + int(subdomain))
    a = rng.uniform(margin, 1.0 - margin, size=(n, 2))
    signs = rng.choice([-1.0, 1.0], size=n)
    if problem_name == "thermal_square":
        side = 1.0 if subdomain == Subdomain.CG else -1.0
        return np.stack([side * a[:, 0], signs * a[:, 1]], axis=-1)
    # checkerboard: CG where x * y > 0
    flip = 1.0 if subdomain == Subdomain.CG else -1.0
    return np.stack([signs * a[:, 0], flip * signs * a[:, 1]], axis=-1)


def _minus_laplacian(field, points, h=STEP):
    shifts = [np.array([h, 0.0]), np.array([-h, 0.0]), np.array([0.0, h]), np.array([0.0, -h])]
    total = sum(field(points + s) for s in shifts)
    return -(total - 4.0 * field(points)) / (h * h)


def _minus_divergence(stress, points, h=1e-5):
    dx = (stress(points + [h, 0.0]) - stress(points - [h, 0.0])) / (2 * h)
    dy = (stress(points + [0.0, h]) - stress(points - [0.0, h])) / (2 * h)
    return -np.stack([dx[:, 0] + dy[:, 2], dx[:, 2] + dy[:, 1]], axis=-1)


@pytest.mark.parametrize("subdomain", [Subdomain.CG, Subdomain.HDG])
def test_thermal_source_matches_differences_per_subdomain(subdomain):
    problem = get_problem("thermal_square")
    points = _subdomain_points("thermal_square", subdomain)
    assert np.all(problem.spec.predicate(points[:, 0], points[:, 1]) == int(subdomain))
    source = problem.source(points)
    fd = _minus_laplacian(problem.exact, points)
    np.testing.assert_allclose(source, fd, rtol=1e-5, atol=1e-5 * np.abs(source).max())


@pytest.mark.parametrize("nu_hdg", [0.3, 0.49999])
@pytest.mark.parametrize("theta", [1, 2])
@pytest.mark.parametrize("subdomain", [Subdomain.CG, Subdomain.HDG])
def test_elasticity_source_matches_differences_per_subdomain(subdomain, theta, nu_hdg):
    problem = get_problem("elasticity_square", theta=theta, nu_hdg=nu_hdg)
    points = _subdomain_points("elasticity_square", subdomain)
    assert np.all(problem.spec.predicate(points[:, 0], points[:, 1]) == int(subdomain))
    source = problem.source(points)
    fd = _minus_divergence(problem.exact_stress, points)
    np.testing.assert_allclose(source, fd, rtol=1e-4, atol=1e-4 * np.abs(source).max())

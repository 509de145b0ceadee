"""Manufactured solutions and engineering test cases.

All callables are vectorized over points of shape (..., 2) and return
(..., n_comp) arrays.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple
import logging

import numpy as np

from app.solver.cg_assembly import VectorField
from app.solver.errors import MaterialError, SolverError
from app.solver.mesh import FaceClass, Mesh, Subdomain, SubdomainSpec, build_mapped, build_structured
from app.solver.voigt import FieldOperators, Material, elasticity_matrix_D, sqrt_D

logger = logging.getLogger(__name__)

GEOMETRY_TOLERANCE = 1e-9
TAYLOR_RADIUS = 1e-8

COOK_CORNERS = np.array([[0.0, 0.0], [48.0, 44.0], [48.0, 60.0], [0.0, 44.0]])
COOK_INNER = np.array([[12.0, 20.25], [36.0, 38.75], [36.0, 50.25], [12.0, 38.75]])
COOK_TIP = (48.0, 60.0)
COOK_LOAD = 100.0


class UnknownProblemError(SolverError, ValueError):
    pass


def _xy(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    points = np.asarray(points, dtype=float)
    return points[..., 0], points[..., 1]


# Thermal

def thermal_exact(x, y):
    return np.cos(0.5 * np.pi * np.hypot(x, y))


def thermal_gradient(x, y):
    a = 0.5 * np.pi
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.hypot(x, y)
    small = r < TAYLOR_RADIUS
    # -a sin(a r) / r -> -a^2 at the origin
    scale = np.where(small, -a * a, -a * np.sin(a * r) / np.where(small, 1.0, r))
    return np.stack([scale * x, scale * y], axis=-1)


def thermal_source(x, y):
    """-Laplace of thermal_exact, with the series limit near the origin"""
    a = 0.5 * np.pi
    r = np.hypot(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    small = r < TAYLOR_RADIUS
    safe = np.where(small, 1.0, r)
    regular = a * a * np.cos(a * r) + a * np.sin(a * r) / safe
    series = 2.0 * a ** 2 - (2.0 / 3.0) * a ** 4 * r ** 2
    return np.where(small, series, regular)


# Elasticity

def _elasticity_coefficients(E, nu):
    """a, b in u_x = a p + b g and u_y = a q + b g"""
    a = 2.0 * (1.0 + nu) / E
    b = (1.0 + nu) * (1.0 - 2.0 * nu) / ((1.0 + nu) * (1.0 - 2.0 * nu) + nu * E)
    return a, b


def elasticity_exact_params(x, y, E, nu) -> np.ndarray:
    a, b = _elasticity_coefficients(E, nu)
    tp = 2.0 * np.pi
    g = x * y * np.sin(np.pi * x) * np.sin(np.pi * y)
    ux = a * np.sin(tp * y) * (-1.0 + np.cos(tp * x)) + b * g
    uy = a * np.sin(tp * x) * (1.0 - np.cos(tp * y)) + b * g
    return np.stack([ux, uy], axis=-1)


def _constitutive_entries(E, nu, theta):
    lam = E / ((1.0 + nu) * (1.0 - theta * nu))
    return lam * (1.0 + (1.0 - theta) * nu), lam * nu, lam * 0.5 * (1.0 - theta * nu)


def elasticity_stress_params(x, y, E, nu, theta) -> np.ndarray:
    """Voigt stress (s_xx, s_yy, s_xy) = D grad_S u of the exact displacement"""
    a, b = _elasticity_coefficients(E, nu)
    pi, tp = np.pi, 2.0 * np.pi
    s2x, c2x, s2y, c2y = np.sin(tp * x), np.cos(tp * x), np.sin(tp * y), np.cos(tp * y)
    p_x, p_y = -tp * s2y * s2x, tp * c2y * (c2x - 1.0)
    q_x, q_y = tp * c2x * (1.0 - c2y), tp * s2x * s2y
    X, Y = x * np.sin(pi * x), y * np.sin(pi * y)
    g_x = (np.sin(pi * x) + pi * x * np.cos(pi * x)) * Y
    g_y = X * (np.sin(pi * y) + pi * y * np.cos(pi * y))

    e_xx = a * p_x + b * g_x
    e_yy = a * q_y + b * g_y
    g_xy = a * (p_y + q_x) + b * (g_x + g_y)
    d11, d12, d33 = _constitutive_entries(E, nu, theta)
    return np.stack([d11 * e_xx + d12 * e_yy, d12 * e_xx + d11 * e_yy, d33 * g_xy], axis=-1)


def elasticity_source_params(x, y, E, nu, theta) -> np.ndarray:
    """-div(D grad_S u) from closed-form second derivatives"""
    a, b = _elasticity_coefficients(E, nu)
    pi, tp = np.pi, 2.0 * np.pi
    c4 = tp * tp
    s2x, c2x, s2y, c2y = np.sin(tp * x), np.cos(tp * x), np.sin(tp * y), np.cos(tp * y)
    p_xx, p_yy, p_xy = -c4 * s2y * c2x, -c4 * s2y * (c2x - 1.0), -c4 * c2y * s2x
    q_xx, q_yy, q_xy = -c4 * s2x * (1.0 - c2y), c4 * s2x * c2y, c4 * c2x * s2y

    X, Y = x * np.sin(pi * x), y * np.sin(pi * y)
    X1 = np.sin(pi * x) + pi * x * np.cos(pi * x)
    Y1 = np.sin(pi * y) + pi * y * np.cos(pi * y)
    X2 = 2.0 * pi * np.cos(pi * x) - pi * pi * x * np.sin(pi * x)
    Y2 = 2.0 * pi * np.cos(pi * y) - pi * pi * y * np.sin(pi * y)
    g_xx, g_yy, g_xy = X2 * Y, X * Y2, X1 * Y1

    ux_xx, ux_yy, ux_xy = a * p_xx + b * g_xx, a * p_yy + b * g_yy, a * p_xy + b * g_xy
    uy_xx, uy_yy, uy_xy = a * q_xx + b * g_xx, a * q_yy + b * g_yy, a * q_xy + b * g_xy

    d11, d12, d33 = _constitutive_entries(E, nu, theta)
    fx = -(d11 * ux_xx + d12 * uy_xy + d33 * (ux_yy + uy_xy))
    fy = -(d33 * (ux_xy + uy_xx) + d12 * ux_xy + d11 * uy_yy)
    return np.stack([fx, fy], axis=-1)


def elasticity_exact(x, y, mat: Material) -> np.ndarray:
    return elasticity_exact_params(np.asarray(x, float), np.asarray(y, float), mat.E, mat.nu)


def elasticity_source(x, y, mat: Material) -> np.ndarray:
    return elasticity_source_params(np.asarray(x, float), np.asarray(y, float), mat.E, mat.nu, mat.theta)


# Problem definitions

RegionMap = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ProblemDefinition:
    name: str
    physics: str  # "thermal" | "elasticity"
    spec: SubdomainSpec
    source: Optional[VectorField]
    dirichlet: Optional[VectorField]
    traction: Optional[VectorField] = None
    exact: Optional[VectorField] = None
    exact_stress: Optional[VectorField] = None  # Voigt stress, or grad u for thermal
    domain: Optional[Tuple[float, float, float, float]] = None
    corners: Optional[np.ndarray] = None
    materials: Tuple[Material, ...] = ()
    region: Optional[RegionMap] = None  # point -> index into materials
    tau: float = 10.0
    gamma: float = 1.0e2
    gamma_mixed: Optional[float] = None
    tip: Optional[Tuple[float, float]] = None
    metadata: Dict[str, float] = field(default_factory=dict)

    @property
    def ops(self) -> FieldOperators:
        return FieldOperators.elasticity() if self.physics == "elasticity" else FieldOperators.thermal()

    @property
    def n_comp(self) -> int:
        return self.ops.n_comp

    def default_gamma(self, mixed_degree: bool = False) -> float:
        if mixed_degree and self.gamma_mixed is not None:
            return self.gamma_mixed
        return self.gamma

    def grid_size(self, level: int) -> int:
        if level < 0:
            raise SolverError(f"refinement level must be >= 0, got {level}")
        return 2 ** (level + 1)

    def build_mesh(self, level: int) -> Mesh:
        n = self.grid_size(level)
        if self.corners is not None:
            return build_mapped(n, n, self.corners, self.spec)
        return build_structured(n, n, self.domain, self.spec)

    def material_at(self, points: np.ndarray) -> np.ndarray:
        x, y = _xy(points)
        if self.region is None:
            return np.zeros(np.shape(x), dtype=np.intp)
        return np.asarray(self.region(x, y), dtype=np.intp)

    def element_materials(self, mesh: Mesh, elements: np.ndarray) -> np.ndarray:
        """Material index per element, chosen at the barycenter"""
        return self.material_at(mesh.barycenters()[elements])

    def constitutive(self, mesh: Mesh, elements: np.ndarray) -> np.ndarray:
        ops = self.ops
        if not ops.is_elasticity:
            return np.broadcast_to(np.eye(2), (len(elements), 2, 2))
        table = np.stack([elasticity_matrix_D(m, 2) for m in self.materials])
        return table[self.element_materials(mesh, elements)]

    def sqrt_constitutive(self, mesh: Mesh, elements: np.ndarray) -> np.ndarray:
        ops = self.ops
        if not ops.is_elasticity:
            return np.broadcast_to(np.eye(2), (len(elements), 2, 2))
        table = np.stack([sqrt_D(elasticity_matrix_D(m, 2)) for m in self.materials])
        return table[self.element_materials(mesh, elements)]


def _scalar(fn: Callable) -> VectorField:
    def field_fn(points):
        x, y = _xy(points)
        return np.asarray(fn(x, y), dtype=float)[..., None]
    return field_fn


def _on_line(values: np.ndarray, target: float) -> np.ndarray:
    return np.abs(values - target) < GEOMETRY_TOLERANCE


def problem_thermal_square() -> ProblemDefinition:
    """Omega = [-1,1]^2, CG for x > 0, HDG for x < 0, Dirichlet everywhere"""
    spec = SubdomainSpec(
        predicate=lambda x, y: np.where(x > 0.0, int(Subdomain.CG), int(Subdomain.HDG)),
        boundary_labeler=lambda x, y: np.full(np.shape(x), int(FaceClass.DIRICHLET)),
    )
    exact = _scalar(thermal_exact)

    def thermal_gradient_field(points):
        return thermal_gradient(*_xy(points))

    return ProblemDefinition(
        name="thermal_square",
        physics="thermal",
        spec=spec,
        source=_scalar(thermal_source),
        dirichlet=exact,
        exact=exact,
        exact_stress=thermal_gradient_field,
        domain=(-1.0, 1.0, -1.0, 1.0),
        tau=10.0,
        gamma=1.0e2,
    )


def _region_fields(materials: Tuple[Material, ...], region: RegionMap):
    E = np.array([m.E for m in materials])
    nu = np.array([m.nu for m in materials])
    theta = np.array([m.theta for m in materials], dtype=float)

    def exact(points):
        x, y = _xy(points)
        idx = np.asarray(region(x, y), dtype=np.intp)
        return elasticity_exact_params(x, y, E[idx], nu[idx])

    def source(points):
        x, y = _xy(points)
        idx = np.asarray(region(x, y), dtype=np.intp)
        return elasticity_source_params(x, y, E[idx], nu[idx], theta[idx])

    def stress(points):
        x, y = _xy(points)
        idx = np.asarray(region(x, y), dtype=np.intp)
        return elasticity_stress_params(x, y, E[idx], nu[idx], theta[idx])

    return exact, source, stress


def problem_elasticity_square(theta: int = 2, nu_soft: float = 0.49999) -> ProblemDefinition:
    """Checkerboard bimaterial square: stiff CG quadrants (-,-) and (+,+)"""
    stiff = Material(E=250.0, nu=0.3, theta=theta)
    soft = Material(E=25.0, nu=nu_soft, theta=theta)
    materials = (stiff, soft)

    def region(x, y):
        return np.where(x * y > 0.0, 0, 1)

    spec = SubdomainSpec(
        predicate=lambda x, y: np.where(x * y > 0.0, int(Subdomain.CG), int(Subdomain.HDG)),
        boundary_labeler=lambda x, y: np.full(np.shape(x), int(FaceClass.DIRICHLET)),
    )
    exact, source, stress = _region_fields(materials, region)
    return ProblemDefinition(
        name="elasticity_square",
        physics="elasticity",
        spec=spec,
        source=source,
        dirichlet=exact,
        exact=exact,
        exact_stress=stress,
        domain=(-1.0, 1.0, -1.0, 1.0),
        materials=materials,
        region=region,
        tau=2.5e2,
        gamma=2.5e3,
        gamma_mixed=2.5e4,
    )


def inside_convex(x, y, polygon: np.ndarray) -> np.ndarray:
    """True for points strictly inside a counterclockwise convex polygon"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside = np.ones(np.shape(x), dtype=bool)
    for a, b in zip(polygon, np.roll(polygon, -1, axis=0)):
        cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0])
        inside &= cross > 0.0
    return inside


def cook_right_edge_length() -> float:
    return float(np.linalg.norm(COOK_CORNERS[2] - COOK_CORNERS[1]))


def problem_cooks_membrane(nu_hdg: float = 0.4999, theta: int = 2) -> ProblemDefinition:
    """Clamped on x = 0, vertical shear load of resultant 100 on x = 48"""
    if not nu_hdg < 0.5:
        raise MaterialError(f"Poisson ratio of the HDG material must be below 0.5, got {nu_hdg}")
    stiff = Material(E=250.0, nu=0.35, theta=theta)
    soft = Material(E=80.0, nu=nu_hdg, theta=theta)
    materials = (stiff, soft)

    def region(x, y):
        return np.where(inside_convex(x, y, COOK_INNER), 0, 1)

    spec = SubdomainSpec(
        predicate=lambda x, y: np.where(inside_convex(x, y, COOK_INNER), int(Subdomain.CG), int(Subdomain.HDG)),
        boundary_labeler=lambda x, y: np.where(_on_line(x, 0.0), int(FaceClass.DIRICHLET), int(FaceClass.NEUMANN)),
    )
    shear = COOK_LOAD / cook_right_edge_length()

    def traction(points):
        x, _ = _xy(points)
        t = np.zeros(np.shape(x) + (2,))
        t[..., 1] = np.where(_on_line(x, COOK_CORNERS[1, 0]), shear, 0.0)
        return t

    def clamp(points):
        return np.zeros(np.shape(points)[:-1] + (2,))

    return ProblemDefinition(
        name="cooks_membrane",
        physics="elasticity",
        spec=spec,
        source=None,
        dirichlet=clamp,
        traction=traction,
        corners=COOK_CORNERS,
        materials=materials,
        region=region,
        tau=10.0,
        gamma=1.0e4,
        gamma_mixed=1.0e4,
        tip=COOK_TIP,
        metadata={"nu_hdg": nu_hdg, "traction": shear},
    )


PROBLEMS = {
    "thermal_square": problem_thermal_square,
    "elasticity_square": problem_elasticity_square,
    "cooks_membrane": problem_cooks_membrane,
}


def get_problem(name: str, theta: int = 2, nu_hdg: Optional[float] = None) -> ProblemDefinition:
    if name not in PROBLEMS:
        raise UnknownProblemError(f"unknown problem {name!r}; choose one of {sorted(PROBLEMS)}")
    if name == "thermal_square":
        return problem_thermal_square()
    if name == "elasticity_square":
        return problem_elasticity_square(theta=theta) if nu_hdg is None else problem_elasticity_square(theta, nu_hdg)
    return problem_cooks_membrane(nu_hdg=0.4999 if nu_hdg is None else nu_hdg, theta=theta)

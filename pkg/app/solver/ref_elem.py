"""Nodal Lagrange bases and quadrature on the reference triangle and segment.

Reference triangle: vertices (0,0), (1,0), (0,1). Reference segment: [0, 1].
Local face i of a triangle runs from vertex i to vertex i+1 (counterclockwise).
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple
import logging

import numpy as np
from scipy.special import roots_jacobi

from app.solver.errors import DegenerateElementError, DegreeError, QuadratureError

logger = logging.getLogger(__name__)

MAX_DEGREE = 6
MAX_QUADRATURE_ORDER = 30

# Reference coordinates of the three local faces as functions of s in [0, 1]
_FACE_ORIGIN = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
_FACE_DIRECTION = np.array([[1.0, 0.0], [-1.0, 1.0], [0.0, -1.0]])


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,)
    order: int
    dim: int

    @property
    def size(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class BasisTable:
    values: np.ndarray  # (nq, nb)
    gradients: np.ndarray  # (nq, nb, dim), reference gradients


@dataclass(frozen=True)
class ReferenceElement:
    degree: int
    dim: int
    nodes: np.ndarray  # (nb, dim)
    exponents: np.ndarray  # (nb, dim) monomial exponents in shifted coordinates
    coefficients: np.ndarray  # (nb, nb) inverse Vandermonde
    face_nodes: Tuple[np.ndarray, ...]  # triangle only: local node ids along each face

    @property
    def size(self) -> int:
        return len(self.nodes)

    def _monomials(self, points: np.ndarray) -> np.ndarray:
        shifted = 2.0 * np.atleast_2d(points) - 1.0
        return np.prod(shifted[:, None, :] ** self.exponents[None, :, :], axis=2)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Basis values, shape (n_points, nb)"""
        return self._monomials(points) @ self.coefficients

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """Reference gradients, shape (n_points, nb, dim)"""
        shifted = 2.0 * np.atleast_2d(points) - 1.0
        grads = np.empty((shifted.shape[0], self.size, self.dim))
        for d in range(self.dim):
            lowered = self.exponents.copy()
            lowered[:, d] = np.maximum(lowered[:, d] - 1, 0)
            factor = 2.0 * self.exponents[:, d]
            dmono = factor[None, :] * np.prod(shifted[:, None, :] ** lowered[None, :, :], axis=2)
            grads[:, :, d] = dmono @ self.coefficients
        return grads


def _triangle_lattice(k: int) -> Tuple[np.ndarray, Tuple[np.ndarray, ...]]:
    """Uniform lattice ordered vertices, edge interiors (edge i from vertex i to
    i+1), then element interior."""
    vertices = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    edges = []
    for i in range(3):
        origin, direction = _FACE_ORIGIN[i], _FACE_DIRECTION[i]
        edges.append([tuple(origin + direction * m / k) for m in range(1, k)])
    interior = [(i / k, j / k) for j in range(1, k) for i in range(1, k - j)]
    nodes = np.array(vertices + [p for edge in edges for p in edge] + interior)

    face_nodes = []
    for i in range(3):
        start = 3 + i * (k - 1)
        along = list(range(start, start + k - 1))
        face_nodes.append(_frozen(np.array([i] + along + [(i + 1) % 3], dtype=np.intp)))
    return nodes, tuple(face_nodes)


@lru_cache(maxsize=None)
def lagrange_basis(k: int, dim: int = 2) -> ReferenceElement:
    """Nodal Lagrange basis of complete degree k on the reference simplex"""
    if not 1 <= k <= MAX_DEGREE:
        raise DegreeError(f"polynomial degree {k} outside [1, {MAX_DEGREE}]")
    if dim == 2:
        nodes, face_nodes = _triangle_lattice(k)
        exponents = np.array([(a, b) for total in range(k + 1) for b in range(total + 1) for a in [total - b]])
    elif dim == 1:
        nodes = (np.arange(k + 1) / k)[:, None]
        face_nodes = ()
        exponents = np.arange(k + 1)[:, None]
    else:
        raise DegreeError(f"reference elements exist for dim 1 and 2, got {dim}")

    shifted = 2.0 * nodes - 1.0
    vandermonde = np.prod(shifted[:, None, :] ** exponents[None, :, :], axis=2)
    coefficients = np.linalg.inv(vandermonde)
    logger.debug(f"Built P{k} basis on dim={dim} with {len(nodes)} nodes")
    return ReferenceElement(
        degree=k,
        dim=dim,
        nodes=_frozen(nodes),
        exponents=_frozen(exponents),
        coefficients=_frozen(coefficients),
        face_nodes=face_nodes,
    )


def _gauss_points(order: int) -> int:
    return max(1, int(np.ceil((order + 1) / 2)))


@lru_cache(maxsize=None)
def simplex_quadrature(order: int, dim: int = 2) -> QuadratureRule:
    """Gauss rule on the reference simplex exact for total degree <= order.

    The triangle rule collapses the square onto the triangle (Duffy) and uses
    Gauss-Jacobi(1, 0) in the collapsed direction, so all weights are positive.
    """
    if order < 1:
        raise QuadratureError(f"quadrature order must be >= 1, got {order}")
    if order > MAX_QUADRATURE_ORDER:
        raise QuadratureError(f"quadrature order {order} beyond the implemented maximum {MAX_QUADRATURE_ORDER}")
    n = _gauss_points(order)
    legendre_x, legendre_w = roots_jacobi(n, 0.0, 0.0)
    if dim == 1:
        points = (0.5 * (legendre_x + 1.0))[:, None]
        weights = 0.5 * legendre_w
    elif dim == 2:
        jacobi_x, jacobi_w = roots_jacobi(n, 1.0, 0.0)
        u = 0.5 * (jacobi_x + 1.0)
        v = 0.5 * (legendre_x + 1.0)
        uu, vv = np.meshgrid(u, v, indexing="ij")
        points = np.column_stack([uu.ravel(), ((1.0 - uu) * vv).ravel()])
        weights = np.outer(0.25 * jacobi_w, 0.5 * legendre_w).ravel()
    else:
        raise QuadratureError(f"quadrature exists for dim 1 and 2, got {dim}")
    return QuadratureRule(points=_frozen(points), weights=_frozen(weights), order=order, dim=dim)


@lru_cache(maxsize=None)
def tabulate(k: int, dim: int, order: int) -> BasisTable:
    """Basis values and reference gradients at the points of simplex_quadrature(order, dim)"""
    ref = lagrange_basis(k, dim)
    rule = simplex_quadrature(order, dim)
    return BasisTable(values=_frozen(ref.evaluate(rule.points)), gradients=_frozen(ref.gradient(rule.points)))


def face_points(face: int, s: np.ndarray) -> np.ndarray:
    """Reference triangle coordinates of the points s in [0, 1] along local face"""
    s = np.asarray(s, dtype=float)
    return _FACE_ORIGIN[face] + s[:, None] * _FACE_DIRECTION[face]


@lru_cache(maxsize=None)
def tabulate_faces(k: int, order: int) -> BasisTable:
    """Triangle basis on the segment rule points of each local face.

    values (3, nq, nb), gradients (3, nq, nb, 2); the point order follows the
    local face direction.
    """
    ref = lagrange_basis(k, 2)
    rule = simplex_quadrature(order, 1)
    s = rule.points[:, 0]
    values = np.stack([ref.evaluate(face_points(i, s)) for i in range(3)])
    grads = np.stack([ref.gradient(face_points(i, s)) for i in range(3)])
    return BasisTable(values=_frozen(values), gradients=_frozen(grads))


@lru_cache(maxsize=None)
def tabulate_oriented_faces(k: int, order: int) -> BasisTable:
    """Face tables for both orientations of a shared face.

    Indexed [local_face, side]: side 0 evaluates at the segment points s_q,
    side 1 at 1 - s_q, so both neighbours of a face see the same physical
    points in the order of its left element.
    """
    ref = lagrange_basis(k, 2)
    s = simplex_quadrature(order, 1).points[:, 0]
    params = (s, 1.0 - s)
    values = np.stack([np.stack([ref.evaluate(face_points(i, t)) for t in params]) for i in range(3)])
    grads = np.stack([np.stack([ref.gradient(face_points(i, t)) for t in params]) for i in range(3)])
    return BasisTable(values=_frozen(values), gradients=_frozen(grads))


@lru_cache(maxsize=None)
def tabulate_trace(k: int, order: int) -> np.ndarray:
    """Segment basis of degree k at the segment rule points, (nq, k+1)"""
    ref = lagrange_basis(k, 1)
    return _frozen(ref.evaluate(simplex_quadrature(order, 1).points))


@dataclass(frozen=True)
class AffineMaps:
    """Geometry of a batch of affine triangles"""
    jacobian: np.ndarray  # (ne, 2, 2), columns v1-v0 and v2-v0
    det: np.ndarray  # (ne,)
    inverse_transpose: np.ndarray  # (ne, 2, 2)
    normals: np.ndarray  # (ne, 3, 2) outward unit normals per local face
    lengths: np.ndarray  # (ne, 3)
    origin: np.ndarray  # (ne, 2)

    def to_physical(self, ref_points: np.ndarray) -> np.ndarray:
        """(ne, n_points, 2) physical coordinates"""
        return self.origin[:, None, :] + np.einsum("eij,qj->eqi", self.jacobian, ref_points)

    def physical_gradients(self, ref_gradients: np.ndarray) -> np.ndarray:
        """Map reference gradients (..., 2) to (ne, ..., 2)"""
        return np.einsum("eij,...j->e...i", self.inverse_transpose, ref_gradients)

    def element_gradients(self, ref_gradients: np.ndarray) -> np.ndarray:
        """Like physical_gradients for per-element tables (ne, ..., 2)"""
        return np.einsum("eij,e...j->e...i", self.inverse_transpose, ref_gradients)


def affine_maps(vertices: np.ndarray) -> AffineMaps:
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim == 2:
        vertices = vertices[None]
    jac = np.stack([vertices[:, 1] - vertices[:, 0], vertices[:, 2] - vertices[:, 0]], axis=2)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]

    edges = np.roll(vertices, -1, axis=1) - vertices
    lengths = np.linalg.norm(edges, axis=2)
    scale = np.max(lengths, axis=1) ** 2
    bad = np.flatnonzero(det <= 1e-14 * scale)
    if bad.size:
        raise DegenerateElementError(
            f"element {int(bad[0])} has non-positive area (det J = {det[bad[0]]:.3e})"
        )

    inv_t = np.empty_like(jac)
    inv_t[:, 0, 0] = jac[:, 1, 1]
    inv_t[:, 0, 1] = -jac[:, 1, 0]
    inv_t[:, 1, 0] = -jac[:, 0, 1]
    inv_t[:, 1, 1] = jac[:, 0, 0]
    inv_t /= det[:, None, None]

    normals = np.stack([edges[:, :, 1], -edges[:, :, 0]], axis=2) / lengths[:, :, None]
    return AffineMaps(jacobian=jac, det=det, inverse_transpose=inv_t, normals=normals, lengths=lengths, origin=vertices[:, 0])


@dataclass(frozen=True)
class ElementMap:
    det: float
    jacobian: np.ndarray
    gradients: np.ndarray  # (nq, nb, 2) physical gradients at the rule points
    normals: np.ndarray  # (3, 2)
    lengths: np.ndarray  # (3,)


def map_physical(vertices: np.ndarray, ref: ReferenceElement, rule: QuadratureRule = None) -> ElementMap:
    """Per-element tables for one positively oriented triangle"""
    if rule is None:
        rule = simplex_quadrature(2 * ref.degree + 2, 2)
    maps = affine_maps(np.asarray(vertices, dtype=float)[None])
    grads = maps.physical_gradients(ref.gradient(rule.points))[0]
    return ElementMap(
        det=float(maps.det[0]),
        jacobian=maps.jacobian[0],
        gradients=grads,
        normals=maps.normals[0],
        lengths=maps.lengths[0],
    )

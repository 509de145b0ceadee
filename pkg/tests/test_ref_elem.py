import math

import numpy as np
import pytest

from app.solver.errors import DegenerateElementError, DegreeError, QuadratureError
from app.solver.ref_elem import (
    affine_maps,
    lagrange_basis,
    map_physical,
    simplex_quadrature,
    tabulate_oriented_faces,
    tabulate_trace,
)


@pytest.mark.parametrize("k", range(1, 7))
def test_basis_is_nodal(k):
    ref = lagrange_basis(k, 2)
    assert ref.size == (k + 1) * (k + 2) // 2
    np.testing.assert_allclose(ref.evaluate(ref.nodes), np.eye(ref.size), atol=1e-10)


@pytest.mark.parametrize("k", [1, 3, 6])
def test_partition_of_unity(k):
    ref = lagrange_basis(k, 2)
    points = np.array([[0.1, 0.2], [0.3, 0.3], [0.05, 0.9]])
    np.testing.assert_allclose(ref.evaluate(points).sum(axis=1), 1.0, atol=1e-10)
    np.testing.assert_allclose(ref.gradient(points).sum(axis=1), 0.0, atol=1e-8)


def test_node_order_and_face_nodes():
    ref = lagrange_basis(2, 2)
    expected = [[0, 0], [1, 0], [0, 1], [0.5, 0], [0.5, 0.5], [0, 0.5]]
    np.testing.assert_allclose(ref.nodes, expected)
    assert ref.face_nodes[0].tolist() == [0, 3, 1]
    assert ref.face_nodes[1].tolist() == [1, 4, 2]
    assert ref.face_nodes[2].tolist() == [2, 5, 0]


def test_segment_basis():
    ref = lagrange_basis(3, 1)
    np.testing.assert_allclose(ref.nodes[:, 0], [0, 1 / 3, 2 / 3, 1])
    np.testing.assert_allclose(ref.evaluate(ref.nodes), np.eye(4), atol=1e-12)


def test_degree_out_of_range():
    with pytest.raises(DegreeError):
        lagrange_basis(0, 2)
    with pytest.raises(DegreeError):
        lagrange_basis(7, 2)
    with pytest.raises(DegreeError):
        lagrange_basis(1, 3)


def test_triangle_quadrature_moments():
    rule = simplex_quadrature(4, 2)
    assert rule.weights.sum() == pytest.approx(0.5)
    assert np.all(rule.weights > 0)
    xi, eta = rule.points.T
    assert rule.weights @ (xi ** 2 * eta ** 2) == pytest.approx(1.0 / 180.0, rel=1e-13)


def test_segment_quadrature_moments():
    rule = simplex_quadrature(3, 1)
    assert rule.weights.sum() == pytest.approx(1.0)
    assert rule.weights @ rule.points[:, 0] ** 3 == pytest.approx(0.25, rel=1e-13)


@pytest.mark.parametrize("order", [1, 5, 12, 30])
def test_triangle_quadrature_exact_to_order(order):
    rule = simplex_quadrature(order, 2)
    xi, eta = rule.points.T
    for a in range(order + 1):
        b = order - a
        exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
        assert rule.weights @ (xi ** a * eta ** b) == pytest.approx(exact, rel=1e-11)


def test_quadrature_order_checked():
    with pytest.raises(QuadratureError):
        simplex_quadrature(0, 2)
    with pytest.raises(QuadratureError):
        simplex_quadrature(31, 2)


def test_oriented_faces_reverse_points():
    table = tabulate_oriented_faces(2, 6)
    for face in range(3):
        np.testing.assert_allclose(table.values[face, 1], table.values[face, 0][::-1], atol=1e-13)


def test_trace_table_shape():
    assert tabulate_trace(2, 6).shape == (simplex_quadrature(6, 1).size, 3)


def test_affine_maps_of_reference_triangle():
    maps = affine_maps(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    assert maps.det[0] == pytest.approx(1.0)
    np.testing.assert_allclose(maps.normals[0], [[0, -1], [1 / math.sqrt(2), 1 / math.sqrt(2)], [-1, 0]], atol=1e-15)
    np.testing.assert_allclose(maps.lengths[0], [1, math.sqrt(2), 1])


def test_physical_gradients_of_scaled_element():
    element = map_physical(np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]]), lagrange_basis(1, 2))
    assert element.det == pytest.approx(4.0)
    np.testing.assert_allclose(element.gradients[0], [[-0.5, -0.5], [0.5, 0.0], [0.0, 0.5]])


def test_clockwise_element_is_degenerate():
    with pytest.raises(DegenerateElementError):
        affine_maps(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]))

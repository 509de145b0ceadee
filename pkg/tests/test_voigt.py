import numpy as np
import pytest
from pydantic import ValidationError

from app.solver.errors import MaterialError, NormalVectorError
from app.solver.voigt import (
    FieldOperators,
    Material,
    curl_W,
    derivative_blocks,
    elasticity_matrix_D,
    lambda_coeff,
    sqrt_D,
    strain_displacement_B,
    voigt_dims,
    voigt_normal_N,
    voigt_tangent_T,
)

P1_GRADIENTS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def test_dims():
    assert (voigt_dims(2).m_sd, voigt_dims(2).n_rr) == (3, 1)
    assert (voigt_dims(3).m_sd, voigt_dims(3).n_rr) == (6, 3)
    with pytest.raises(ValueError):
        voigt_dims(1)


def test_lambda_plane_strain():
    assert lambda_coeff(Material(E=250.0, nu=0.3, theta=2)) == pytest.approx(480.76923076923077, rel=1e-14)


def test_lambda_nearly_incompressible():
    assert lambda_coeff(Material(E=25.0, nu=0.49999, theta=2)) == pytest.approx(8.3334e5, rel=1e-4)


def test_lambda_infinite_at_half():
    with pytest.raises(MaterialError):
        lambda_coeff(Material.model_construct(E=1.0, nu=0.5, theta=2))


def test_material_validation():
    with pytest.raises(ValidationError):
        Material(E=1.0, nu=0.5)
    with pytest.raises(ValidationError):
        Material(E=0.0, nu=0.3)
    with pytest.raises(ValidationError):
        Material(E=1.0, nu=0.3, theta=3)


def test_D_without_poisson_effect():
    np.testing.assert_allclose(elasticity_matrix_D(Material(E=1.0, nu=0.0, theta=2)), np.diag([1.0, 1.0, 0.5]))


def test_D_plane_stress():
    D = elasticity_matrix_D(Material(E=1.0, nu=0.3, theta=1))
    assert D[0, 0] == pytest.approx(1.0 / 0.91)
    assert D[0, 1] == pytest.approx(0.3 / 0.91)
    assert D[2, 2] == pytest.approx(0.35 / 0.91)


def test_D_three_dimensional():
    D = elasticity_matrix_D(Material(E=2.0, nu=0.25), dim=3)
    assert D.shape == (6, 6)
    np.testing.assert_allclose(D, D.T)
    assert np.all(np.linalg.eigvalsh(D) > 0)


def test_sqrt_D():
    D = elasticity_matrix_D(Material(E=250.0, nu=0.3))
    root = sqrt_D(D)
    np.testing.assert_allclose(root, root.T)
    np.testing.assert_allclose(root @ root, D, rtol=1e-12)


def test_sqrt_D_requires_positive_definite():
    with pytest.raises(MaterialError):
        sqrt_D(np.diag([1.0, 0.0, 1.0]))


def test_normal_matrix_pattern():
    np.testing.assert_allclose(voigt_normal_N(np.array([1.0, 0.0])), [[1, 0], [0, 0], [0, 1]])
    n = np.array([0.6, 0.8])
    N = voigt_normal_N(n)
    np.testing.assert_allclose(N, [[0.6, 0], [0, 0.8], [0.8, 0.6]])
    sigma = np.array([3.0, -1.0, 2.0])
    tensor = np.array([[3.0, 2.0], [2.0, -1.0]])
    np.testing.assert_allclose(N.T @ sigma, tensor @ n)


def test_normal_matrix_batches():
    normals = np.array([[[1.0, 0.0], [0.0, 1.0]], [[0.6, 0.8], [-0.8, 0.6]]])
    assert voigt_normal_N(normals).shape == (2, 2, 3, 2)


def test_tangent_matrix():
    np.testing.assert_allclose(voigt_tangent_T(np.array([0.0, 1.0])), [[-1.0, 0.0]])
    assert voigt_tangent_T(np.array([0.0, 0.0, 1.0]), dim=3).shape == (3, 3)


def test_normal_must_be_unit():
    with pytest.raises(NormalVectorError):
        voigt_normal_N(np.array([1.0, 1.0]))
    with pytest.raises(NormalVectorError):
        voigt_normal_N(np.array([1.0, 0.0, 0.0]))


def test_strain_of_rotation_vanishes():
    # u = (-y, x) at the P1 nodes (0,0), (1,0), (0,1)
    u = np.array([0.0, 0.0, 0.0, 1.0, -1.0, 0.0])
    np.testing.assert_allclose(strain_displacement_B(P1_GRADIENTS) @ u, 0.0)
    np.testing.assert_allclose(curl_W(P1_GRADIENTS) @ u, [2.0])


def test_shear_strain_and_curl():
    # u = (y, 0)
    u = np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    np.testing.assert_allclose(strain_displacement_B(P1_GRADIENTS) @ u, [0.0, 0.0, 1.0])
    np.testing.assert_allclose(curl_W(P1_GRADIENTS) @ u, [-1.0])


def test_B_shape_and_gradient_check():
    assert strain_displacement_B(P1_GRADIENTS).shape == (3, 6)
    assert curl_W(P1_GRADIENTS).shape == (1, 6)
    with pytest.raises(ValueError):
        strain_displacement_B(P1_GRADIENTS, dim=3)


def test_derivative_blocks_rebuild_B():
    E = derivative_blocks(2)
    assert E.shape == (2, 3, 2)
    assert not E.flags.writeable
    ops = FieldOperators.elasticity()
    np.testing.assert_allclose(ops.gradient_operator(P1_GRADIENTS), strain_displacement_B(P1_GRADIENTS))


def test_thermal_operators():
    ops = FieldOperators.thermal()
    assert (ops.n_comp, ops.n_mixed, ops.is_elasticity) == (1, 2, False)
    np.testing.assert_allclose(ops.gradient_operator(P1_GRADIENTS), P1_GRADIENTS.T)
    np.testing.assert_allclose(ops.normal(np.array([0.0, -1.0])), [[0.0], [-1.0]])
    np.testing.assert_allclose(ops.constitutive(None), np.eye(2))


def test_elasticity_operators_need_material():
    ops = FieldOperators.elasticity()
    with pytest.raises(MaterialError):
        ops.constitutive(None)
    mat = Material(E=250.0, nu=0.3)
    np.testing.assert_allclose(ops.sqrt_constitutive(mat) @ ops.sqrt_constitutive(mat), ops.constitutive(mat))

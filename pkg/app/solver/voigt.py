"""Voigt-notation operators for linear elasticity in 2D and 3D.

Component order is xx, yy, [zz,] xy[, xz, yz] with engineering shear strains.
The thermal problem reuses the same machinery with D = I and N = n.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Optional
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.solver.errors import MaterialError, NormalVectorError

logger = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-12


class Material(BaseModel):
    """Isotropic linear elastic material"""
    model_config = ConfigDict(frozen=True)

    E: float = Field(..., gt=0, description="Young's modulus")
    nu: float = Field(..., gt=-1.0, lt=0.5, description="Poisson's ratio")
    theta: Literal[1, 2] = Field(2, description="1 = plane stress, 2 = plane strain")


@dataclass(frozen=True)
class VoigtDims:
    n_sd: int
    m_sd: int
    n_rr: int


def voigt_dims(n_sd: int) -> VoigtDims:
    if n_sd not in (2, 3):
        raise ValueError(f"Voigt operators exist for 2 and 3 dimensions, got {n_sd}")
    return VoigtDims(n_sd=n_sd, m_sd=n_sd * (n_sd + 1) // 2, n_rr=n_sd * (n_sd - 1) // 2)


def lambda_coeff(mat: Material, dim: int = 2) -> float:
    if dim == 2:
        denominator = (1.0 + mat.nu) * (1.0 - mat.theta * mat.nu)
    elif dim == 3:
        denominator = (1.0 + mat.nu) * (1.0 - 2.0 * mat.nu)
    else:
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if denominator == 0.0:
        raise MaterialError(f"material {mat} makes the Lame factor infinite")
    return mat.E / denominator


def elasticity_matrix_D(mat: Material, dim: int = 2) -> np.ndarray:
    lam = lambda_coeff(mat, dim)
    nu = mat.nu
    if dim == 2:
        diagonal = 1.0 + (1.0 - mat.theta) * nu
        shear = 0.5 * (1.0 - mat.theta * nu)
        pattern = np.array([
            [diagonal, nu, 0.0],
            [nu, diagonal, 0.0],
            [0.0, 0.0, shear],
        ])
    else:
        pattern = np.zeros((6, 6))
        pattern[:3, :3] = nu
        pattern[np.arange(3), np.arange(3)] = 1.0 - nu
        pattern[np.arange(3, 6), np.arange(3, 6)] = 0.5 * (1.0 - 2.0 * nu)
    return lam * pattern


def sqrt_D(D: np.ndarray) -> np.ndarray:
    """Symmetric positive square root by eigendecomposition"""
    w, v = np.linalg.eigh(D)
    if np.any(w <= 0.0):
        raise MaterialError(f"constitutive matrix is not positive definite (smallest eigenvalue {w.min():.3e})")
    return (v * np.sqrt(w)) @ v.T


def _check_unit(n: np.ndarray, dim: int) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    if n.shape[-1] != dim:
        raise NormalVectorError(f"expected {dim}-vectors, got shape {n.shape}")
    norms = np.linalg.norm(n, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
        raise NormalVectorError(f"normal vector is not of unit length (norm {np.max(np.abs(norms - 1.0)) + 1.0:.15g})")
    return n


def _symmetric_pattern(v: np.ndarray) -> np.ndarray:
    """The (m_sd, n_sd) block shared by N(n) and by B for one basis gradient"""
    v = np.asarray(v, dtype=float)
    zero = np.zeros(v.shape[:-1])
    if v.shape[-1] == 2:
        x, y = v[..., 0], v[..., 1]
        rows = [[x, zero], [zero, y], [y, x]]
    else:
        x, y, z = v[..., 0], v[..., 1], v[..., 2]
        rows = [
            [x, zero, zero],
            [zero, y, zero],
            [zero, zero, z],
            [y, x, zero],
            [z, zero, x],
            [zero, z, y],
        ]
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)


def _cross_pattern(v: np.ndarray) -> np.ndarray:
    """(n_rr, n_sd) block with v x (.) in 3D and its in-plane row in 2D"""
    v = np.asarray(v, dtype=float)
    zero = np.zeros(v.shape[:-1])
    if v.shape[-1] == 2:
        rows = [[-v[..., 1], v[..., 0]]]
    else:
        x, y, z = v[..., 0], v[..., 1], v[..., 2]
        rows = [[zero, -z, y], [z, zero, -x], [-y, x, zero]]
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)


def voigt_normal_N(n: np.ndarray, dim: int = 2) -> np.ndarray:
    """Normal matrix with N^T sigma_V = sigma n; accepts batches (..., dim)"""
    return _symmetric_pattern(_check_unit(n, dim))


def voigt_tangent_T(n: np.ndarray, dim: int = 2) -> np.ndarray:
    return _cross_pattern(_check_unit(n, dim))


def _blocks_to_matrix(blocks: np.ndarray) -> np.ndarray:
    # (n_en, rows, n_sd) -> (rows, n_sd * n_en) with node-major columns
    n_en, rows, n_sd = blocks.shape
    return blocks.transpose(1, 0, 2).reshape(rows, n_en * n_sd)


def strain_displacement_B(grad_phis: np.ndarray, dim: int = 2) -> np.ndarray:
    """B such that B @ u_nodal = grad_S u, u_nodal interleaved (node, component)"""
    grad_phis = np.atleast_2d(np.asarray(grad_phis, dtype=float))
    if grad_phis.shape[-1] != dim:
        raise ValueError(f"expected gradients of dimension {dim}, got {grad_phis.shape}")
    return _blocks_to_matrix(_symmetric_pattern(grad_phis))


def curl_W(grad_phis: np.ndarray, dim: int = 2) -> np.ndarray:
    """Curl rows applied to interleaved nodal displacements"""
    grad_phis = np.atleast_2d(np.asarray(grad_phis, dtype=float))
    if grad_phis.shape[-1] != dim:
        raise ValueError(f"expected gradients of dimension {dim}, got {grad_phis.shape}")
    return _blocks_to_matrix(_cross_pattern(grad_phis))


@lru_cache(maxsize=None)
def derivative_blocks(dim: int = 2) -> np.ndarray:
    """E[d] with grad_S = sum_d E[d] d/dx_d, shape (dim, m_sd, n_sd)"""
    blocks = _symmetric_pattern(np.eye(dim))
    blocks.setflags(write=False)
    return blocks


@dataclass(frozen=True)
class FieldOperators:
    """Physics description shared by the CG and HDG assemblers.

    n_comp unknown components per node, n_mixed components of the mixed
    variable; grad_S = sum_d E[d] d/dx_d and the flux is D grad_S u.
    """
    name: str
    n_comp: int
    n_mixed: int
    E: np.ndarray  # (2, n_mixed, n_comp)

    @classmethod
    def thermal(cls) -> "FieldOperators":
        return cls(name="thermal", n_comp=1, n_mixed=2, E=np.eye(2)[:, :, None])

    @classmethod
    def elasticity(cls) -> "FieldOperators":
        return cls(name="elasticity", n_comp=2, n_mixed=3, E=derivative_blocks(2))

    @property
    def is_elasticity(self) -> bool:
        return self.n_comp > 1

    def normal(self, n: np.ndarray) -> np.ndarray:
        """(..., n_mixed, n_comp) normal operator"""
        if self.is_elasticity:
            return voigt_normal_N(n, 2)
        return _check_unit(n, 2)[..., :, None]

    def constitutive(self, material: Optional[Material]) -> np.ndarray:
        if not self.is_elasticity:
            return np.eye(2)
        if material is None:
            raise MaterialError("elasticity needs a material")
        return elasticity_matrix_D(material, 2)

    def sqrt_constitutive(self, material: Optional[Material]) -> np.ndarray:
        if not self.is_elasticity:
            return np.eye(2)
        return sqrt_D(self.constitutive(material))

    def gradient_operator(self, grads: np.ndarray) -> np.ndarray:
        """Scalar basis gradients (..., nb, 2) -> grad_S rows (..., n_mixed, nb * n_comp)"""
        blocks = np.einsum("...bd,dmc->...mbc", grads, self.E)
        shape = blocks.shape
        return blocks.reshape(shape[:-2] + (shape[-2] * shape[-1],))

import os

# in-memory run registry for the API tests; must be set before app.database is imported
os.environ.setdefault("DATABASE_URL", "sqlite://")

import numpy as np
import pytest

from app.solver.mesh import FaceClass, Subdomain, SubdomainSpec, build_structured, loads

SQUARE = (-1.0, 1.0, -1.0, 1.0)
UNIT = (0.0, 1.0, 0.0, 1.0)


def split_spec(boundary: FaceClass = FaceClass.DIRICHLET) -> SubdomainSpec:
    """CG for x > 0, HDG for x < 0"""
    return SubdomainSpec(
        predicate=lambda x, y: np.where(x > 0.0, int(Subdomain.CG), int(Subdomain.HDG)),
        boundary_labeler=lambda x, y: np.full(np.shape(x), int(boundary)),
    )


@pytest.fixture
def unit_cg_mesh():
    return build_structured(1, 1, UNIT, SubdomainSpec.uniform(Subdomain.CG))


@pytest.fixture
def split_mesh():
    """2x2 grid of [-1,1]^2, CG right half, HDG left half"""
    return build_structured(2, 2, SQUARE, split_spec())


@pytest.fixture
def reference_triangle_mesh():
    return loads("NODES 3 ELEMENTS 1\n0 0\n1 0\n0 1\n0 1 2 0\n")


@pytest.fixture
def study_file(tmp_path):
    def write(text: str, name: str = "study.ini"):
        path = tmp_path / name
        path.write_text(text)
        return path
    return write

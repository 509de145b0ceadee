import io
import math

import numpy as np
import pytest

from app.solver.errors import MeshError, MeshFormatError
from app.solver.mesh import (
    NO_ELEMENT,
    FaceClass,
    Subdomain,
    SubdomainSpec,
    build_structured,
    characteristic_size,
    dumps,
    loads,
    read_mesh,
    refine_uniform,
    write_mesh,
)
from app.solver.problems import get_problem
from app.solver.ref_elem import affine_maps
from tests.conftest import UNIT


def test_single_cell(unit_cg_mesh):
    mesh = unit_cg_mesh
    assert (mesh.n_nodes, mesh.n_elements, mesh.n_faces) == (4, 2, 5)
    counts = mesh.class_counts()
    assert counts["CG_INTERIOR"] == 1
    assert counts["DIRICHLET"] == 4
    assert counts["INTERFACE"] == 0
    assert characteristic_size(mesh) == pytest.approx(math.sqrt(2.0))


def test_split_square_interface(split_mesh):
    assert split_mesh.n_elements == 8
    interface = split_mesh.faces_of_class(FaceClass.INTERFACE)
    assert len(interface) == 2
    np.testing.assert_allclose(split_mesh.face_midpoints()[interface][:, 0], 0.0)
    assert len(split_mesh.elements_in(Subdomain.CG)) == 4


def test_elements_are_counterclockwise(split_mesh):
    maps = affine_maps(split_mesh.element_vertices())
    assert np.all(maps.det > 0)


def test_shared_faces_have_opposite_normals(split_mesh):
    mesh = split_mesh
    maps = affine_maps(mesh.element_vertices())
    inner = np.flatnonzero(mesh.face_elements[:, 1] != NO_ELEMENT)
    left = maps.normals[mesh.face_elements[inner, 0], mesh.face_local[inner, 0]]
    right = maps.normals[mesh.face_elements[inner, 1], mesh.face_local[inner, 1]]
    np.testing.assert_allclose(left, -right, atol=1e-14)


def test_left_element_orients_face(split_mesh):
    mesh = split_mesh
    for f in range(mesh.n_faces):
        e, i = mesh.face_elements[f, 0], mesh.face_local[f, 0]
        assert mesh.faces[f].tolist() == [mesh.elements[e, i], mesh.elements[e, (i + 1) % 3]]


def test_refinement(split_mesh):
    fine = refine_uniform(split_mesh)
    assert fine.n_nodes == split_mesh.n_nodes + split_mesh.n_faces
    assert fine.n_elements == 4 * split_mesh.n_elements
    assert characteristic_size(fine) == pytest.approx(0.5 * characteristic_size(split_mesh))
    assert len(fine.faces_of_class(FaceClass.INTERFACE)) == 4
    assert len(fine.elements_in(Subdomain.HDG)) == 16


def test_refinement_keeps_boundary_labels():
    spec = SubdomainSpec(
        predicate=lambda x, y: np.zeros(np.shape(x), dtype=int),
        boundary_labeler=lambda x, y: np.where(np.abs(x - 1.0) < 1e-12, int(FaceClass.NEUMANN), int(FaceClass.DIRICHLET)),
    )
    mesh = refine_uniform(build_structured(2, 2, UNIT, spec))
    neumann = mesh.faces_of_class(FaceClass.NEUMANN)
    assert len(neumann) == 4
    np.testing.assert_allclose(mesh.face_midpoints()[neumann][:, 0], 1.0)


def test_with_subdomains_removes_interface(split_mesh):
    hdg = split_mesh.with_subdomains(Subdomain.HDG)
    assert len(hdg.faces_of_class(FaceClass.INTERFACE)) == 0
    assert hdg.class_counts()["HDG_INTERIOR"] == split_mesh.n_faces - 8
    np.testing.assert_array_equal(hdg.boundary_label, split_mesh.boundary_label)


def test_subdomain_boundary_must_follow_cells():
    spec = SubdomainSpec(
        predicate=lambda x, y: np.where(x > 0.25, int(Subdomain.CG), int(Subdomain.HDG)),
        boundary_labeler=lambda x, y: np.full(np.shape(x), int(FaceClass.DIRICHLET)),
    )
    with pytest.raises(MeshError):
        build_structured(2, 2, UNIT, spec)


def test_degenerate_rectangle():
    with pytest.raises(MeshError):
        build_structured(1, 1, (0.0, 0.0, 0.0, 1.0), SubdomainSpec.uniform(Subdomain.CG))


def test_cooks_membrane_needs_aligned_grid():
    problem = get_problem("cooks_membrane")
    with pytest.raises(MeshError):
        problem.build_mesh(0)
    mesh = problem.build_mesh(1)
    assert len(mesh.elements_in(Subdomain.CG)) == 8
    assert len(mesh.faces_of_class(FaceClass.INTERFACE)) == 8
    dirichlet = mesh.faces_of_class(FaceClass.DIRICHLET)
    np.testing.assert_allclose(mesh.face_midpoints()[dirichlet][:, 0], 0.0)


def test_text_format_round_trip(split_mesh):
    text = dumps(split_mesh)
    assert text.startswith("NODES 9 ELEMENTS 8\n")
    mesh = loads(text)
    np.testing.assert_array_equal(mesh.elements, split_mesh.elements)
    np.testing.assert_array_equal(mesh.face_class, split_mesh.face_class)
    stream = io.StringIO()
    write_mesh(mesh, stream)
    assert stream.getvalue() == text


def test_neumann_labels_survive_text_format():
    text = "NODES 3 ELEMENTS 1\n0 0\n1 0\n0 1\n0 1 2 1\nBFACES 1\n1 2 N\n"
    mesh = loads(text)
    assert mesh.class_counts()["NEUMANN"] == 1
    assert mesh.class_counts()["DIRICHLET"] == 2


@pytest.mark.parametrize(
    "text, lineno",
    [
        ("NODES 3 ELEMENTS 1\n0 0\n1 x\n0 1\n0 1 2 0\n", 3),
        ("NODES 3 ELEMENTS 1\n0 0\n1 0\n0 1\n0 1 2 7\n", 5),
        ("NODES 3 ELEMENTS 1\n0 0\n1 0\n0 1\n0 1 2 0\nBFACES 2\n0 1 D\n", 6),
        ("MESH\n", 1),
    ],
)
def test_format_errors_report_line(text, lineno):
    with pytest.raises(MeshFormatError) as info:
        read_mesh(io.StringIO(text))
    assert info.value.lineno == lineno
    assert f"line {lineno}" in str(info.value)


def test_clockwise_element_rejected():
    with pytest.raises(MeshError):
        loads("NODES 3 ELEMENTS 1\n0 0\n0 1\n1 0\n0 1 2 0\n")


def test_element_refers_to_missing_node():
    with pytest.raises(MeshError):
        loads("NODES 3 ELEMENTS 1\n0 0\n1 0\n0 1\n0 1 3 0\n")

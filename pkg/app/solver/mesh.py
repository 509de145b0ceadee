"""Structured simplicial meshes split into a CG and an HDG subdomain.

Faces are stored once, oriented counterclockwise with respect to their left
(first) element. The right element of a boundary face is -1.
"""
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Dict, Optional, Sequence, TextIO, Tuple, Union
import io
import logging
import re

import numpy as np

from app.solver.errors import MeshError, MeshFormatError

logger = logging.getLogger(__name__)

NO_ELEMENT = -1
NO_LABEL = -1

# Local face i of a triangle joins local vertices (i, i+1)
LOCAL_FACES = np.array([[0, 1], [1, 2], [2, 0]])


class Subdomain(IntEnum):
    CG = 0
    HDG = 1


class FaceClass(IntEnum):
    CG_INTERIOR = 0
    HDG_INTERIOR = 1
    INTERFACE = 2
    DIRICHLET = 3
    NEUMANN = 4


# Vectorized callables: arrays of x and y in, array of tags out
Predicate = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SubdomainSpec:
    predicate: Predicate  # barycenter -> Subdomain
    boundary_labeler: Predicate  # boundary face midpoint -> FaceClass.DIRICHLET / NEUMANN

    @classmethod
    def uniform(cls, subdomain: Subdomain, boundary: FaceClass = FaceClass.DIRICHLET) -> "SubdomainSpec":
        return cls(
            predicate=lambda x, y: np.full(np.shape(x), int(subdomain)),
            boundary_labeler=lambda x, y: np.full(np.shape(x), int(boundary)),
        )


@dataclass(frozen=True)
class Mesh:
    nodes: np.ndarray  # (n, 2)
    elements: np.ndarray  # (e, 3) counterclockwise
    elem_subdomain: np.ndarray  # (e,) Subdomain
    faces: np.ndarray  # (f, 2) node pair oriented by the left element
    face_elements: np.ndarray  # (f, 2) left, right element (NO_ELEMENT on the boundary)
    face_local: np.ndarray  # (f, 2) local face index in left, right element
    elem_faces: np.ndarray  # (e, 3) face id of each local face
    face_class: np.ndarray  # (f,) FaceClass
    boundary_label: np.ndarray  # (f,) DIRICHLET / NEUMANN on boundary faces, NO_LABEL inside
    _cache: Dict[str, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def element_vertices(self, elements: Optional[np.ndarray] = None) -> np.ndarray:
        ids = slice(None) if elements is None else elements
        return self.nodes[self.elements[ids]]

    def barycenters(self) -> np.ndarray:
        return self.element_vertices().mean(axis=1)

    def face_lengths(self) -> np.ndarray:
        if "lengths" not in self._cache:
            p = self.nodes[self.faces]
            self._cache["lengths"] = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
        return self._cache["lengths"]

    def face_midpoints(self) -> np.ndarray:
        return self.nodes[self.faces].mean(axis=1)

    def elements_in(self, subdomain: Subdomain) -> np.ndarray:
        return np.flatnonzero(self.elem_subdomain == subdomain)

    def faces_of_class(self, *classes: FaceClass) -> np.ndarray:
        return np.flatnonzero(np.isin(self.face_class, [int(c) for c in classes]))

    def is_boundary_face(self) -> np.ndarray:
        return self.face_elements[:, 1] == NO_ELEMENT

    def class_counts(self) -> Dict[str, int]:
        return {c.name: int(np.count_nonzero(self.face_class == c)) for c in FaceClass}

    def with_subdomains(self, tags: Union[np.ndarray, Subdomain]) -> "Mesh":
        """Same geometry and boundary labels, new element tags"""
        tags = np.broadcast_to(np.asarray(tags, dtype=np.int8), (self.n_elements,)).copy()
        labels = self.boundary_label
        face_lookup = {tuple(sorted(p)): labels[f] for f, p in enumerate(self.faces.tolist()) if labels[f] != NO_LABEL}
        return _classify(self.nodes, self.elements, tags, lambda pairs: [face_lookup[tuple(sorted(p))] for p in pairs.tolist()])


def signed_areas(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    p = nodes[elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _classify(
    nodes: np.ndarray,
    elements: np.ndarray,
    tags: np.ndarray,
    label_boundary: Callable[[np.ndarray], Sequence[int]],
) -> Mesh:
    """Build faces, adjacency and face classes"""
    nodes = np.asarray(nodes, dtype=float)
    elements = np.asarray(elements, dtype=np.intp)
    tags = np.asarray(tags, dtype=np.int8)
    if elements.ndim != 2 or elements.shape[1] != 3:
        raise MeshError("elements must be node triples")
    if np.any(elements < 0) or np.any(elements >= len(nodes)):
        raise MeshError("element refers to a node that does not exist")
    if not np.all(np.isin(tags, [int(Subdomain.CG), int(Subdomain.HDG)])):
        raise MeshError("every element needs a CG or HDG tag")

    areas = signed_areas(nodes, elements)
    if np.any(areas <= 0.0):
        bad = int(np.flatnonzero(areas <= 0.0)[0])
        raise MeshError(f"element {bad} is not positively oriented (signed area {areas[bad]:.3e})")

    n_el = len(elements)
    oriented = elements[:, LOCAL_FACES].reshape(-1, 2)
    keys = np.sort(oriented, axis=1)
    _, first, inverse, counts = np.unique(keys, axis=0, return_index=True, return_inverse=True, return_counts=True)
    inverse = np.ravel(inverse)
    if np.any(counts > 2):
        raise MeshError("a face is shared by more than two elements")

    n_faces = len(first)
    faces = oriented[first]
    face_elements = np.full((n_faces, 2), NO_ELEMENT, dtype=np.intp)
    face_local = np.full((n_faces, 2), NO_ELEMENT, dtype=np.intp)
    face_elements[:, 0] = first // 3
    face_local[:, 0] = first % 3
    slots = np.arange(3 * n_el)
    second = slots != first[inverse]
    face_elements[inverse[second], 1] = slots[second] // 3
    face_local[inverse[second], 1] = slots[second] % 3
    elem_faces = inverse.reshape(n_el, 3)

    # both neighbours must see the face with opposite orientation
    right = face_elements[:, 1] != NO_ELEMENT
    seen_by_right = np.take_along_axis(
        elements[face_elements[right, 1]], LOCAL_FACES[face_local[right, 1]], axis=1
    )
    if np.any(seen_by_right[:, 0] != faces[right, 1]) or np.any(seen_by_right[:, 1] != faces[right, 0]):
        raise MeshError("adjacent elements traverse a shared face in the same direction")

    face_class = np.empty(n_faces, dtype=np.int8)
    boundary_label = np.full(n_faces, NO_LABEL, dtype=np.int8)
    left_tag = tags[face_elements[:, 0]]
    right_tag = np.where(right, tags[np.where(right, face_elements[:, 1], 0)], -1)
    face_class[right & (left_tag == right_tag) & (left_tag == Subdomain.CG)] = FaceClass.CG_INTERIOR
    face_class[right & (left_tag == right_tag) & (left_tag == Subdomain.HDG)] = FaceClass.HDG_INTERIOR
    face_class[right & (left_tag != right_tag)] = FaceClass.INTERFACE

    boundary = np.flatnonzero(~right)
    if boundary.size:
        labels = np.asarray(label_boundary(faces[boundary]), dtype=np.int8)
        if not np.all(np.isin(labels, [int(FaceClass.DIRICHLET), int(FaceClass.NEUMANN)])):
            raise MeshError("boundary faces must be labelled DIRICHLET or NEUMANN")
        face_class[boundary] = labels
        boundary_label[boundary] = labels

    return Mesh(
        nodes=nodes,
        elements=elements,
        elem_subdomain=tags,
        faces=faces,
        face_elements=face_elements,
        face_local=face_local,
        elem_faces=elem_faces,
        face_class=face_class,
        boundary_label=boundary_label,
    )


def _grid(nx: int, ny: int) -> Tuple[np.ndarray, np.ndarray]:
    """Unit-square lattice; each cell split along its lower-left to upper-right
    diagonal. Cell c owns elements 2c and 2c+1."""
    if nx < 1 or ny < 1:
        raise MeshError(f"grid needs nx, ny >= 1, got {nx} x {ny}")
    s, t = np.meshgrid(np.linspace(0.0, 1.0, nx + 1), np.linspace(0.0, 1.0, ny + 1))
    unit = np.column_stack([s.ravel(), t.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n00 = (j * (nx + 1) + i).ravel()
    n10, n01, n11 = n00 + 1, n00 + nx + 1, n00 + nx + 2
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    elements = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return unit, elements


def _tag_elements(nodes: np.ndarray, elements: np.ndarray, spec: SubdomainSpec) -> np.ndarray:
    p = nodes[elements]
    bary = p.mean(axis=1)
    tags = np.asarray(spec.predicate(bary[:, 0], bary[:, 1]), dtype=np.int8)

    # sample points near each vertex and edge midpoint, pulled towards the barycenter
    samples = np.concatenate([p, 0.5 * (p + np.roll(p, -1, axis=1))], axis=1)
    samples = 0.75 * samples + 0.25 * bary[:, None, :]
    sample_tags = np.asarray(spec.predicate(samples[..., 0], samples[..., 1]), dtype=np.int8)
    straddling = np.any(sample_tags != tags[:, None], axis=1)
    if np.any(straddling):
        bad = int(np.flatnonzero(straddling)[0])
        raise MeshError(f"subdomain boundary cuts through element {bad} at {bary[bad].tolist()}")
    return tags


def _check_cells(tags: np.ndarray) -> None:
    pairs = tags.reshape(-1, 2)
    split = np.flatnonzero(pairs[:, 0] != pairs[:, 1])
    if split.size:
        raise MeshError(f"subdomain boundary cuts through grid cell {int(split[0])}")


def _label_by_midpoint(nodes: np.ndarray, spec: SubdomainSpec) -> Callable[[np.ndarray], np.ndarray]:
    def label(pairs: np.ndarray) -> np.ndarray:
        mid = nodes[pairs].mean(axis=1)
        return spec.boundary_labeler(mid[:, 0], mid[:, 1])
    return label


def build_structured(nx: int, ny: int, domain: Tuple[float, float, float, float], spec: SubdomainSpec) -> Mesh:
    """Diagonal-split grid of the rectangle domain = (x0, x1, y0, y1)"""
    x0, x1, y0, y1 = domain
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {domain}")
    unit, elements = _grid(nx, ny)
    nodes = np.column_stack([x0 + (x1 - x0) * unit[:, 0], y0 + (y1 - y0) * unit[:, 1]])
    tags = _tag_elements(nodes, elements, spec)
    _check_cells(tags)
    mesh = _classify(nodes, elements, tags, _label_by_midpoint(nodes, spec))
    logger.debug(f"Structured mesh {nx}x{ny}: {mesh.n_elements} elements, {mesh.class_counts()}")
    return mesh


def build_mapped(nx: int, ny: int, corners: np.ndarray, spec: SubdomainSpec) -> Mesh:
    """Unit-square grid pushed through the bilinear map onto the quadrilateral
    with counterclockwise corners (images of (0,0), (1,0), (1,1), (0,1))"""
    corners = np.asarray(corners, dtype=float)
    unit, elements = _grid(nx, ny)
    s, t = unit[:, :1], unit[:, 1:]
    nodes = (1 - s) * (1 - t) * corners[0] + s * (1 - t) * corners[1] + s * t * corners[2] + (1 - s) * t * corners[3]
    tags = _tag_elements(nodes, elements, spec)
    _check_cells(tags)
    return _classify(nodes, elements, tags, _label_by_midpoint(nodes, spec))


def refine_uniform(m: Mesh) -> Mesh:
    """Split every triangle into four by its edge midpoints"""
    n = m.n_nodes
    midpoints = m.face_midpoints()
    nodes = np.vstack([m.nodes, midpoints])
    a, b, c = m.elements.T
    m0, m1, m2 = (n + m.elem_faces).T
    children = np.stack(
        [
            np.column_stack([a, m0, m2]),
            np.column_stack([m0, b, m1]),
            np.column_stack([m2, m1, c]),
            np.column_stack([m0, m1, m2]),
        ],
        axis=1,
    ).reshape(-1, 3)
    tags = np.repeat(m.elem_subdomain, 4)

    def inherit(pairs: np.ndarray) -> np.ndarray:
        # every child boundary face joins an old vertex to a midpoint of its parent face
        return m.boundary_label[pairs.max(axis=1) - n]

    return _classify(nodes, children, tags, inherit)


def characteristic_size(m: Mesh) -> float:
    """Largest element diameter (longest edge)"""
    if m.n_elements == 0:
        raise MeshError("empty mesh has no characteristic size")
    return float(m.face_lengths().max())


# Plain-text mesh format

_HEADER = re.compile(r"^NODES\s+(\d+)\s+ELEMENTS\s+(\d+)\s*$")
_BFACES = re.compile(r"^BFACES\s+(\d+)\s*$")
_LABELS = {"D": FaceClass.DIRICHLET, "N": FaceClass.NEUMANN}


def write_mesh(m: Mesh, stream: TextIO) -> None:
    stream.write(f"NODES {m.n_nodes} ELEMENTS {m.n_elements}\n")
    for x, y in m.nodes:
        stream.write(f"{x:.17g} {y:.17g}\n")
    for (i0, i1, i2), tag in zip(m.elements, m.elem_subdomain):
        stream.write(f"{i0} {i1} {i2} {int(tag)}\n")
    boundary = np.flatnonzero(m.is_boundary_face())
    stream.write(f"BFACES {len(boundary)}\n")
    for f in boundary:
        label = "D" if m.boundary_label[f] == FaceClass.DIRICHLET else "N"
        stream.write(f"{m.faces[f, 0]} {m.faces[f, 1]} {label}\n")


def dumps(m: Mesh) -> str:
    buffer = io.StringIO()
    write_mesh(m, buffer)
    return buffer.getvalue()


def read_mesh(stream: TextIO) -> Mesh:
    lines = [(no, line.strip()) for no, line in enumerate(stream, start=1)]
    lines = [(no, line) for no, line in lines if line]
    if not lines:
        raise MeshFormatError("empty mesh file", 1)

    no, header = lines[0]
    match = _HEADER.match(header)
    if not match:
        raise MeshFormatError(f"expected 'NODES n ELEMENTS e', got {header!r}", no)
    n_nodes, n_elements = int(match.group(1)), int(match.group(2))
    body = lines[1:]
    if len(body) < n_nodes + n_elements:
        last = lines[-1][0]
        raise MeshFormatError(f"header announces {n_nodes} nodes and {n_elements} elements, file ends early", last)

    nodes = np.empty((n_nodes, 2))
    for row, (no, line) in enumerate(body[:n_nodes]):
        parts = line.split()
        if len(parts) != 2:
            raise MeshFormatError(f"node line needs 'x y', got {line!r}", no)
        try:
            nodes[row] = [float(parts[0]), float(parts[1])]
        except ValueError:
            raise MeshFormatError(f"bad coordinate in {line!r}", no)

    elements = np.empty((n_elements, 3), dtype=np.intp)
    tags = np.empty(n_elements, dtype=np.int8)
    for row, (no, line) in enumerate(body[n_nodes:n_nodes + n_elements]):
        parts = line.split()
        if len(parts) != 4 or not all(p.lstrip("-").isdigit() for p in parts):
            raise MeshFormatError(f"element line needs 'i0 i1 i2 tag', got {line!r}", no)
        values = [int(p) for p in parts]
        if values[3] not in (0, 1):
            raise MeshFormatError(f"element tag must be 0 (CG) or 1 (HDG), got {values[3]}", no)
        elements[row] = values[:3]
        tags[row] = values[3]

    labels: Dict[Tuple[int, int], int] = {}
    rest = body[n_nodes + n_elements:]
    if rest:
        no, line = rest[0]
        match = _BFACES.match(line)
        if not match:
            raise MeshFormatError(f"expected 'BFACES b', got {line!r}", no)
        n_bfaces = int(match.group(1))
        if len(rest) - 1 != n_bfaces:
            raise MeshFormatError(f"BFACES announces {n_bfaces} faces, found {len(rest) - 1}", no)
        for no, line in rest[1:]:
            parts = line.split()
            if len(parts) != 3 or parts[2] not in _LABELS:
                raise MeshFormatError(f"boundary face line needs 'i0 i1 D|N', got {line!r}", no)
            labels[tuple(sorted((int(parts[0]), int(parts[1]))))] = int(_LABELS[parts[2]])

    def label(pairs: np.ndarray) -> np.ndarray:
        return np.array([labels.get(tuple(sorted(p)), int(FaceClass.DIRICHLET)) for p in pairs.tolist()])

    mesh = _classify(nodes, elements, tags, label)
    boundary_keys = {tuple(sorted(p)) for p in mesh.faces[mesh.is_boundary_face()].tolist()}
    stray = [key for key in labels if key not in boundary_keys]
    if stray:
        raise MeshFormatError(f"BFACES entry {stray[0]} is not a boundary face")
    return mesh


def loads(text: str) -> Mesh:
    return read_mesh(io.StringIO(text))

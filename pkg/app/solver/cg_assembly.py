"""Continuous Galerkin assembly on the CG subdomain and the Nitsche interface terms"""
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from app.solver.errors import NitscheParameterError
from app.solver.linsys import TripletList
from app.solver.mesh import FaceClass, Mesh, Subdomain
from app.solver.ref_elem import (
    affine_maps,
    lagrange_basis,
    simplex_quadrature,
    tabulate,
    tabulate_faces,
    tabulate_oriented_faces,
    tabulate_trace,
)
from app.solver.voigt import FieldOperators, Material

logger = logging.getLogger(__name__)

# points (..., 2) -> values (..., n_comp)
VectorField = Callable[[np.ndarray], np.ndarray]


def lagrange_connectivity(mesh: Mesh, k: int, elements: np.ndarray) -> np.ndarray:
    """Global P_k node ids (not compacted) of the given elements, (ne, nb).

    Vertex nodes keep their mesh ids, then k-1 nodes per face ordered along the
    face's left-element direction, then interior nodes per element.
    """
    elements = np.asarray(elements, dtype=np.intp)
    nb = (k + 1) * (k + 2) // 2
    n_edge = k - 1
    n_int = nb - 3 - 3 * n_edge
    ids = np.empty((len(elements), nb), dtype=np.intp)
    ids[:, :3] = mesh.elements[elements]

    edge_base = mesh.n_nodes
    for i in range(3):
        faces = mesh.elem_faces[elements, i]
        same = mesh.face_elements[faces, 0] == elements
        along = np.arange(n_edge)
        offsets = np.where(same[:, None], along[None, :], (n_edge - 1 - along)[None, :])
        ids[:, 3 + i * n_edge: 3 + (i + 1) * n_edge] = edge_base + faces[:, None] * n_edge + offsets

    interior_base = edge_base + mesh.n_faces * n_edge
    ids[:, 3 + 3 * n_edge:] = interior_base + elements[:, None] * n_int + np.arange(n_int)[None, :]
    return ids


@dataclass(frozen=True)
class DofMapCG:
    """Compact numbering of the P_k nodes of the CG elements.

    dof = node * n_comp + component.
    """
    degree: int
    n_comp: int
    elements: np.ndarray  # mesh ids of the CG elements
    element_nodes: np.ndarray  # (ne, nb) compact node ids
    node_coords: np.ndarray  # (n_nodes, 2)
    dirichlet_dofs: np.ndarray
    dirichlet_values: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.n_comp

    def element_dofs(self) -> np.ndarray:
        c = self.n_comp
        return (self.element_nodes[:, :, None] * c + np.arange(c)).reshape(len(self.elements), self.element_nodes.shape[1] * c)

    def row_of(self, mesh_elements: np.ndarray) -> np.ndarray:
        """Position of mesh elements inside self.elements"""
        query = np.asarray(mesh_elements, dtype=np.intp)
        size = max(int(self.elements.max(initial=-1)), int(query.max(initial=-1))) + 1
        lookup = np.full(size, -1, dtype=np.intp)
        lookup[self.elements] = np.arange(len(self.elements))
        out = np.full(query.shape, -1, dtype=np.intp)
        valid = query >= 0
        out[valid] = lookup[query[valid]]
        return out

    def nodal(self, values: np.ndarray) -> np.ndarray:
        """Reshape a dof vector to (n_nodes, n_comp)"""
        return np.asarray(values).reshape(self.n_nodes, self.n_comp)


def build_dofmap_cg(mesh: Mesh, k: int, n_comp: int, dirichlet: Optional[VectorField] = None) -> DofMapCG:
    elements = mesh.elements_in(Subdomain.CG)
    ref = lagrange_basis(k, 2)
    raw = lagrange_connectivity(mesh, k, elements)
    used, compact = np.unique(raw, return_inverse=True)
    element_nodes = compact.reshape(raw.shape)

    coords = np.zeros((len(used), 2))
    if len(elements):
        maps = affine_maps(mesh.element_vertices(elements))
        coords[element_nodes.ravel()] = maps.to_physical(ref.nodes).reshape(-1, 2)

    # nodes on Dirichlet faces of CG elements, plus CG vertices touching any Dirichlet face
    dirichlet_faces = mesh.face_class == FaceClass.DIRICHLET
    on_boundary = np.zeros(mesh.n_nodes, dtype=bool)
    on_boundary[mesh.faces[dirichlet_faces].ravel()] = True
    constrained = [element_nodes[:, :3][on_boundary[mesh.elements[elements]]]]
    for i in range(3):
        on_dirichlet = dirichlet_faces[mesh.elem_faces[elements, i]]
        constrained.append(element_nodes[on_dirichlet][:, ref.face_nodes[i]].ravel())
    nodes = np.unique(np.concatenate(constrained)).astype(np.intp)
    dofs = (nodes[:, None] * n_comp + np.arange(n_comp)).ravel()
    if dirichlet is not None and nodes.size:
        values = np.asarray(dirichlet(coords[nodes]), dtype=float).reshape(len(nodes), n_comp).ravel()
    else:
        values = np.zeros(dofs.size)

    logger.debug(f"CG dof map: P{k}, {len(elements)} elements, {len(used)} nodes, {nodes.size} Dirichlet nodes")
    return DofMapCG(
        degree=k,
        n_comp=n_comp,
        elements=elements,
        element_nodes=element_nodes,
        node_coords=coords,
        dirichlet_dofs=dofs,
        dirichlet_values=values,
    )


def interleave(values: np.ndarray, n_comp: int) -> np.ndarray:
    """Scalar basis values (..., nb) -> (..., n_comp, nb * n_comp) value operator"""
    eye = np.eye(n_comp)
    out = values[..., None, :, None] * eye[:, None, :]
    shape = out.shape
    return out.reshape(shape[:-2] + (shape[-2] * shape[-1],))


def _as_constitutive(D: np.ndarray, n_elements: int) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    if D.ndim == 2:
        D = np.broadcast_to(D, (n_elements,) + D.shape)
    return D


def assemble_cg(
    mesh: Mesh,
    dofmap: DofMapCG,
    ops: FieldOperators,
    D: np.ndarray,
    source: Optional[VectorField] = None,
    traction: Optional[VectorField] = None,
) -> TripletList:
    """Stiffness (grad_S v, D grad_S u), load (v, f) and Neumann load <v, t>.

    D is one (m, m) matrix or one per CG element.
    """
    k, c = dofmap.degree, ops.n_comp
    triplets = TripletList(dofmap.n_dofs, dofmap.n_dofs)
    elements = dofmap.elements
    if len(elements) == 0:
        return triplets

    order = 2 * k + 2
    rule = simplex_quadrature(order, 2)
    table = tabulate(k, 2, order)
    maps = affine_maps(mesh.element_vertices(elements))
    grads = maps.physical_gradients(table.gradients)  # (ne, nq, nb, 2)
    G = ops.gradient_operator(grads)  # (ne, nq, m, nbc)
    D = _as_constitutive(D, len(elements))
    weights = rule.weights[None, :] * maps.det[:, None]
    K = np.einsum("eq,eqmi,emn,eqnj->eij", weights, G, D, G, optimize=True)
    dofs = dofmap.element_dofs()
    triplets.add(dofs, dofs, K)

    if source is not None:
        points = maps.to_physical(rule.points)
        f = np.asarray(source(points), dtype=float).reshape(points.shape[:2] + (c,))
        Phi = interleave(table.values, c)  # (nq, c, nbc)
        load = np.einsum("eq,qci,eqc->ei", weights, Phi, f)
        triplets.add_rhs(dofs, load)

    if traction is not None:
        _add_neumann(mesh, dofmap, c, traction, triplets)
    return triplets


def _add_neumann(mesh: Mesh, dofmap: DofMapCG, c: int, traction: VectorField, triplets: TripletList) -> None:
    k = dofmap.degree
    order = 2 * k + 2
    segment = simplex_quadrature(order, 1)
    faces_table = tabulate_faces(k, order)
    rows = dofmap.row_of(mesh.face_elements[:, 0])
    neumann = np.flatnonzero((mesh.face_class == FaceClass.NEUMANN) & (rows >= 0))
    if neumann.size == 0:
        return
    dofs = dofmap.element_dofs()[rows[neumann]]
    local = mesh.face_local[neumann, 0]
    ends = mesh.nodes[mesh.faces[neumann]]
    s = segment.points[:, 0]
    points = ends[:, None, 0, :] + s[None, :, None] * (ends[:, None, 1, :] - ends[:, None, 0, :])
    t = np.asarray(traction(points), dtype=float).reshape(points.shape[:2] + (c,))
    lengths = mesh.face_lengths()[neumann]
    Phi = interleave(faces_table.values[local], c)  # (nf, nq, c, nbc)
    load = np.einsum("q,f,fqci,fqc->fi", segment.weights, lengths, Phi, t)
    triplets.add_rhs(dofs, load)


def assemble_cg_poisson(
    mesh: Mesh,
    dofmap: DofMapCG,
    source: Optional[VectorField] = None,
    traction: Optional[VectorField] = None,
) -> TripletList:
    return assemble_cg(mesh, dofmap, FieldOperators.thermal(), np.eye(2), source, traction)


def assemble_cg_elasticity(
    mesh: Mesh,
    dofmap: DofMapCG,
    materials: Union[Material, Sequence[Material]],
    body_force: Optional[VectorField] = None,
    traction: Optional[VectorField] = None,
) -> TripletList:
    ops = FieldOperators.elasticity()
    if isinstance(materials, Material):
        D = ops.constitutive(materials)
    else:
        D = np.stack([ops.constitutive(m) for m in materials])
    return assemble_cg(mesh, dofmap, ops, D, body_force, traction)


@dataclass(frozen=True)
class InterfaceBlocks:
    """Face-local Nitsche matrices, one entry per interface face.

    Left-hand-side form with n outward from the CG element:
      cg_block = -<v, S u> - <S v, u> + gamma/h <v, u>
      coupling = <S v, u_hat> - gamma/h <v, u_hat>   (CG rows, trace cols)
      trace_penalty = gamma/h <v_hat, u_hat>
    with S = N^T D grad_S.
    """
    faces: np.ndarray
    cg_dofs: np.ndarray  # (nf, nbc)
    trace_dofs: np.ndarray  # (nf, ntc)
    cg_block: np.ndarray
    coupling: np.ndarray
    trace_penalty: np.ndarray


def interface_side(mesh: Mesh, faces: np.ndarray, subdomain: Subdomain) -> np.ndarray:
    """0 when the subdomain's element is the left element of the face, else 1"""
    return (mesh.elem_subdomain[mesh.face_elements[faces, 0]] != subdomain).astype(np.intp)


def interface_quadrature_order(k_cg: int, k_hdg: int) -> int:
    return 2 * max(k_cg, k_hdg) + 2


def interface_blocks(
    mesh: Mesh,
    dofmap: DofMapCG,
    ops: FieldOperators,
    D: np.ndarray,
    k_hdg: int,
    trace_dofs: np.ndarray,
    gamma: float,
) -> InterfaceBlocks:
    """Nitsche integrals on every INTERFACE face; D is per interface face or shared"""
    if not gamma > 0:
        raise NitscheParameterError(f"Nitsche parameter must be positive, got {gamma}")
    faces = mesh.faces_of_class(FaceClass.INTERFACE)
    k, c = dofmap.degree, ops.n_comp
    order = interface_quadrature_order(k, k_hdg)
    segment = simplex_quadrature(order, 1)
    nbc = (k + 1) * (k + 2) // 2 * c
    ntc = (k_hdg + 1) * c
    if faces.size == 0:
        empty = np.zeros((0, nbc, nbc))
        return InterfaceBlocks(faces, np.zeros((0, nbc), dtype=np.intp), np.zeros((0, ntc), dtype=np.intp),
                               empty, np.zeros((0, nbc, ntc)), np.zeros((0, ntc, ntc)))

    side = interface_side(mesh, faces, Subdomain.CG)
    cg_elements = mesh.face_elements[faces, side]
    cg_local = mesh.face_local[faces, side]
    rows = dofmap.row_of(cg_elements)

    oriented = tabulate_oriented_faces(k, order)
    values = oriented.values[cg_local, side]  # (nf, nq, nb)
    maps = affine_maps(mesh.element_vertices(cg_elements))
    grads = maps.element_gradients(oriented.gradients[cg_local, side])  # (nf, nq, nb, 2)
    normals = maps.normals[np.arange(len(faces)), cg_local]
    lengths = mesh.face_lengths()[faces]

    D = _as_constitutive(D, len(faces))
    N = ops.normal(normals)  # (nf, m, c)
    G = ops.gradient_operator(grads)  # (nf, nq, m, nbc)
    S = np.einsum("fmc,fmn,fqni->fqci", N, D, G, optimize=True)
    Phi = interleave(values, c)  # (nf, nq, c, nbc)
    Psi = interleave(np.broadcast_to(tabulate_trace(k_hdg, order), values.shape[:2] + (k_hdg + 1,)), c)

    w = segment.weights[None, :] * lengths[:, None]
    penalty = (gamma / lengths)[:, None, None]
    vS = np.einsum("fq,fqci,fqcj->fij", w, Phi, S)
    vu = np.einsum("fq,fqci,fqcj->fij", w, Phi, Phi)
    Sv_hat = np.einsum("fq,fqci,fqcj->fij", w, S, Psi)
    v_hat = np.einsum("fq,fqci,fqcj->fij", w, Phi, Psi)
    hat_hat = np.einsum("fq,fqci,fqcj->fij", w, Psi, Psi)

    return InterfaceBlocks(
        faces=faces,
        cg_dofs=dofmap.element_dofs()[rows],
        trace_dofs=np.asarray(trace_dofs, dtype=np.intp),
        cg_block=-vS - vS.transpose(0, 2, 1) + penalty * vu,
        coupling=Sv_hat - penalty * v_hat,
        trace_penalty=penalty * hat_hat,
    )


def assemble_nitsche_cg(blocks: InterfaceBlocks, n_cg: int, n_trace: int) -> Tuple[TripletList, TripletList]:
    """CG block and CG x trace coupling as triplets.

    The trace-side penalty of the same blocks is added by assemble_hdg_global.
    """
    cg = TripletList(n_cg, n_cg)
    cg.add(blocks.cg_dofs, blocks.cg_dofs, blocks.cg_block)
    coupling = TripletList(n_cg, n_trace)
    coupling.add(blocks.cg_dofs, blocks.trace_dofs, blocks.coupling)
    return cg, coupling

"""HDG local solvers, static condensation, trace assembly and postprocessing.

Per element the unknowns are X = [L; u] with L the mixed variable
(L = -Dh grad_S u, Dh = D^(1/2)). Element dofs are node-major: L at a*m + r,
u at nb*m + b*c + j. Trace dofs of element face i sit at i*ntc + b*c + j where
b runs along the face in the direction of its left element.

The trace equations are assembled with the sign that makes the condensed
block tau*M_hat - R^T A^-1 R symmetric positive definite.
"""
from dataclasses import dataclass
from typing import Optional
import logging

import numpy as np

from app.solver.cg_assembly import InterfaceBlocks, VectorField, interleave
from app.solver.errors import SingularLocalMatrixError, SolverError
from app.solver.linsys import TripletList
from app.solver.mesh import FaceClass, Mesh, Subdomain
from app.solver.ref_elem import (
    affine_maps,
    lagrange_basis,
    simplex_quadrature,
    tabulate,
    tabulate_oriented_faces,
    tabulate_trace,
)
from app.solver.voigt import FieldOperators

logger = logging.getLogger(__name__)

CHUNK = 512


@dataclass(frozen=True)
class TraceDofMap:
    """One block of (k+1) * n_comp dofs per face with a hybrid unknown"""
    degree: int
    n_comp: int
    face_slot: np.ndarray  # (n_faces,) slot index or -1
    faces: np.ndarray  # faces in slot order

    @property
    def per_face(self) -> int:
        return (self.degree + 1) * self.n_comp

    @property
    def n_dofs(self) -> int:
        return len(self.faces) * self.per_face

    def face_dofs(self, faces: np.ndarray) -> np.ndarray:
        """(nf, ntc) global trace dofs, -1 where the face carries none"""
        slots = self.face_slot[np.asarray(faces, dtype=np.intp)]
        dofs = slots[..., None] * self.per_face + np.arange(self.per_face)
        return np.where(slots[..., None] >= 0, dofs, -1)

    def element_dofs(self, mesh: Mesh, elements: np.ndarray) -> np.ndarray:
        return self.face_dofs(mesh.elem_faces[elements]).reshape(len(elements), 3 * self.per_face)


def build_trace_dofmap(mesh: Mesh, k: int, n_comp: int) -> TraceDofMap:
    """Trace unknowns live on every non-Dirichlet face touching an HDG element"""
    left_hdg = mesh.elem_subdomain[mesh.face_elements[:, 0]] == Subdomain.HDG
    right = mesh.face_elements[:, 1]
    right_hdg = (right >= 0) & (mesh.elem_subdomain[np.maximum(right, 0)] == Subdomain.HDG)
    carries = (left_hdg | right_hdg) & (mesh.face_class != FaceClass.DIRICHLET)
    faces = np.flatnonzero(carries)
    slot = np.full(mesh.n_faces, -1, dtype=np.intp)
    slot[faces] = np.arange(len(faces))
    return TraceDofMap(degree=k, n_comp=n_comp, face_slot=slot, faces=faces)


def face_points(mesh: Mesh, faces: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Physical points of the segment parameters s on each face, (nf, nq, 2)"""
    ends = mesh.nodes[mesh.faces[faces]]
    return ends[:, None, 0, :] + s[None, :, None] * (ends[:, None, 1, :] - ends[:, None, 0, :])


@dataclass(frozen=True)
class LocalSystem:
    """Uncondensed local problems A X = F + R u_hat for a batch of elements"""
    A: np.ndarray  # (ne, N, N)
    F: np.ndarray  # (ne, N), volume source and Dirichlet data
    R: np.ndarray  # (ne, N, 3 * ntc)
    M_hat: np.ndarray  # (ne, 3 * ntc, 3 * ntc), tau-weighted trace mass


def _per_element(matrix: np.ndarray, n: int) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    return np.broadcast_to(matrix, (n,) + matrix.shape) if matrix.ndim == 2 else matrix


def local_system(
    mesh: Mesh,
    elements: np.ndarray,
    ops: FieldOperators,
    k: int,
    tau: float,
    sqrt_D: np.ndarray,
    trace_map: TraceDofMap,
    source: Optional[VectorField] = None,
    dirichlet: Optional[VectorField] = None,
) -> LocalSystem:
    elements = np.asarray(elements, dtype=np.intp)
    ne = len(elements)
    c, m = ops.n_comp, ops.n_mixed
    nb = (k + 1) * (k + 2) // 2
    nt = k + 1
    ntc = nt * c
    n_L, n_u = nb * m, nb * c
    Dh = _per_element(sqrt_D, ne)

    order = 2 * k + 2
    rule = simplex_quadrature(order, 2)
    table = tabulate(k, 2, order)
    maps = affine_maps(mesh.element_vertices(elements))
    grads = maps.physical_gradients(table.gradients)  # (ne, nq, nb, 2)
    w = rule.weights[None, :] * maps.det[:, None]

    M = np.einsum("eq,qa,qb->eab", w, table.values, table.values)
    EtDh = np.einsum("dmj,emr->edjr", ops.E, Dh)
    A_wu = np.einsum("eq,eqad,qb,edjr->earbj", w, grads, table.values, EtDh, optimize=True).reshape(ne, n_L, n_u)

    # faces in the element's own orientation, integrated at canonical points
    segment = simplex_quadrature(order, 1)
    oriented = tabulate_oriented_faces(k, order)
    psi = tabulate_trace(k, order)
    faces = mesh.elem_faces[elements]  # (ne, 3)
    side = (mesh.face_elements[faces, 0] != elements[:, None]).astype(np.intp)
    phi_f = oriented.values[np.arange(3)[None, :], side]  # (ne, 3, nq, nb)
    lengths = maps.lengths
    wf = segment.weights[None, None, :] * lengths[:, :, None]  # (ne, 3, nq)
    C = np.einsum("eiq,eiqa,qb->eiab", wf, phi_f, psi)
    Mf = np.einsum("eiq,eiqa,eiqb->eiab", wf, phi_f, phi_f)
    Mt = np.einsum("eiq,qa,qb->eiab", wf, psi, psi)
    N = ops.normal(maps.normals)  # (ne, 3, m, c)
    NtDh = np.einsum("eimj,emr->eijr", N, Dh)

    has_trace = trace_map.face_slot[faces] >= 0
    is_dirichlet = mesh.face_class[faces] == FaceClass.DIRICHLET
    mask = has_trace.astype(float)[:, :, None, None]

    eye_c = np.eye(c)
    R_L = np.einsum("eiab,eijr->earibj", C * mask, NtDh).reshape(ne, n_L, 3 * ntc)
    R_u = tau * np.einsum("eiab,jk->eajibk", C * mask, eye_c).reshape(ne, n_u, 3 * ntc)
    R = np.concatenate([R_L, R_u], axis=1)

    A = np.zeros((ne, n_L + n_u, n_L + n_u))
    A[:, :n_L, :n_L] = -np.einsum("eab,rs->earbs", M, np.eye(m)).reshape(ne, n_L, n_L)
    A[:, :n_L, n_L:] = A_wu
    A[:, n_L:, :n_L] = A_wu.transpose(0, 2, 1)
    A[:, n_L:, n_L:] = tau * np.einsum("eab,jk->eajbk", Mf.sum(axis=1), eye_c).reshape(ne, n_u, n_u)

    M_hat = np.zeros((ne, 3, ntc, 3, ntc))
    for i in range(3):
        M_hat[:, i, :, i, :] = tau * np.einsum("eab,jk->eajbk", Mt[:, i] * mask[:, i], eye_c).reshape(ne, ntc, ntc)
    M_hat = M_hat.reshape(ne, 3 * ntc, 3 * ntc)

    F = np.zeros((ne, n_L + n_u))
    if source is not None:
        points = maps.to_physical(rule.points)
        f = np.asarray(source(points), dtype=float).reshape(ne, rule.size, c)
        F[:, n_L:] += np.einsum("eq,qb,eqj->ebj", w, table.values, f).reshape(ne, n_u)

    if dirichlet is not None and np.any(is_dirichlet):
        e_idx, i_idx = np.nonzero(is_dirichlet)
        points = face_points(mesh, faces[e_idx, i_idx], segment.points[:, 0])
        g = np.asarray(dirichlet(points), dtype=float).reshape(len(e_idx), segment.size, c)
        wd = wf[e_idx, i_idx]
        phi_d = phi_f[e_idx, i_idx]
        F_L = np.einsum("dq,dqa,djr,dqj->dar", wd, phi_d, NtDh[e_idx, i_idx], g).reshape(-1, n_L)
        F_u = tau * np.einsum("dq,dqb,dqj->dbj", wd, phi_d, g).reshape(-1, n_u)
        np.add.at(F[:, :n_L], e_idx, F_L)
        np.add.at(F[:, n_L:], e_idx, F_u)

    return LocalSystem(A=A, F=F, R=R, M_hat=M_hat)


@dataclass(frozen=True)
class LocalSolvers:
    """Condensed local problems of all HDG elements: X = z0 + Z u_hat_e"""
    ops: FieldOperators
    degree: int
    tau: float
    elements: np.ndarray
    sqrt_D: np.ndarray  # (ne, m, m)
    trace_dofs: np.ndarray  # (ne, 3 * ntc), -1 on Dirichlet faces
    Z: np.ndarray  # (ne, N, 3 * ntc)
    z0: np.ndarray  # (ne, N)
    K: np.ndarray  # (ne, 3 * ntc, 3 * ntc) condensed trace matrices
    g: np.ndarray  # (ne, 3 * ntc) condensed trace loads

    @property
    def n_basis(self) -> int:
        return (self.degree + 1) * (self.degree + 2) // 2


def build_local_solvers(
    mesh: Mesh,
    ops: FieldOperators,
    k: int,
    tau: float,
    sqrt_D: np.ndarray,
    trace_map: TraceDofMap,
    source: Optional[VectorField] = None,
    dirichlet: Optional[VectorField] = None,
    elements: Optional[np.ndarray] = None,
) -> LocalSolvers:
    """Factor every local problem and condense it onto the element's traces"""
    if not tau > 0:
        raise SolverError(f"stabilization tau must be positive, got {tau}")
    if elements is None:
        elements = mesh.elements_in(Subdomain.HDG)
    elements = np.asarray(elements, dtype=np.intp)
    ne = len(elements)
    Dh = np.array(_per_element(sqrt_D, ne))
    nb = (k + 1) * (k + 2) // 2
    n_x = nb * (ops.n_mixed + ops.n_comp)
    n_t = 3 * (k + 1) * ops.n_comp

    Z = np.zeros((ne, n_x, n_t))
    z0 = np.zeros((ne, n_x))
    K = np.zeros((ne, n_t, n_t))
    g = np.zeros((ne, n_t))
    for start in range(0, ne, CHUNK):
        chunk = slice(start, min(start + CHUNK, ne))
        system = local_system(mesh, elements[chunk], ops, k, tau, Dh[chunk], trace_map, source, dirichlet)
        try:
            solved = np.linalg.solve(system.A, np.concatenate([system.R, system.F[:, :, None]], axis=2))
        except np.linalg.LinAlgError as e:
            raise SingularLocalMatrixError(f"local HDG matrix is singular in elements {start}..{chunk.stop - 1}: {e}")
        Z[chunk] = solved[:, :, :-1]
        z0[chunk] = solved[:, :, -1]
        RT = system.R.transpose(0, 2, 1)
        condensed = system.M_hat - RT @ Z[chunk]
        # symmetric in exact arithmetic; drop the round-off of the local solves
        K[chunk] = 0.5 * (condensed + condensed.transpose(0, 2, 1))
        g[chunk] = np.einsum("etn,en->et", RT, z0[chunk])

    logger.debug(f"Condensed {ne} HDG elements (P{k}, {ops.name}), local size {n_x}")
    return LocalSolvers(
        ops=ops,
        degree=k,
        tau=tau,
        elements=elements,
        sqrt_D=Dh,
        trace_dofs=trace_map.element_dofs(mesh, elements),
        Z=Z,
        z0=z0,
        K=K,
        g=g,
    )


def build_local_solver_poisson(mesh: Mesh, k: int, tau: float, trace_map: TraceDofMap,
                               source: Optional[VectorField] = None,
                               dirichlet: Optional[VectorField] = None,
                               elements: Optional[np.ndarray] = None) -> LocalSolvers:
    return build_local_solvers(mesh, FieldOperators.thermal(), k, tau, np.eye(2), trace_map, source, dirichlet, elements)


def build_local_solver_elasticity(mesh: Mesh, k: int, tau: float, sqrt_D: np.ndarray, trace_map: TraceDofMap,
                                  body_force: Optional[VectorField] = None,
                                  dirichlet: Optional[VectorField] = None,
                                  elements: Optional[np.ndarray] = None) -> LocalSolvers:
    return build_local_solvers(mesh, FieldOperators.elasticity(), k, tau, sqrt_D, trace_map, body_force, dirichlet, elements)


def assemble_hdg_global(
    mesh: Mesh,
    solvers: LocalSolvers,
    trace_map: TraceDofMap,
    n_cg: int = 0,
    interface: Optional[InterfaceBlocks] = None,
    traction: Optional[VectorField] = None,
):
    """Trace block with its right-hand side and the trace x CG coupling.

    Returns (trace TripletList, coupling TripletList with rows in trace
    numbering and columns in CG numbering).
    """
    n_trace = trace_map.n_dofs
    trace = TripletList(n_trace, n_trace)
    trace.add(solvers.trace_dofs, solvers.trace_dofs, solvers.K)
    trace.add_rhs(solvers.trace_dofs, solvers.g)

    coupling = TripletList(n_trace, n_cg)
    if interface is not None and len(interface.faces):
        trace.add(interface.trace_dofs, interface.trace_dofs, interface.trace_penalty)
        coupling.add(interface.trace_dofs, interface.cg_dofs, interface.coupling.transpose(0, 2, 1))

    if traction is not None:
        neumann = trace_map.faces[mesh.face_class[trace_map.faces] == FaceClass.NEUMANN]
        if neumann.size:
            c = trace_map.n_comp
            order = 2 * trace_map.degree + 2
            segment = simplex_quadrature(order, 1)
            psi = tabulate_trace(trace_map.degree, order)
            points = face_points(mesh, neumann, segment.points[:, 0])
            t = np.asarray(traction(points), dtype=float).reshape(len(neumann), segment.size, c)
            lengths = mesh.face_lengths()[neumann]
            load = np.einsum("q,f,qb,fqj->fbj", segment.weights, lengths, psi, t).reshape(len(neumann), -1)
            trace.add_rhs(trace_map.face_dofs(neumann), load)
    return trace, coupling


@dataclass(frozen=True)
class HDGFields:
    """Elementwise nodal coefficients on the HDG subdomain"""
    elements: np.ndarray
    degree: int
    u: np.ndarray  # (ne, nb, c)
    mixed: np.ndarray  # (ne, nb, m), q for Poisson, L for elasticity
    stress: np.ndarray  # (ne, nb, m), -Dh L
    trace: np.ndarray  # (ne, 3 * ntc) element trace values, 0 on Dirichlet faces


def element_traces(solvers: LocalSolvers, trace_values: np.ndarray) -> np.ndarray:
    trace_values = np.asarray(trace_values, dtype=float)
    dofs = solvers.trace_dofs
    return np.where(dofs >= 0, trace_values[np.maximum(dofs, 0)] if trace_values.size else 0.0, 0.0)


def reconstruct_fields(solvers: LocalSolvers, trace_values: np.ndarray) -> HDGFields:
    u_hat = element_traces(solvers, trace_values)
    X = solvers.z0 + np.einsum("ent,et->en", solvers.Z, u_hat)
    ne, nb = len(solvers.elements), solvers.n_basis
    m, c = solvers.ops.n_mixed, solvers.ops.n_comp
    mixed = X[:, : nb * m].reshape(ne, nb, m)
    u = X[:, nb * m:].reshape(ne, nb, c)
    stress = -np.einsum("emr,ebr->ebm", solvers.sqrt_D, mixed)
    return HDGFields(elements=solvers.elements, degree=solvers.degree, u=u, mixed=mixed, stress=stress, trace=u_hat)


def _curl_rows(grads: np.ndarray) -> np.ndarray:
    """(..., nb, 2) -> (..., nb * 2) rows of -d/dy u_x + d/dx u_y"""
    rows = np.stack([-grads[..., 1], grads[..., 0]], axis=-1)
    return rows.reshape(rows.shape[:-2] + (-1,))


@dataclass(frozen=True)
class PostprocessResult:
    u_star: np.ndarray  # (ne, nb*, 2) nodal coefficients of degree k+1
    constraint_residual: np.ndarray  # (ne,) relative residual of mean and curl constraints


def postprocess_displacement(
    mesh: Mesh,
    solvers: LocalSolvers,
    fields: HDGFields,
    dirichlet: Optional[VectorField] = None,
) -> PostprocessResult:
    """Local Neumann problems of degree k+1 for u*:
    (grad_S v, Dh grad_S u*) = -(grad_S v, L) with int u* = int u per component
    and int curl u* = sum over faces of int T u_hat, imposed by multipliers."""
    ops = solvers.ops
    if not ops.is_elasticity:
        raise SolverError("displacement postprocess is defined for elasticity only")
    k = solvers.degree
    kp = k + 1
    elements = solvers.elements
    ne, c = len(elements), ops.n_comp
    nbp = (kp + 1) * (kp + 2) // 2
    n_u = nbp * c
    n_con = c + 1

    order = 2 * kp + 2
    rule = simplex_quadrature(order, 2)
    table_p = tabulate(kp, 2, order)
    table_k = tabulate(k, 2, order)
    maps = affine_maps(mesh.element_vertices(elements))
    w = rule.weights[None, :] * maps.det[:, None]
    grads = maps.physical_gradients(table_p.gradients)
    G = ops.gradient_operator(grads)  # (ne, nq, m, n_u)

    K = np.einsum("eq,eqmi,emn,eqnj->eij", w, G, solvers.sqrt_D, G, optimize=True)
    L_q = np.einsum("qa,eam->eqm", table_k.values, fields.mixed)
    rhs = -np.einsum("eq,eqmi,eqm->ei", w, G, L_q)

    Phi = interleave(table_p.values, c)  # (nq, c, n_u)
    Cmat = np.zeros((ne, n_con, n_u))
    Cmat[:, :c] = np.einsum("eq,qci->eci", w, Phi)
    Cmat[:, c] = np.einsum("eq,eqi->ei", w, _curl_rows(grads))

    target = np.zeros((ne, n_con))
    u_q = np.einsum("qa,eaj->eqj", table_k.values, fields.u)
    target[:, :c] = np.einsum("eq,eqj->ej", w, u_q)
    target[:, c] = _boundary_rotation(mesh, solvers, fields, dirichlet, maps)

    aug = np.zeros((ne, n_u + n_con, n_u + n_con))
    aug[:, :n_u, :n_u] = K
    aug[:, :n_u, n_u:] = Cmat.transpose(0, 2, 1)
    aug[:, n_u:, :n_u] = Cmat
    b = np.concatenate([rhs, target], axis=1)
    try:
        solution = np.linalg.solve(aug, b[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as e:
        raise SingularLocalMatrixError(f"postprocess system is singular: {e}")

    u_star = solution[:, :n_u]
    achieved = np.einsum("eci,ei->ec", Cmat, u_star)
    scale = np.maximum(np.abs(target).max(axis=1), np.abs(Cmat).max(axis=(1, 2)) * np.abs(u_star).max(axis=1))
    residual = np.abs(achieved - target).max(axis=1) / np.where(scale > 0, scale, 1.0)
    return PostprocessResult(u_star=u_star.reshape(ne, nbp, c), constraint_residual=residual)


def _boundary_rotation(mesh: Mesh, solvers: LocalSolvers, fields: HDGFields,
                       dirichlet: Optional[VectorField], maps) -> np.ndarray:
    """sum_i int_{face i} T u_hat ds, with u_D on Dirichlet faces"""
    k = solvers.degree
    c = solvers.ops.n_comp
    ne = len(solvers.elements)
    order = 2 * k + 2
    segment = simplex_quadrature(order, 1)
    psi = tabulate_trace(k, order)
    faces = mesh.elem_faces[solvers.elements]
    u_hat = fields.trace.reshape(ne, 3, k + 1, c)
    values = np.einsum("qb,eibj->eiqj", psi, u_hat)  # canonical orientation

    is_dirichlet = mesh.face_class[faces] == FaceClass.DIRICHLET
    if dirichlet is not None and np.any(is_dirichlet):
        e_idx, i_idx = np.nonzero(is_dirichlet)
        points = face_points(mesh, faces[e_idx, i_idx], segment.points[:, 0])
        values[e_idx, i_idx] = np.asarray(dirichlet(points), dtype=float).reshape(len(e_idx), segment.size, c)

    n = maps.normals  # (ne, 3, 2)
    T = np.stack([-n[..., 1], n[..., 0]], axis=-1)
    integrals = np.einsum("q,ei,eiqj->eij", segment.weights, maps.lengths, values)
    return np.einsum("eij,eij->e", T, integrals)


def evaluate_fields(nodal: np.ndarray, degree: int, ref_points: np.ndarray) -> np.ndarray:
    """Elementwise nodal coefficients (ne, nb, c) at reference points -> (ne, np, c)"""
    values = lagrange_basis(degree, 2).evaluate(np.atleast_2d(ref_points))
    return np.einsum("pa,eac->epc", values, nodal)

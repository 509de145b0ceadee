"""One coupled CG-HDG solve: mesh, dof maps, block assembly, direct solve,
field reconstruction and the optional displacement postprocess.

Global unknowns are ordered CG dofs first, then trace dofs.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional
import logging

import numpy as np

from app.schemas import SolveConfig, SolveMode
from app.solver import metrics
from app.solver.cg_assembly import (
    DofMapCG,
    InterfaceBlocks,
    assemble_cg,
    assemble_nitsche_cg,
    build_dofmap_cg,
    interface_blocks,
    interface_side,
)
from app.solver.errors import CouplingError, DegreeError
from app.solver.hdg_core import (
    HDGFields,
    LocalSolvers,
    PostprocessResult,
    TraceDofMap,
    assemble_hdg_global,
    build_local_solvers,
    build_trace_dofmap,
    postprocess_displacement,
    reconstruct_fields,
)
from app.solver.linsys import CoupledSystem, block_system, relative_residual, solve_direct, symmetry_defect
from app.solver.mesh import FaceClass, Mesh, Subdomain, characteristic_size
from app.solver.problems import ProblemDefinition, get_problem

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AssembledSystem:
    system: CoupledSystem  # before elimination of CG Dirichlet dofs
    cg_map: DofMapCG
    trace_map: TraceDofMap
    solvers: LocalSolvers
    interface: InterfaceBlocks


@dataclass(frozen=True)
class SolutionBundle:
    config: SolveConfig
    problem: ProblemDefinition
    mesh: Mesh
    cg_map: DofMapCG
    u_cg: np.ndarray  # (n_cg_nodes, c)
    trace_map: TraceDofMap
    u_hat: np.ndarray  # (n_trace,)
    solvers: LocalSolvers
    hdg: Optional[HDGFields]
    post: Optional[PostprocessResult]
    n_interface_faces: int
    residual: float
    symmetry_defect: float
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def dof_cg(self) -> int:
        return self.cg_map.n_dofs

    @property
    def dof_trace(self) -> int:
        return self.trace_map.n_dofs

    @property
    def n_elements(self) -> int:
        return self.mesh.n_elements

    @property
    def h(self) -> float:
        return characteristic_size(self.mesh)

    @property
    def u_star(self) -> Optional[np.ndarray]:
        return None if self.post is None else self.post.u_star


def mesh_for_mode(mesh: Mesh, mode: SolveMode) -> Mesh:
    """Single-method modes treat the whole domain as one subdomain"""
    if mode == SolveMode.CG_ONLY:
        return mesh.with_subdomains(Subdomain.CG)
    if mode == SolveMode.HDG_ONLY:
        return mesh.with_subdomains(Subdomain.HDG)
    return mesh


def assemble_system(
    mesh: Mesh,
    problem: ProblemDefinition,
    k_cg: int,
    k_hdg: int,
    tau: float,
    gamma: float,
    timings: Optional[Dict[str, float]] = None,
) -> AssembledSystem:
    """Assemble [K_CG, K_I; K_I^T, K_HDG] for whatever subdomain split the mesh carries"""
    timings = {} if timings is None else timings
    ops = problem.ops
    c = ops.n_comp

    with metrics.stage("assemble_cg", timings):
        cg_map = build_dofmap_cg(mesh, k_cg, c, problem.dirichlet)
        trace_map = build_trace_dofmap(mesh, k_hdg, c)
        cg = assemble_cg(mesh, cg_map, ops, problem.constitutive(mesh, cg_map.elements), problem.source, problem.traction)
        faces = mesh.faces_of_class(FaceClass.INTERFACE)
        cg_side = mesh.face_elements[faces, interface_side(mesh, faces, Subdomain.CG)]
        interface = interface_blocks(
            mesh, cg_map, ops, problem.constitutive(mesh, cg_side), k_hdg, trace_map.face_dofs(faces), gamma
        )
        nitsche, coupling = assemble_nitsche_cg(interface, cg_map.n_dofs, trace_map.n_dofs)

    with metrics.stage("local_solvers", timings):
        hdg_elements = mesh.elements_in(Subdomain.HDG)
        solvers = build_local_solvers(
            mesh, ops, k_hdg, tau, problem.sqrt_constitutive(mesh, hdg_elements), trace_map,
            problem.source, problem.dirichlet, hdg_elements,
        )

    with metrics.stage("assemble_hdg", timings):
        trace, coupling_t = assemble_hdg_global(mesh, solvers, trace_map, cg_map.n_dofs, interface, problem.traction)
        system = block_system(
            cg_map.n_dofs,
            trace_map.n_dofs,
            [("cg", cg), ("cg", nitsche), ("coupling", coupling), ("coupling_t", coupling_t), ("hdg", trace)],
        )

    logger.debug(
        f"Assembled {problem.name}: {cg_map.n_dofs} CG dofs, {trace_map.n_dofs} trace dofs, "
        f"{len(faces)} interface faces, nnz={system.matrix.nnz}"
    )
    return AssembledSystem(system=system, cg_map=cg_map, trace_map=trace_map, solvers=solvers, interface=interface)


def resolve_parameters(config: SolveConfig, problem: ProblemDefinition):
    """(tau, gamma) with per-problem defaults filling the gaps"""
    tau = config.tau if config.tau is not None else problem.tau
    mixed = config.mode == SolveMode.COUPLED and config.mixed_degree
    gamma = config.gamma if config.gamma is not None else problem.default_gamma(mixed_degree=mixed)
    return tau, gamma


def coupled_system(config: SolveConfig, problem: Optional[ProblemDefinition] = None) -> CoupledSystem:
    """Global matrix and load of a solve, after CG Dirichlet elimination, without solving"""
    if problem is None:
        problem = get_problem(config.problem, theta=config.theta, nu_hdg=config.nu_hdg)
    tau, gamma = resolve_parameters(config, problem)
    mesh = mesh_for_mode(problem.build_mesh(config.level), SolveMode(config.mode))
    assembled = assemble_system(mesh, problem, config.k_cg, config.k_hdg, tau, gamma)
    return assembled.system.with_dirichlet(assembled.cg_map.dirichlet_dofs, assembled.cg_map.dirichlet_values)


def solve(config: SolveConfig, problem: Optional[ProblemDefinition] = None) -> SolutionBundle:
    """Run one solve; problem overrides the registry lookup of config.problem"""
    if problem is None:
        problem = get_problem(config.problem, theta=config.theta, nu_hdg=config.nu_hdg)
    mode = SolveMode(config.mode)
    try:
        bundle = _solve(config, problem, mode)
    except Exception:
        metrics.SOLVES.labels(problem=problem.name, mode=mode.value, status="error").inc()
        raise
    metrics.SOLVES.labels(problem=problem.name, mode=mode.value, status="ok").inc()
    return bundle


def _solve(config: SolveConfig, problem: ProblemDefinition, mode: SolveMode) -> SolutionBundle:
    timings: Dict[str, float] = {}
    tau, gamma = resolve_parameters(config, problem)

    with metrics.stage("mesh", timings):
        mesh = mesh_for_mode(problem.build_mesh(config.level), mode)
    n_interface = len(mesh.faces_of_class(FaceClass.INTERFACE))
    if mode == SolveMode.COUPLED and n_interface == 0:
        raise CouplingError(f"{problem.name} at level {config.level} has no interface faces; use CG_ONLY or HDG_ONLY")

    assembled = assemble_system(mesh, problem, config.k_cg, config.k_hdg, tau, gamma, timings)
    cg_map, trace_map, solvers = assembled.cg_map, assembled.trace_map, assembled.solvers

    with metrics.stage("factorize_solve", timings):
        system = assembled.system.with_dirichlet(cg_map.dirichlet_dofs, cg_map.dirichlet_values)
        metrics.SYSTEM_DOFS.observe(system.size)
        x = solve_direct(system.matrix, system.rhs)
        residual = relative_residual(system.matrix, x, system.rhs)
        defect = symmetry_defect(system.matrix)

    with metrics.stage("reconstruct", timings):
        u_cg = cg_map.nodal(x[: system.n_cg])
        u_hat = x[system.n_cg:]
        hdg = reconstruct_fields(solvers, u_hat) if len(solvers.elements) else None

    post = None
    if config.postprocess and not problem.ops.is_elasticity:
        logger.warning(f"Postprocess requested for {problem.name}, which is not an elasticity problem; skipped")
    elif config.postprocess and hdg is not None:
        with metrics.stage("postprocess", timings):
            post = postprocess_displacement(mesh, solvers, hdg, problem.dirichlet)
        worst = float(post.constraint_residual.max(initial=0.0))
        if worst > 1e-10:
            logger.warning(f"Postprocess constraint residual {worst:.3e} above 1e-10")

    logger.info(
        f"Solved {problem.name} {mode.value} level {config.level} (k_cg={config.k_cg}, k_hdg={config.k_hdg}): "
        f"{system.size} dofs, residual {residual:.2e}, symmetry defect {defect:.2e}"
    )
    return SolutionBundle(
        config=config,
        problem=problem,
        mesh=mesh,
        cg_map=cg_map,
        u_cg=u_cg,
        trace_map=trace_map,
        u_hat=u_hat,
        solvers=solvers,
        hdg=hdg,
        post=post,
        n_interface_faces=n_interface,
        residual=residual,
        symmetry_defect=defect,
        timings=timings,
    )


def mixed_degree_solve(config: SolveConfig, problem: Optional[ProblemDefinition] = None) -> SolutionBundle:
    """Degree k+1 on the CG side, k plus postprocessed u* on the HDG side"""
    if config.k_cg != config.k_hdg + 1:
        raise DegreeError(f"mixed-degree coupling needs k_cg = k_hdg + 1, got k_cg={config.k_cg}, k_hdg={config.k_hdg}")
    if not config.postprocess:
        config = SolveConfig.model_validate({**config.model_dump(), "postprocess": True})
    return solve(config, problem)

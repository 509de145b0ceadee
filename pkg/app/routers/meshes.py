from fastapi import APIRouter, Query
from fastapi.responses import PlainTextResponse
from app import schemas
from app.routers.common import solver_http_error
from app.solver.errors import SolverError
from app.solver.mesh import Subdomain, characteristic_size, dumps
from app.solver.problems import get_problem

router = APIRouter()

def _build(problem: str, level: int):
    try:
        return get_problem(problem).build_mesh(level)
    except SolverError as e:
        raise solver_http_error(e)

@router.get("/{problem}", response_model=schemas.MeshSummary)
def read_mesh(problem: str, level: int = Query(2, ge=0, le=schemas.MAX_LEVEL)):
    mesh = _build(problem, level)
    return schemas.MeshSummary(
        problem=problem,
        level=level,
        h=characteristic_size(mesh),
        n_nodes=mesh.n_nodes,
        n_elements=mesh.n_elements,
        n_faces=mesh.n_faces,
        subdomains={s.name: int(len(mesh.elements_in(s))) for s in Subdomain},
        face_classes=mesh.class_counts(),
    )

@router.get("/{problem}/dump", response_class=PlainTextResponse)
def dump_mesh(problem: str, level: int = Query(2, ge=0, le=schemas.MAX_LEVEL)):
    return PlainTextResponse(dumps(_build(problem, level)))

from fastapi import APIRouter, Depends, HTTPException, Query
from sqlalchemy.orm import Session
from typing import Optional
from uuid import UUID
import logging
from app import crud, schemas
from app.database import get_db
from app.routers.common import paginate_response, solver_http_error
from app.solver.errors import SolverError
from app.solver.study import run_case

logger = logging.getLogger(__name__)

router = APIRouter()

@router.post("", response_model=schemas.SolveRun)
def create_solve(config: schemas.SolveConfig, db: Session = Depends(get_db)):
    try:
        summary = run_case(config)
    except SolverError as e:
        logger.warning(f"Solve of {config.problem} failed: {e}")
        crud.create_solve_run(db, config, error=str(e))
        raise solver_http_error(e)
    return crud.create_solve_run(db, config, summary=summary)

@router.get("", response_model=schemas.PaginatedResponse)
def read_solves(
    page: int = Query(1, ge=1),
    size: int = Query(10, ge=1, le=200),
    problem: Optional[str] = None,
    db: Session = Depends(get_db)
):
    skip = (page - 1) * size
    runs = crud.get_solve_runs(db, skip=skip, limit=size, problem=problem)
    return paginate_response(
        items=[schemas.SolveRun.model_validate(run) for run in runs],
        total=crud.count_solve_runs(db, problem=problem),
        page=page,
        size=size
    )

@router.get("/{run_id}", response_model=schemas.SolveRun)
def read_solve(run_id: UUID, db: Session = Depends(get_db)):
    db_run = crud.get_solve_run(db, run_id=run_id)
    if db_run is None:
        raise HTTPException(status_code=404, detail="Solve run not found")
    return db_run

from sqlalchemy.orm import Session
from typing import List, Optional
from uuid import UUID
from app import models, schemas

# Solve runs
def get_solve_run(db: Session, run_id: UUID) -> Optional[models.SolveRun]:
    return db.query(models.SolveRun).filter(models.SolveRun.id == str(run_id)).first()

def get_solve_runs(db: Session, skip: int = 0, limit: int = 100, problem: Optional[str] = None) -> List[models.SolveRun]:
    query = db.query(models.SolveRun)
    if problem:
        query = query.filter(models.SolveRun.problem == problem)
    return query.order_by(models.SolveRun.created_at.desc()).offset(skip).limit(limit).all()

def count_solve_runs(db: Session, problem: Optional[str] = None) -> int:
    query = db.query(models.SolveRun)
    if problem:
        query = query.filter(models.SolveRun.problem == problem)
    return query.count()

def create_solve_run(
    db: Session,
    config: schemas.SolveConfig,
    summary: Optional[schemas.SolveSummary] = None,
    error: Optional[str] = None,
) -> models.SolveRun:
    db_run = models.SolveRun(
        problem=config.problem,
        mode=config.mode.value,
        status=schemas.RunStatus.ok.value if summary is not None else schemas.RunStatus.failed.value,
        config=config.model_dump(mode="json"),
        summary=summary.model_dump(mode="json") if summary is not None else None,
        error=error,
        dofs=summary.dof_cg + summary.dof_trace if summary is not None else None,
        seconds=summary.seconds if summary is not None else None,
    )
    db.add(db_run)
    db.commit()
    db.refresh(db_run)
    return db_run

# Study runs
def get_study_run(db: Session, run_id: UUID) -> Optional[models.StudyRun]:
    return db.query(models.StudyRun).filter(models.StudyRun.id == str(run_id)).first()

def create_study_run(
    db: Session,
    config: schemas.StudyConfig,
    rows: List[schemas.StudyRow],
    rates: List[schemas.RateSummary],
    csv_path: Optional[str] = None,
    error: Optional[str] = None,
) -> models.StudyRun:
    db_run = models.StudyRun(
        name=config.name,
        problem=config.problem,
        status=schemas.RunStatus.failed.value if error else schemas.RunStatus.ok.value,
        config=config.model_dump(mode="json"),
        rows=[r.model_dump(mode="json") for r in rows],
        rates=[r.model_dump(mode="json") for r in rates],
        csv_path=csv_path,
        error=error,
    )
    db.add(db_run)
    db.commit()
    db.refresh(db_run)
    return db_run

from fastapi import APIRouter, Depends, HTTPException
from sqlalchemy.orm import Session
from pathlib import Path
from typing import Optional
from uuid import UUID
import logging
import os
from app import crud, schemas
from app.database import get_db
from app.routers.common import solver_http_error
from app.solver.errors import SolverError
from app.solver.study import OUTPUT_DIR, run_study

logger = logging.getLogger(__name__)

router = APIRouter()

# Process pool ceiling for studies started over HTTP
MAX_WORKERS = int(os.getenv("CGHDG_MAX_WORKERS", "4"))

def report_dir(out_dir: Optional[str]) -> Path:
    """Resolve a requested report directory inside OUTPUT_DIR, 422 when it escapes"""
    root = Path(OUTPUT_DIR).resolve()
    target = (root / out_dir).resolve() if out_dir else root
    if not target.is_relative_to(root):
        raise HTTPException(status_code=422, detail=f"out_dir must stay inside the report directory, got {out_dir!r}")
    return target

@router.post("", response_model=schemas.StudyRun)
def create_study(config: schemas.StudyConfig, db: Session = Depends(get_db)):
    if config.workers > MAX_WORKERS:
        raise HTTPException(status_code=422, detail=f"workers must be at most {MAX_WORKERS}, got {config.workers}")
    out_dir = report_dir(config.out_dir)
    try:
        report = run_study(config, out_dir)
    except SolverError as e:
        logger.warning(f"Study {config.name} failed: {e}")
        crud.create_study_run(db, config, rows=[], rates=[], error=str(e))
        raise solver_http_error(e)
    csv_path = str(report.paths["rows"]) if "rows" in report.paths else None
    return crud.create_study_run(db, config, rows=report.rows, rates=report.rates, csv_path=csv_path)

@router.get("/{run_id}", response_model=schemas.StudyRun)
def read_study(run_id: UUID, db: Session = Depends(get_db)):
    db_run = crud.get_study_run(db, run_id=run_id)
    if db_run is None:
        raise HTTPException(status_code=404, detail="Study run not found")
    return db_run

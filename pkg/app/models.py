from sqlalchemy import Column, Integer, String, DateTime, Text, JSON, Float
from sqlalchemy.sql import func
import uuid
from app.database import Base

class SolveRun(Base):
    __tablename__ = "solve_runs"

    id = Column(String(36), primary_key=True, default=lambda: str(uuid.uuid4()), index=True)
    problem = Column(String, nullable=False, index=True)
    mode = Column(String, nullable=False)
    status = Column(String, nullable=False)  # ok | failed
    config = Column(JSON, nullable=False)  # SolveConfig as submitted
    summary = Column(JSON, nullable=True)  # SolveSummary when status is ok
    error = Column(Text, nullable=True)
    dofs = Column(Integer, nullable=True)
    seconds = Column(Float, nullable=True)
    created_at = Column(DateTime(timezone=True), server_default=func.now())

class StudyRun(Base):
    __tablename__ = "study_runs"

    id = Column(String(36), primary_key=True, default=lambda: str(uuid.uuid4()), index=True)
    name = Column(String, nullable=False)
    problem = Column(String, nullable=False, index=True)
    status = Column(String, nullable=False)
    config = Column(JSON, nullable=False)
    rows = Column(JSON, nullable=False, default=list)  # StudyRow records
    rates = Column(JSON, nullable=False, default=list)  # RateSummary records
    csv_path = Column(String, nullable=True)
    error = Column(Text, nullable=True)
    created_at = Column(DateTime(timezone=True), server_default=func.now())

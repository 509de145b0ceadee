from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker
import logging
import os

logger = logging.getLogger(__name__)

# Run registry location, default to a local SQLite file next to the reports
DATABASE_URL = os.getenv("DATABASE_URL", "sqlite:///./cghdg_runs.db")

if DATABASE_URL.startswith("sqlite"):
    # one shared connection, so "sqlite://" keeps its tables across sessions and threads
    from sqlalchemy.pool import StaticPool
    engine = create_engine(
        DATABASE_URL,
        connect_args={"check_same_thread": False},
        poolclass=StaticPool,
    )
else:
    engine = create_engine(DATABASE_URL, pool_pre_ping=True)

SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

Base = declarative_base()

def init_db() -> None:
    """Create the solve and study run tables if missing"""
    from app import models  # noqa: F401  registers the tables on Base
    Base.metadata.create_all(bind=engine)
    logger.info(f"Run registry ready at {engine.url.render_as_string(hide_password=True)}")

# Dependency to get DB session
def get_db():
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from prometheus_client import make_asgi_app
from contextlib import asynccontextmanager
import logging
from app.routers import solves, studies, meshes
from app.database import init_db

logger = logging.getLogger(__name__)

@asynccontextmanager
async def lifespan(app: FastAPI):
    """Create the run registry tables on startup"""
    init_db()
    yield

app = FastAPI(
    title="CG-HDG Coupling API",
    description="Coupled continuous / hybridizable discontinuous Galerkin solves and convergence studies",
    version="1.0.0",
    docs_url="/docs",
    redoc_url="/redoc",
    lifespan=lifespan
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(solves.router, prefix="/api/solves", tags=["solves"])
app.include_router(studies.router, prefix="/api/studies", tags=["studies"])
app.include_router(meshes.router, prefix="/api/meshes", tags=["meshes"])

@app.get("/api/health")
async def health_check():
    return {"status": "healthy"}

# Add metrics endpoint
metrics_app = make_asgi_app()
app.mount("/metrics", metrics_app)

@app.get("/")
async def serve_root():
    from fastapi.responses import RedirectResponse
    return RedirectResponse(url="/docs", status_code=302)

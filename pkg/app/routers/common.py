from fastapi import HTTPException
from typing import List
from math import ceil
from app import schemas
from app.solver.errors import ConfigError, SingularLocalMatrixError, SingularSystemError, SolverError

def paginate_response(items: List, total: int, page: int, size: int) -> schemas.PaginatedResponse:
    return schemas.PaginatedResponse(
        items=items,
        total=total,
        page=page,
        size=size,
        pages=ceil(total / size) if size > 0 else 0
    )

def solver_http_error(error: SolverError) -> HTTPException:
    """400 for bad input, 422 for invalid configs, 500 for singular systems"""
    if isinstance(error, (SingularSystemError, SingularLocalMatrixError)):
        return HTTPException(status_code=500, detail=f"Singular system: {error}")
    if isinstance(error, ConfigError):
        return HTTPException(status_code=422, detail=str(error))
    return HTTPException(status_code=400, detail=str(error))

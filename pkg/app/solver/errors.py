"""Exception hierarchy for the solver core.

Every error also derives from the closest builtin so callers that only know
about ValueError / ArithmeticError keep working.
"""
from typing import Optional


class SolverError(Exception):
    """Base class for all solver failures"""


# Mesh
class MeshError(SolverError, ValueError):
    pass


class MeshFormatError(MeshError):
    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class DegenerateElementError(MeshError):
    pass


# Reference element / quadrature
class DegreeError(SolverError, ValueError):
    pass


class QuadratureError(SolverError, ValueError):
    pass


# Materials and Voigt operators
class MaterialError(SolverError, ArithmeticError):
    pass


class NormalVectorError(SolverError, ValueError):
    pass


# Assembly
class NitscheParameterError(SolverError, ValueError):
    pass


class CouplingError(SolverError, ValueError):
    pass


class SingularLocalMatrixError(SolverError, ArithmeticError):
    pass


# Linear systems
class LinearSystemError(SolverError, IndexError):
    pass


class SingularSystemError(SolverError, ArithmeticError):
    def __init__(self, message: str, pivot: int = -1):
        self.pivot = pivot
        super().__init__(f"{message} (pivot position {pivot})")


# Post-processing and studies
class PointLocationError(SolverError, ValueError):
    pass


class ConvergenceRateError(SolverError, ValueError):
    """Raised when an error is zero or negative, i.e. the exact solution is
    reproduced to machine precision and no rate can be measured."""


class ConfigError(SolverError, ValueError):
    def __init__(self, message: str, path: Optional[str] = None, lineno: Optional[int] = None):
        self.path = path
        self.lineno = lineno
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
        if lineno is not None:
            prefix += f"{lineno}:"
        super().__init__(f"{prefix} {message}" if prefix else message)

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Optional, Any, Dict, List, Literal
from datetime import datetime
from enum import Enum

MAX_DEGREE = 6
MAX_LEVEL = 8

ProblemName = Literal["thermal_square", "elasticity_square", "cooks_membrane"]


class SolveMode(str, Enum):
    CG_ONLY = "CG_ONLY"
    HDG_ONLY = "HDG_ONLY"
    COUPLED = "COUPLED"


class RunStatus(str, Enum):
    ok = "ok"
    failed = "failed"


# Solve configuration
class SolveConfig(BaseModel):
    problem: ProblemName = "thermal_square"
    mode: SolveMode = SolveMode.COUPLED
    k_cg: int = Field(1, ge=1, le=MAX_DEGREE)
    k_hdg: int = Field(1, ge=1, le=MAX_DEGREE)
    level: int = Field(2, ge=0, le=MAX_LEVEL, description="Refinement level, 2^(level+1) cells per side")
    tau: Optional[float] = Field(None, gt=0, description="HDG stabilization; problem default when omitted")
    gamma: Optional[float] = Field(None, gt=0, description="Nitsche penalty; problem default when omitted")
    theta: Literal[1, 2] = Field(2, description="1 plane stress, 2 plane strain")
    nu_hdg: Optional[float] = Field(None, gt=-1.0, lt=0.5, description="Poisson ratio of the soft material")
    postprocess: bool = False

    @model_validator(mode='after')
    def validate_postprocess(self):
        if self.postprocess:
            if self.problem == "thermal_square":
                raise ValueError("postprocess is defined for elasticity problems only")
            if self.k_hdg + 1 > MAX_DEGREE:
                raise ValueError(f"postprocess needs k_hdg + 1 <= {MAX_DEGREE}")
        return self

    @property
    def mixed_degree(self) -> bool:
        return self.k_cg == self.k_hdg + 1


# Study configuration
class StudyConfig(BaseModel):
    name: str = Field("study", min_length=1, max_length=100, pattern=r'^[A-Za-z0-9_.-]+$')
    problem: ProblemName = "thermal_square"
    mode: SolveMode = SolveMode.COUPLED
    degrees: List[int] = Field(default_factory=lambda: [1], min_length=1, description="Values of k")
    k_cg: Literal["k", "k+1"] = Field("k", description="CG degree relative to k")
    levels: List[int] = Field(default_factory=lambda: [2, 3, 4, 5], min_length=1)
    tau: Optional[float] = Field(None, gt=0)
    gamma: Optional[float] = Field(None, gt=0)
    theta: Literal[1, 2] = 2
    nu_hdg: Optional[float] = Field(None, gt=-1.0, lt=0.5)
    postprocess: bool = False
    gammas: List[float] = Field(default_factory=list, description="Nitsche values of a gamma sweep")
    sweep_level: int = Field(3, ge=0, le=MAX_LEVEL)
    out_dir: Optional[str] = None
    workers: int = Field(1, ge=1, le=64)

    @field_validator('degrees', mode='after')
    @classmethod
    def validate_degrees(cls, v):
        if any(k < 1 or k > MAX_DEGREE for k in v):
            raise ValueError(f"degrees must lie in [1, {MAX_DEGREE}]")
        if len(set(v)) != len(v):
            raise ValueError("degrees must be distinct")
        return sorted(v)

    @field_validator('levels', mode='after')
    @classmethod
    def validate_levels(cls, v):
        if any(level < 0 or level > MAX_LEVEL for level in v):
            raise ValueError(f"levels must lie in [0, {MAX_LEVEL}]")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("levels must be strictly increasing")
        return v

    @field_validator('gammas', mode='after')
    @classmethod
    def validate_gammas(cls, v):
        if any(g <= 0 for g in v):
            raise ValueError("sweep values of gamma must be positive")
        return sorted(v)

    @model_validator(mode='after')
    def validate_degree_pairs(self):
        # every (k, level) solve must itself be a valid SolveConfig
        for k in self.degrees:
            self.solve_config(k, self.levels[0])
        return self

    def degree_pair(self, k: int):
        """(k_cg, k_hdg) for study degree k"""
        return (k + 1 if self.k_cg == "k+1" else k), k

    def solve_config(self, k: int, level: int, gamma: Optional[float] = None) -> SolveConfig:
        k_cg, k_hdg = self.degree_pair(k)
        return SolveConfig(
            problem=self.problem,
            mode=self.mode,
            k_cg=k_cg,
            k_hdg=k_hdg,
            level=level,
            tau=self.tau,
            gamma=self.gamma if gamma is None else gamma,
            theta=self.theta,
            nu_hdg=self.nu_hdg,
            postprocess=self.postprocess,
        )


# Result schemas
class SolveSummary(BaseModel):
    k_cg: int
    k_hdg: int
    level: int
    h: float
    n_elements: int
    n_interface_faces: int
    dof_cg: int
    dof_trace: int
    residual: float
    symmetry_defect: float
    err_u: Optional[float] = None
    err_u_cg: Optional[float] = None
    err_u_hdg: Optional[float] = None
    err_s: Optional[float] = None
    err_ustar: Optional[float] = None
    err_u_post: Optional[float] = None
    interface_jump: Optional[float] = None
    tip_uy: Optional[float] = None
    seconds: float
    timings: Dict[str, float] = Field(default_factory=dict)


class StudyRow(BaseModel):
    k: int
    level: int
    h: float
    n_elements: int
    dof_cg: int
    dof_trace: int
    err_u: Optional[float] = None
    err_u_cg: Optional[float] = None
    err_u_hdg: Optional[float] = None
    err_s: Optional[float] = None
    err_ustar: Optional[float] = None
    err_u_post: Optional[float] = None
    rate_u: Optional[float] = None
    rate_s: Optional[float] = None
    rate_ustar: Optional[float] = None
    rate_u_post: Optional[float] = None
    tip_uy: Optional[float] = None
    seconds: float


class RateSummary(BaseModel):
    k: int
    quantity: str
    final_rate: Optional[float] = None
    fitted_slope: Optional[float] = None
    locking: bool = False


# Run registry schemas
class SolveRun(BaseModel):
    id: str
    problem: str
    mode: str
    status: RunStatus
    config: Dict[str, Any]
    summary: Optional[SolveSummary] = None
    error: Optional[str] = None
    created_at: datetime

    model_config = ConfigDict(from_attributes=True)


class StudyRun(BaseModel):
    id: str
    name: str
    problem: str
    status: RunStatus
    config: Dict[str, Any]
    rows: List[StudyRow] = Field(default_factory=list)
    rates: List[RateSummary] = Field(default_factory=list)
    csv_path: Optional[str] = None
    error: Optional[str] = None
    created_at: datetime

    model_config = ConfigDict(from_attributes=True)


class MeshSummary(BaseModel):
    problem: str
    level: int
    h: float
    n_nodes: int
    n_elements: int
    n_faces: int
    subdomains: Dict[str, int]
    face_classes: Dict[str, int]


# Pagination schemas
class PaginatedResponse(BaseModel):
    items: list
    total: int
    page: int
    size: int
    pages: int

"""Error norms, convergence tables, Cook's tip tracking and the study runner.

Study files are flat ``key = value`` text with ``[study]``, ``[sweep]`` and
``[output]`` sections; ``#`` and ``;`` start comments.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union
import logging
import math
import os
import tempfile

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy.stats import linregress

from app.schemas import RateSummary, SolveConfig, SolveSummary, StudyConfig, StudyRow
from app.solver.cg_assembly import VectorField, interface_side
from app.solver.coupled_driver import SolutionBundle, solve
from app.solver.errors import ConfigError, ConvergenceRateError, PointLocationError
from app.solver.hdg_core import evaluate_fields
from app.solver.mesh import FaceClass, Mesh, Subdomain
from app.solver.ref_elem import (
    MAX_QUADRATURE_ORDER,
    affine_maps,
    lagrange_basis,
    simplex_quadrature,
    tabulate_oriented_faces,
    tabulate_trace,
)

logger = logging.getLogger(__name__)

OUTPUT_DIR = os.getenv("CGHDG_OUTPUT_DIR", "out")

ERROR_ORDER_FLOOR = 16
LOCKING_RATE = 0.5
PLATEAU_TOLERANCE = 0.10
OSCILLATION_FACTOR = 2.0
PLATEAU_GAMMAS = (1.0e2, 1.0e3)
POINT_TOLERANCE = 1e-10
CSV_FLOAT_FORMAT = "%.17g"

CSV_COLUMNS = [
    "k", "level", "h", "n_elements", "dof_cg", "dof_trace",
    "err_u", "err_u_cg", "err_u_hdg", "err_s", "err_ustar", "err_u_post",
    "rate_u", "rate_s", "rate_ustar", "rate_u_post", "tip_uy", "seconds",
]
RATE_QUANTITIES = {"u": "err_u", "s": "err_s", "ustar": "err_ustar", "u_post": "err_u_post"}


# Discrete fields and norms

@dataclass(frozen=True)
class DiscreteField:
    """Elementwise field on a set of mesh elements.

    evaluate(ref_points (np, 2)) -> values (ne, np, c) on every element.
    """
    mesh: Mesh
    elements: np.ndarray
    degree: int
    evaluate: Callable[[np.ndarray], np.ndarray]


def nodal_field(mesh: Mesh, elements: np.ndarray, degree: int, coefficients: np.ndarray) -> DiscreteField:
    coefficients = np.asarray(coefficients, dtype=float)
    return DiscreteField(mesh, np.asarray(elements, dtype=np.intp), degree,
                         lambda ref: evaluate_fields(coefficients, degree, ref))


def cg_displacement(bundle: SolutionBundle) -> DiscreteField:
    cg = bundle.cg_map
    return nodal_field(bundle.mesh, cg.elements, cg.degree, bundle.u_cg[cg.element_nodes])


def cg_stress(bundle: SolutionBundle) -> DiscreteField:
    """D grad_S u per CG element, without interface averaging"""
    cg = bundle.cg_map
    ops = bundle.problem.ops
    coefficients = bundle.u_cg[cg.element_nodes].reshape(len(cg.elements), -1) if len(cg.elements) else np.zeros((0, 0))
    D = bundle.problem.constitutive(bundle.mesh, cg.elements)
    ref = lagrange_basis(cg.degree, 2)

    def evaluate(points):
        if len(cg.elements) == 0:
            return np.zeros((0, len(points), ops.n_mixed))
        maps = affine_maps(bundle.mesh.element_vertices(cg.elements))
        G = ops.gradient_operator(maps.physical_gradients(ref.gradient(np.atleast_2d(points))))
        strain = np.einsum("epmi,ei->epm", G, coefficients)
        return np.einsum("emn,epn->epm", D, strain)

    return DiscreteField(bundle.mesh, cg.elements, max(cg.degree - 1, 0), evaluate)


def hdg_displacement(bundle: SolutionBundle) -> Optional[DiscreteField]:
    if bundle.hdg is None:
        return None
    return nodal_field(bundle.mesh, bundle.hdg.elements, bundle.hdg.degree, bundle.hdg.u)


def hdg_stress(bundle: SolutionBundle) -> Optional[DiscreteField]:
    if bundle.hdg is None:
        return None
    return nodal_field(bundle.mesh, bundle.hdg.elements, bundle.hdg.degree, bundle.hdg.stress)


def postprocessed_displacement(bundle: SolutionBundle) -> Optional[DiscreteField]:
    if bundle.u_star is None:
        return None
    return nodal_field(bundle.mesh, bundle.hdg.elements, bundle.hdg.degree + 1, bundle.u_star)


def error_quadrature_order(degree: int) -> int:
    return min(max(ERROR_ORDER_FLOOR, 2 * degree + 2), MAX_QUADRATURE_ORDER)


def l2_error(discrete: DiscreteField, exact: VectorField, order: Optional[int] = None) -> float:
    """sqrt of the elementwise quadrature of |u_h - u|^2, summed over components"""
    if len(discrete.elements) == 0:
        return 0.0
    order = error_quadrature_order(discrete.degree) if order is None else order
    rule = simplex_quadrature(order, 2)
    maps = affine_maps(discrete.mesh.element_vertices(discrete.elements))
    uh = discrete.evaluate(rule.points)
    u = np.asarray(exact(maps.to_physical(rule.points)), dtype=float).reshape(uh.shape)
    squared = np.einsum("q,e,eqc->", rule.weights, maps.det, (uh - u) ** 2)
    return math.sqrt(max(float(squared), 0.0))


def combined(*parts: Optional[float]) -> Optional[float]:
    """Root of the sum of squares over the parts that exist"""
    present = [p for p in parts if p is not None]
    return math.sqrt(sum(p * p for p in present)) if present else None


def interface_jump(bundle: SolutionBundle) -> Optional[float]:
    """Face L2 norm of u_CG - u_hat on the interface"""
    mesh = bundle.mesh
    faces = mesh.faces_of_class(FaceClass.INTERFACE)
    if faces.size == 0:
        return None
    cg = bundle.cg_map
    k_hdg = bundle.trace_map.degree
    c = bundle.trace_map.n_comp
    order = error_quadrature_order(max(cg.degree, k_hdg))
    segment = simplex_quadrature(order, 1)

    side = interface_side(mesh, faces, Subdomain.CG)
    rows = cg.row_of(mesh.face_elements[faces, side])
    phi = tabulate_oriented_faces(cg.degree, order).values[mesh.face_local[faces, side], side]
    u_cg = np.einsum("fqa,fac->fqc", phi, bundle.u_cg[cg.element_nodes[rows]])
    dofs = bundle.trace_map.face_dofs(faces)
    u_hat = bundle.u_hat[dofs].reshape(len(faces), k_hdg + 1, c)
    u_trace = np.einsum("qb,fbc->fqc", tabulate_trace(k_hdg, order), u_hat)
    lengths = mesh.face_lengths()[faces]
    return math.sqrt(float(np.einsum("q,f,fqc->", segment.weights, lengths, (u_cg - u_trace) ** 2)))


# Rates

def convergence_rates(errors: Sequence[float], hs: Sequence[float]) -> List[float]:
    """log(e_i / e_i+1) / log(h_i / h_i+1) for consecutive levels"""
    errors = np.asarray(errors, dtype=float)
    hs = np.asarray(hs, dtype=float)
    if errors.shape != hs.shape or errors.size < 2:
        raise ValueError(f"need at least two matching errors and sizes, got {errors.size} and {hs.size}")
    if np.any(errors <= 0.0):
        raise ConvergenceRateError("errors must be positive; the exact solution is reproduced to machine precision")
    if np.any(np.diff(hs) >= 0.0):
        raise ConvergenceRateError("mesh sizes must be strictly decreasing")
    return (np.log(errors[:-1] / errors[1:]) / np.log(hs[:-1] / hs[1:])).tolist()


def fitted_slope(errors: Sequence[float], hs: Sequence[float]) -> float:
    """Least-squares slope of log e against log h over all levels"""
    return float(linregress(np.log(np.asarray(hs, dtype=float)), np.log(np.asarray(errors, dtype=float))).slope)


# Point evaluation

def locate_point(mesh: Mesh, point: Sequence[float], elements: Optional[np.ndarray] = None) -> Tuple[int, np.ndarray]:
    """(element, reference coordinates) of the first element containing point"""
    elements = np.arange(mesh.n_elements) if elements is None else np.asarray(elements, dtype=np.intp)
    if elements.size == 0:
        raise PointLocationError(f"no elements to search for point {tuple(point)}")
    maps = affine_maps(mesh.element_vertices(elements))
    offset = np.asarray(point, dtype=float) - maps.origin
    xi = np.einsum("eji,ej->ei", maps.inverse_transpose, offset)
    bary = np.column_stack([1.0 - xi.sum(axis=1), xi])
    inside = np.flatnonzero(bary.min(axis=1) >= -POINT_TOLERANCE)
    if inside.size == 0:
        raise PointLocationError(f"point {tuple(point)} lies outside the mesh")
    return int(elements[inside[0]]), xi[inside[0]]


def displacement_at(bundle: SolutionBundle, point: Sequence[float]) -> np.ndarray:
    """Displacement of the discretization owning point; u* is preferred on HDG elements"""
    mesh = bundle.mesh
    element, xi = locate_point(mesh, point)
    if mesh.elem_subdomain[element] == Subdomain.CG:
        cg = bundle.cg_map
        row = cg.row_of(np.array([element]))[0]
        values = lagrange_basis(cg.degree, 2).evaluate(xi[None])[0]
        return values @ bundle.u_cg[cg.element_nodes[row]]
    hdg = bundle.hdg
    row = int(np.flatnonzero(hdg.elements == element)[0])
    if bundle.u_star is not None:
        values = lagrange_basis(hdg.degree + 1, 2).evaluate(xi[None])[0]
        return values @ bundle.u_star[row]
    values = lagrange_basis(hdg.degree, 2).evaluate(xi[None])[0]
    return values @ hdg.u[row]


def tip_displacement(bundle: SolutionBundle, point: Optional[Sequence[float]] = None) -> float:
    """Vertical displacement at point, by default the problem's tip"""
    point = bundle.problem.tip if point is None else point
    if point is None:
        raise PointLocationError(f"{bundle.problem.name} defines no tip point")
    return float(displacement_at(bundle, point)[-1])


# Summaries

def summarize(bundle: SolutionBundle) -> SolveSummary:
    problem = bundle.problem
    errors: Dict[str, Optional[float]] = {}
    if problem.exact is not None:
        cg_u = l2_error(cg_displacement(bundle), problem.exact) if len(bundle.cg_map.elements) else None
        hdg_field = hdg_displacement(bundle)
        hdg_u = l2_error(hdg_field, problem.exact) if hdg_field is not None else None
        errors.update(err_u=combined(cg_u, hdg_u), err_u_cg=cg_u, err_u_hdg=hdg_u)
        star = postprocessed_displacement(bundle)
        star_u = l2_error(star, problem.exact) if star is not None else None
        errors["err_ustar"] = star_u
        # CG displacement with u* in place of the HDG one
        errors["err_u_post"] = combined(cg_u, star_u) if star_u is not None else None
    if problem.exact_stress is not None:
        cg_s = l2_error(cg_stress(bundle), problem.exact_stress) if len(bundle.cg_map.elements) else None
        hdg_field = hdg_stress(bundle)
        hdg_s = l2_error(hdg_field, problem.exact_stress) if hdg_field is not None else None
        errors["err_s"] = combined(cg_s, hdg_s)

    config = bundle.config
    return SolveSummary(
        k_cg=config.k_cg,
        k_hdg=config.k_hdg,
        level=config.level,
        h=bundle.h,
        n_elements=bundle.n_elements,
        n_interface_faces=bundle.n_interface_faces,
        dof_cg=bundle.dof_cg,
        dof_trace=bundle.dof_trace,
        residual=bundle.residual,
        symmetry_defect=bundle.symmetry_defect,
        interface_jump=interface_jump(bundle),
        tip_uy=tip_displacement(bundle) if problem.tip is not None else None,
        seconds=sum(bundle.timings.values()),
        timings=bundle.timings,
        **errors,
    )


def run_case(config: SolveConfig) -> SolveSummary:
    """Solve and summarize; top-level so worker processes can run it"""
    return summarize(solve(config))


def _run_all(configs: List[SolveConfig], workers: int) -> List[SolveSummary]:
    if workers <= 1 or len(configs) <= 1:
        return [run_case(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_case, configs))


# Reports

@dataclass
class StudyReport:
    config: StudyConfig
    rows: List[StudyRow]
    rates: List[RateSummary]
    paths: Dict[str, Path] = field(default_factory=dict)

    def frame(self) -> pd.DataFrame:
        return rows_frame(self.rows)

    def rows_for(self, k: int) -> List[StudyRow]:
        return [r for r in self.rows if r.k == k]

    @property
    def locking(self) -> Dict[int, bool]:
        return {r.k: r.locking for r in self.rates if r.quantity == "u"}


def rows_frame(rows: Iterable[StudyRow]) -> pd.DataFrame:
    return pd.DataFrame([r.model_dump() for r in rows], columns=CSV_COLUMNS)


def _rate_column(rows: List[StudyRow], error_key: str) -> List[Optional[float]]:
    """Rate of each row against the previous level, None where undefined"""
    out: List[Optional[float]] = [None] * len(rows)
    for i in range(1, len(rows)):
        e0, e1 = getattr(rows[i - 1], error_key), getattr(rows[i], error_key)
        if e0 is None or e1 is None or e0 <= 0.0 or e1 <= 0.0:
            continue
        out[i] = convergence_rates([e0, e1], [rows[i - 1].h, rows[i].h])[0]
    return out


def with_rates(rows: List[StudyRow]) -> List[StudyRow]:
    """Rows of one degree, sorted by level, with rate columns filled from the stored errors"""
    rows = sorted(rows, key=lambda r: r.level)
    columns = {f"rate_{q}": _rate_column(rows, key) for q, key in RATE_QUANTITIES.items()}
    return [r.model_copy(update={name: values[i] for name, values in columns.items()}) for i, r in enumerate(rows)]


def rate_summaries(rows: List[StudyRow]) -> List[RateSummary]:
    summaries = []
    for k in sorted({r.k for r in rows}):
        per_k = sorted((r for r in rows if r.k == k), key=lambda r: r.level)
        for quantity, key in RATE_QUANTITIES.items():
            errors = [getattr(r, key) for r in per_k]
            if len(per_k) < 2 or any(e is None or e <= 0.0 for e in errors):
                continue
            final = getattr(per_k[-1], f"rate_{quantity}")
            locking = quantity == "u" and final is not None and final < LOCKING_RATE
            if locking:
                logger.warning(f"Locking suspected for k={k}: final displacement rate {final:.2f} < {LOCKING_RATE}")
            summaries.append(RateSummary(
                k=k,
                quantity=quantity,
                final_rate=final,
                fitted_slope=fitted_slope(errors, [r.h for r in per_k]),
                locking=locking,
            ))
    return summaries


def atomic_write_csv(frame: pd.DataFrame, path: Path) -> Path:
    """Write to a temporary file in the target directory, then rename over path"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as stream:
            frame.to_csv(stream, index=False, float_format=CSV_FLOAT_FORMAT)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_report(path: Union[str, Path]) -> List[StudyRow]:
    """Rows of a study CSV; missing values come back as None"""
    frame = pd.read_csv(path, float_precision="round_trip")
    records = frame.to_dict(orient="records")
    return [
        StudyRow.model_validate({k: None if isinstance(v, float) and math.isnan(v) else v for k, v in record.items()})
        for record in records
    ]


def run_study(config: Union[StudyConfig, str, Path], out_dir: Optional[Union[str, Path]] = None) -> StudyReport:
    """Solve every (k, level) pair, fill rates and write <name>.csv and <name>_rates.csv"""
    if not isinstance(config, StudyConfig):
        config = read_config(config)
    cases = [(k, level) for k in config.degrees for level in config.levels]
    logger.info(f"Study {config.name}: {config.problem} {config.mode.value}, k={config.degrees}, levels={config.levels}")
    summaries = _run_all([config.solve_config(k, level) for k, level in cases], config.workers)

    rows: List[StudyRow] = []
    for (k, level), s in zip(cases, summaries):
        rows.append(StudyRow(
            k=k, level=level, h=s.h, n_elements=s.n_elements, dof_cg=s.dof_cg, dof_trace=s.dof_trace,
            err_u=s.err_u, err_u_cg=s.err_u_cg, err_u_hdg=s.err_u_hdg, err_s=s.err_s, err_ustar=s.err_ustar,
            err_u_post=s.err_u_post,
            tip_uy=s.tip_uy, seconds=s.seconds,
        ))
    rows = [r for k in config.degrees for r in with_rates([r for r in rows if r.k == k])]
    report = StudyReport(config=config, rows=rows, rates=rate_summaries(rows))

    target = out_dir if out_dir is not None else config.out_dir
    if target is not None:
        target = Path(target)
        report.paths["rows"] = atomic_write_csv(report.frame(), target / f"{config.name}.csv")
        rates = pd.DataFrame([r.model_dump() for r in report.rates], columns=list(RateSummary.model_fields))
        report.paths["rates"] = atomic_write_csv(rates, target / f"{config.name}_rates.csv")
        logger.info(f"Wrote {report.paths['rows']} and {report.paths['rates']}")
    return report


# Nitsche parameter sweep

@dataclass
class SweepReport:
    config: StudyConfig
    frame: pd.DataFrame  # k, gamma, err_u, err_u_cg, err_u_hdg
    verdicts: pd.DataFrame  # see VERDICT_COLUMNS
    paths: Dict[str, Path] = field(default_factory=dict)


VERDICT_COLUMNS = ["k", "plateau", "oscillatory", "plateau_error", "smallest_gamma_error", "worst_gamma", "worst_ratio"]


def sweep_verdicts(frame: pd.DataFrame) -> pd.DataFrame:
    """Per k: plateau when errors at 1e2 and 1e3 agree within 10%, and oscillatory
    when some gamma below the plateau range reaches twice the plateau error.

    The blow-up below the coercivity threshold is not monotone in gamma, so the
    worst sub-plateau gamma is reported, not only the smallest one.
    """
    records = []
    for k, group in frame.groupby("k", sort=True):
        by_gamma = dict(zip(group["gamma"], group["err_u"]))
        low, high = (by_gamma.get(g) for g in PLATEAU_GAMMAS)
        plateau = None
        if low is not None and high is not None and high > 0:
            plateau = bool(abs(low - high) / high < PLATEAU_TOLERANCE)
        stable = [e for g, e in by_gamma.items() if g >= PLATEAU_GAMMAS[0]]
        plateau_error = min(stable) if stable else None
        smallest = by_gamma[min(by_gamma)]
        below = {g: e for g, e in by_gamma.items() if g < PLATEAU_GAMMAS[0]}
        oscillatory = worst_gamma = worst_ratio = None
        if plateau_error is not None and plateau_error > 0 and below:
            worst_gamma = max(below, key=below.get)
            worst_ratio = float(below[worst_gamma] / plateau_error)
            oscillatory = bool(worst_ratio >= OSCILLATION_FACTOR)
        records.append({"k": int(k), "plateau": plateau, "oscillatory": oscillatory,
                        "plateau_error": plateau_error, "smallest_gamma_error": smallest,
                        "worst_gamma": worst_gamma, "worst_ratio": worst_ratio})
    return pd.DataFrame(records, columns=VERDICT_COLUMNS)


def run_gamma_sweep(config: Union[StudyConfig, str, Path], out_dir: Optional[Union[str, Path]] = None) -> SweepReport:
    if not isinstance(config, StudyConfig):
        config = read_config(config)
    if not config.gammas:
        raise ConfigError("gamma sweep needs a non-empty 'gammas' list in [sweep]")
    cases = [(k, g) for k in config.degrees for g in config.gammas]
    summaries = _run_all([config.solve_config(k, config.sweep_level, gamma=g) for k, g in cases], config.workers)
    frame = pd.DataFrame(
        [{"k": k, "gamma": g, "err_u": s.err_u, "err_u_cg": s.err_u_cg, "err_u_hdg": s.err_u_hdg}
         for (k, g), s in zip(cases, summaries)],
        columns=["k", "gamma", "err_u", "err_u_cg", "err_u_hdg"],
    )
    report = SweepReport(config=config, frame=frame, verdicts=sweep_verdicts(frame))
    target = out_dir if out_dir is not None else config.out_dir
    if target is not None:
        target = Path(target)
        report.paths["sweep"] = atomic_write_csv(frame, target / f"{config.name}_gamma.csv")
        report.paths["verdicts"] = atomic_write_csv(report.verdicts, target / f"{config.name}_gamma_verdicts.csv")
    return report


# Config files

_SECTIONS = {
    "study": {"name", "problem", "mode", "k", "degrees", "k_hdg", "k_cg", "levels", "tau", "gamma",
              "theta", "nu_hdg", "postprocess", "workers"},
    "sweep": {"gammas", "level"},
    "output": {"out_dir"},
}
_RENAMED = {("study", "k"): "degrees", ("study", "k_hdg"): "degrees", ("sweep", "level"): "sweep_level"}
_LISTS = {"degrees", "levels"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _int_list(value: str) -> List[int]:
    if ".." in value:
        lo, hi = value.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in value.split(",") if v.strip()]


def _gamma_list(value: str) -> List[float]:
    """Comma list, or 'a..b' for every power of ten between a and b"""
    if ".." in value:
        lo, hi = (float(v) for v in value.split("..", 1))
        if lo <= 0 or hi <= 0:
            raise ValueError("gamma bounds must be positive")
        return [10.0 ** e for e in range(round(math.log10(lo)), round(math.log10(hi)) + 1)]
    return [float(v) for v in value.split(",") if v.strip()]


def _parse_value(key: str, value: str):
    if key in _LISTS:
        return _int_list(value)
    if key == "gammas":
        return _gamma_list(value)
    if key == "postprocess":
        lowered = value.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if key in ("tau", "gamma", "nu_hdg"):
        return float(value)
    if key in ("theta", "workers", "sweep_level"):
        return int(value)
    return value


def parse_config(text: str, path: Optional[str] = None) -> StudyConfig:
    values: Dict[str, object] = {}
    lines: Dict[str, int] = {}
    section = "study"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or line[1:-1].strip() not in _SECTIONS:
                raise ConfigError(f"unknown section {line!r}; expected one of {sorted(_SECTIONS)}", path, lineno)
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", path, lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SECTIONS[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", path, lineno)
        name = _RENAMED.get((section, key), key)
        if name in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[name]})", path, lineno)
        try:
            values[name] = _parse_value(name, value)
        except ValueError as e:
            raise ConfigError(f"bad value for {key!r}: {e}", path, lineno)
        lines[name] = lineno

    try:
        return StudyConfig.model_validate(values)
    except ValidationError as e:
        first = e.errors()[0]
        name = str(first["loc"][0]) if first["loc"] else None
        raise ConfigError(f"{name or 'config'}: {first['msg']}", path, lines.get(name))


def read_config(path: Union[str, Path]) -> StudyConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", str(path))
    return parse_config(text, str(path))

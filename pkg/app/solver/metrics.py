"""Prometheus instruments for solver runs"""
from contextlib import contextmanager
from typing import Dict, Iterator
import time

from prometheus_client import Counter, Histogram

SOLVES = Counter(
    "cghdg_solves_total",
    "Coupled solves by problem, mode and outcome",
    ["problem", "mode", "status"],
)

STAGE_SECONDS = Histogram(
    "cghdg_stage_seconds",
    "Wall-clock time per solve stage",
    ["stage"],
    buckets=(0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0, 60.0),
)

SYSTEM_DOFS = Histogram(
    "cghdg_system_dofs",
    "Size of the global coupled system",
    buckets=(1e2, 1e3, 1e4, 3e4, 1e5, 3e5, 1e6),
)

STAGES = ("mesh", "assemble_cg", "local_solvers", "assemble_hdg", "factorize_solve", "reconstruct", "postprocess")

# register every stage so its series is exported before the first solve
for _name in STAGES:
    STAGE_SECONDS.labels(stage=_name)


@contextmanager
def stage(name: str, timings: Dict[str, float]) -> Iterator[None]:
    """Time a block into timings[name] and the stage histogram"""
    start = time.perf_counter()
    try:
        yield
    finally:
        elapsed = time.perf_counter() - start
        timings[name] = timings.get(name, 0.0) + elapsed
        STAGE_SECONDS.labels(stage=name).observe(elapsed)

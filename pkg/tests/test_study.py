import logging
import math

import numpy as np
import pandas as pd
import pytest

from app.schemas import SolveConfig, SolveMode, StudyConfig, StudyRow
from app.solver.coupled_driver import solve
from app.solver.errors import ConfigError, ConvergenceRateError, PointLocationError
from app.solver.mesh import Subdomain, SubdomainSpec, build_structured
from app.solver.study import (
    CSV_COLUMNS,
    atomic_write_csv,
    combined,
    convergence_rates,
    displacement_at,
    fitted_slope,
    l2_error,
    locate_point,
    nodal_field,
    parse_config,
    rate_summaries,
    read_config,
    read_report,
    rows_frame,
    run_gamma_sweep,
    run_study,
    sweep_verdicts,
    tip_displacement,
    with_rates,
)
from tests.conftest import UNIT


def _row(k, level, h, err_u, **extra):
    return StudyRow(k=k, level=level, h=h, n_elements=8 * 4 ** level, dof_cg=10, dof_trace=12,
                    err_u=err_u, seconds=0.01, **extra)


def test_rate_of_quarter_error():
    assert convergence_rates([1e-2, 2.5e-3], [0.5, 0.25]) == pytest.approx([2.0])


def test_rates_need_positive_errors():
    with pytest.raises(ConvergenceRateError):
        convergence_rates([1e-2, 0.0], [0.5, 0.25])


def test_rates_need_decreasing_h():
    with pytest.raises(ConvergenceRateError):
        convergence_rates([1e-2, 1e-3], [0.25, 0.5])


def test_rates_need_matching_lengths():
    with pytest.raises(ValueError):
        convergence_rates([1e-2], [0.5])
    with pytest.raises(ValueError):
        convergence_rates([1e-2, 1e-3], [0.5, 0.25, 0.125])


def test_fitted_slope_of_power_law():
    hs = [0.5, 0.25, 0.125, 0.0625]
    assert fitted_slope([3.0 * h ** 3 for h in hs], hs) == pytest.approx(3.0)


def test_combined_skips_missing_parts():
    assert combined(3.0, None, 4.0) == pytest.approx(5.0)
    assert combined(None, None) is None


def test_l2_error_of_interpolated_linear_field(unit_cg_mesh):
    # P1 coefficients of u = x + y on each element
    vertices = unit_cg_mesh.element_vertices()
    coefficients = vertices.sum(axis=2)[..., None]
    field = nodal_field(unit_cg_mesh, np.arange(2), 1, coefficients)
    assert l2_error(field, lambda p: (p[..., 0] + p[..., 1])[..., None]) < 1e-14
    # constant offset of 1 over the unit square
    assert l2_error(field, lambda p: (p[..., 0] + p[..., 1] - 1.0)[..., None]) == pytest.approx(1.0)


def test_locate_point(unit_cg_mesh):
    element, xi = locate_point(unit_cg_mesh, (0.75, 0.25))
    assert unit_cg_mesh.elem_subdomain[element] == Subdomain.CG
    vertices = unit_cg_mesh.element_vertices([element])[0]
    point = vertices[0] + xi[0] * (vertices[1] - vertices[0]) + xi[1] * (vertices[2] - vertices[0])
    np.testing.assert_allclose(point, [0.75, 0.25])
    assert locate_point(unit_cg_mesh, (1.0, 1.0))[0] in (0, 1)
    with pytest.raises(PointLocationError):
        locate_point(unit_cg_mesh, (1.5, 0.5))


def test_displacement_at_hdg_and_cg_points():
    bundle = solve(SolveConfig(problem="thermal_square", level=2))
    hdg_value = displacement_at(bundle, (-0.3, 0.2))
    cg_value = displacement_at(bundle, (0.3, 0.2))
    exact = math.cos(0.5 * math.pi * math.hypot(0.3, 0.2))
    assert hdg_value[0] == pytest.approx(exact, abs=0.1)
    assert cg_value[0] == pytest.approx(exact, abs=0.1)
    with pytest.raises(PointLocationError):
        tip_displacement(bundle)


def test_with_rates_and_locking_warning(caplog):
    rows = [_row(1, 1, 0.5, 1e-2), _row(1, 3, 0.125, 9e-3), _row(1, 2, 0.25, 1e-2 / 4)]
    rated = with_rates(rows)
    assert [r.level for r in rated] == [1, 2, 3]
    assert rated[0].rate_u is None
    assert rated[1].rate_u == pytest.approx(2.0)
    assert rated[2].rate_u < 0
    with caplog.at_level(logging.WARNING, logger="app.solver.study"):
        summaries = rate_summaries(rated)
    assert [s.quantity for s in summaries] == ["u"]
    assert summaries[0].locking
    assert "Locking suspected" in caplog.text


def test_no_rate_without_errors():
    rows = with_rates([_row(2, 0, 1.0, None), _row(2, 1, 0.5, None)])
    assert all(r.rate_u is None for r in rows)
    assert rate_summaries(rows) == []


def test_csv_round_trip_is_exact(tmp_path):
    rows = with_rates([_row(1, 1, math.sqrt(2) / 4, 1 / 3), _row(1, 2, math.sqrt(2) / 8, 1 / 13, err_s=0.1)])
    path = atomic_write_csv(rows_frame(rows), tmp_path / "out" / "study.csv")
    assert list(pd.read_csv(path).columns) == CSV_COLUMNS
    back = read_report(path)
    assert back == rows
    assert back[0].err_s is None
    assert not list(path.parent.glob(".*.tmp"))


SAMPLE = """\
# thermal convergence
[study]
name = thermal_k1
problem = thermal_square
mode = COUPLED
k = 1, 2
levels = 0..2
gamma = 100 ; Nitsche
[sweep]
gammas = 1e-2..1e2
level = 1
[output]
out_dir = results
"""


def test_parse_config():
    config = parse_config(SAMPLE)
    assert config.name == "thermal_k1"
    assert config.mode == SolveMode.COUPLED
    assert config.degrees == [1, 2]
    assert config.levels == [0, 1, 2]
    assert config.gamma == 100.0
    assert config.gammas == pytest.approx([1e-2, 1e-1, 1.0, 10.0, 100.0])
    assert config.sweep_level == 1
    assert config.out_dir == "results"


def test_keys_before_any_section_belong_to_study():
    config = parse_config("problem = elasticity_square\nk_hdg = 1\nk_cg = k+1\npostprocess = yes\n")
    assert config.postprocess is True
    assert config.degree_pair(1) == (2, 1)
    assert config.solve_config(1, 2).mixed_degree


@pytest.mark.parametrize(
    "text, lineno",
    [
        ("[study]\nproblem = thermal_square\nbogus = 1\n", 3),
        ("k = 1\nk = 2\n", 2),
        ("[solver]\n", 1),
        ("levels = 2..4\nproblem\n", 2),
        ("postprocess = maybe\n", 1),
        ("problem = thermal_square\nlevels = 3, 2\n", 2),
        ("name = fine\nproblem = l_shape\n", 2),
    ],
)
def test_config_errors_name_the_line(text, lineno):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "study.ini")
    assert info.value.lineno == lineno
    assert str(info.value).startswith(f"study.ini:{lineno}:")


def test_postprocess_config_rejected_for_thermal():
    with pytest.raises(ConfigError):
        parse_config("problem = thermal_square\npostprocess = true\n")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        read_config(tmp_path / "absent.ini")


def test_sweep_verdicts():
    frame = pd.DataFrame({
        "k": [1, 1, 1, 2, 2, 2],
        "gamma": [1e-2, 1e2, 1e3, 1e-2, 1e2, 1e3],
        "err_u": [5e-2, 1.0e-3, 1.05e-3, 1.1e-4, 1e-4, 3e-4],
    })
    verdicts = sweep_verdicts(frame).set_index("k")
    assert verdicts.loc[1, "plateau"] and verdicts.loc[1, "oscillatory"]
    assert not verdicts.loc[2, "plateau"] and not verdicts.loc[2, "oscillatory"]
    assert verdicts.loc[1, "plateau_error"] == pytest.approx(1.0e-3)
    assert verdicts.loc[1, "worst_gamma"] == pytest.approx(1e-2)


def test_sweep_verdicts_catch_spike_between_gammas():
    frame = pd.DataFrame({
        "k": [1] * 5,
        "gamma": [1e-1, 1.0, 1e1, 1e2, 1e3],
        "err_u": [1.5e-3, 3.0e-2, 2.5e-3, 1.0e-3, 1.02e-3],
    })
    verdict = sweep_verdicts(frame).iloc[0]
    assert verdict["plateau"]
    assert verdict["smallest_gamma_error"] < 2 * verdict["plateau_error"]
    assert verdict["oscillatory"]
    assert verdict["worst_gamma"] == pytest.approx(1.0)
    assert verdict["worst_ratio"] == pytest.approx(30.0)


def test_run_study_writes_reports(tmp_path):
    config = StudyConfig(name="thermal_small", problem="thermal_square", degrees=[1], levels=[0, 1, 2])
    report = run_study(config, tmp_path)
    assert [r.level for r in report.rows] == [0, 1, 2]
    assert report.rows[-1].rate_u > 1.0
    assert report.locking == {1: False}
    assert report.paths["rows"] == tmp_path / "thermal_small.csv"
    assert read_report(report.paths["rows"]) == report.rows
    rates = pd.read_csv(report.paths["rates"])
    assert set(rates["quantity"]) == {"u", "s"}


def test_run_study_from_file(tmp_path, study_file):
    path = study_file("name = from_file\nlevels = 0, 1\n[output]\nout_dir = %s\n" % (tmp_path / "reports"))
    report = run_study(path)
    assert report.paths["rows"].exists()
    assert len(report.frame()) == 2


def test_gamma_sweep(tmp_path):
    config = StudyConfig(name="sweep", degrees=[1], levels=[1], gammas=[1e2, 1e3, 10.0], sweep_level=1)
    report = run_gamma_sweep(config, tmp_path)
    assert list(report.frame["gamma"]) == [10.0, 100.0, 1000.0]
    assert report.paths["verdicts"].exists()
    assert bool(report.verdicts.loc[0, "plateau"])


def test_gamma_sweep_needs_values():
    with pytest.raises(ConfigError):
        run_gamma_sweep(StudyConfig(name="empty", levels=[1]))


def test_l2_error_of_zero_field():
    mesh = build_structured(4, 4, UNIT, SubdomainSpec.uniform(Subdomain.HDG))
    coefficients = np.zeros((mesh.n_elements, 3, 1))
    field = nodal_field(mesh, np.arange(mesh.n_elements), 1, coefficients)
    assert l2_error(field, lambda p: np.ones(p.shape[:-1] + (1,))) == pytest.approx(1.0)


@pytest.mark.slow
@pytest.mark.parametrize("k", [1, 2])
def test_thermal_coupled_rates(k):
    report = run_study(StudyConfig(name=f"thermal_k{k}", degrees=[k], levels=[2, 3, 4]))
    final = report.rows[-1]
    assert final.rate_u == pytest.approx(k + 1, abs=0.25)
    assert final.rate_s > k - 0.2


@pytest.mark.slow
def test_elasticity_coupled_rates_and_superconvergence():
    config = StudyConfig(name="elasticity_k1", problem="elasticity_square", degrees=[1], levels=[2, 3, 4], postprocess=True)
    report = run_study(config)
    final = report.rows[-1]
    assert final.rate_u > 1.7
    assert not report.locking[1]
    assert final.err_ustar < final.err_u_hdg


@pytest.mark.slow
def test_cooks_tip_converges():
    config = StudyConfig(name="cook", problem="cooks_membrane", degrees=[2], levels=[1, 2, 3], postprocess=True)
    tips = [r.tip_uy for r in run_study(config).rows]
    assert all(t > 0 for t in tips)
    assert abs(tips[2] - tips[1]) < abs(tips[1] - tips[0])


@pytest.mark.slow
def test_mixed_degree_global_displacement_rate():
    config = StudyConfig(name="mixed", problem="elasticity_square", degrees=[1, 2], levels=[2, 3, 4, 5],
                         k_cg="k+1", postprocess=True)
    report = run_study(config)
    for k in (1, 2):
        final = report.rows_for(k)[-1]
        assert k + 1.7 <= final.rate_u_post <= k + 2.4
        assert final.err_u_post < final.err_u


@pytest.mark.slow
@pytest.mark.parametrize("mode, check", [
    (SolveMode.CG_ONLY, lambda rate: rate < 0.5),
    (SolveMode.HDG_ONLY, lambda rate: rate >= 1.8),
])
def test_single_method_locking(mode, check):
    config = StudyConfig(name=f"locking_{mode.value}", problem="elasticity_square", mode=mode,
                         degrees=[1], levels=[2, 3, 4, 5], nu_hdg=0.49999)
    report = run_study(config)
    assert check(report.rows[-1].rate_u)
    assert report.locking[1] == (mode == SolveMode.CG_ONLY)


@pytest.mark.slow
def test_gamma_sweep_plateau_and_oscillation():
    config = StudyConfig(name="sweep_l3", degrees=[1, 2, 3], levels=[3], sweep_level=3,
                         gammas=[1e-1, 1.0, 1e1, 1e2, 1e3, 1e4, 1e5])
    verdicts = run_gamma_sweep(config).verdicts
    assert verdicts["plateau"].all()
    assert verdicts["oscillatory"].any()


@pytest.mark.slow
def test_cooks_tip_against_single_methods():
    levels = [1, 2, 3, 4]

    def tips(mode):
        config = StudyConfig(name=f"cook_{mode.value}", problem="cooks_membrane", mode=mode,
                             degrees=[1], levels=levels, nu_hdg=0.4999)
        return [r.tip_uy for r in run_study(config).rows]

    coupled, hdg, cg = tips(SolveMode.COUPLED), tips(SolveMode.HDG_ONLY), tips(SolveMode.CG_ONLY)
    steps = np.abs(np.diff(coupled))
    assert np.all(steps[1:] < steps[:-1])
    gaps = np.abs(np.subtract(coupled, hdg))
    assert np.all(np.diff(gaps) < 0)
    assert all(c > g for c, g in zip(coupled, cg))
    assert abs(coupled[-1] - hdg[-1]) / abs(hdg[-1]) < 0.02

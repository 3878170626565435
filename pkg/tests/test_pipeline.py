"""
Tests for pipeline settings, the end-to-end runner, report writers and simulation studies.
"""
import json

import numpy as np
import pandas as pd
import pytest

from data.errors import PipelineError, ReportWriteError, StructuralError
from data.generator import ampute_mar, simulate_dcf, simulate_drift, simulate_irt
from data.schema import DriftConfig, GroupAssignment, SimulationConfig
from models.schema import LatentModel
from pipeline import studies
from pipeline.report import emit_checks, emit_report
from pipeline.runner import dcf_entrypoint, fitted_matrix, run_checks, run_method
from pipeline.settings import PipelineConfig, load_pipeline_config, load_scenario


@pytest.fixture(scope="module")
def continuous():
    return simulate_irt(SimulationConfig(n_students=300, n_courses=8, grade_kind="continuous", seed=3))


@pytest.fixture(scope="module")
def continuous_report(continuous):
    return run_method(continuous.matrix, PipelineConfig(seed=1))


# ---------------------------------------------------------------- settings

def test_pipeline_config_defaults():
    """Test that defaults come from config.py."""
    settings = load_pipeline_config()
    assert settings.seed == 42
    assert settings.max_dimensions == 3
    assert settings.dcf_test == "wald"
    assert not settings.strict


def test_pipeline_config_file_and_overrides(tmp_path):
    """Test case-insensitive file keys and overrides that skip None."""
    path = tmp_path / "run.cfg"
    path.write_text("SEED=7\nmax_dimensions=2\nfdr_q=0.1\n")
    settings = load_pipeline_config(path, {"max_dimensions": 1, "fdr_q": None})
    assert settings.seed == 7
    assert settings.max_dimensions == 1
    assert settings.fdr_q == pytest.approx(0.1)


@pytest.mark.parametrize("content", ["bogus=1\n", "fdr_q=2\n", "degenerate_policy=drop\n"])
def test_pipeline_config_rejects_bad_settings(tmp_path, content):
    """Test that unknown keys and invalid values are rejected."""
    path = tmp_path / "bad.cfg"
    path.write_text(content)
    with pytest.raises(StructuralError):
        load_pipeline_config(path)


def test_pipeline_config_missing_file(tmp_path):
    """Test that a missing settings file is reported."""
    with pytest.raises(StructuralError):
        load_pipeline_config(tmp_path / "nope.cfg")


def test_fit_options():
    """Test the keyword arguments handed to each fitter."""
    settings = PipelineConfig(irt_max_epochs=50)
    assert settings.fit_options("irt")["max_epochs"] == 50
    assert set(settings.fit_options("agm")) == {"tol", "max_iter"}
    assert settings.fit_options("centering") == {}


def test_load_scenario_drift(tmp_path):
    """Test a drift scenario mixing simulation and drift keys."""
    path = tmp_path / "drift.cfg"
    path.write_text(
        "generator=drift\nscenario=course_drift_with_shock\nshock_term=3\nn_terms=5\nn_students=100\n"
    )
    scenario = load_scenario(path, {"n_courses": 6})
    assert scenario.generator == "drift"
    assert scenario.simulation.n_students == 100
    assert scenario.simulation.n_courses == 6
    assert scenario.drift.shock_term == 3


def test_load_scenario_dcf_courses(tmp_path):
    """Test the comma-separated course list."""
    path = tmp_path / "dcf.cfg"
    path.write_text("generator=dcf\ndcf_courses=0, 2\ndcf_effect=-0.8\n")
    scenario = load_scenario(path)
    assert scenario.dcf_courses == [0, 2]
    assert scenario.dcf_effect == pytest.approx(-0.8)
    assert scenario.drift is None


@pytest.mark.parametrize("content", [
    "generator=dcf\n",
    "generator=choice_bias\n",
    "generator=drift\n",
    "generator=irt\ncolour=blue\n",
    "generator=teleport\n",
])
def test_load_scenario_rejects_incomplete(tmp_path, content):
    """Test that generators without their required keys are rejected."""
    path = tmp_path / "bad.cfg"
    path.write_text(content)
    with pytest.raises(StructuralError):
        load_scenario(path)


def test_load_scenario_defaults():
    """Test the default scenario without a file."""
    scenario = load_scenario()
    assert scenario.generator == "irt"
    assert scenario.simulation.n_students == 2000


# ---------------------------------------------------------------- runner

def test_run_method_continuous(continuous, continuous_report):
    """Test an AGM run on complete continuous data."""
    report = continuous_report
    assert report.model_class == "agm"
    assert report.n_dim == 1
    assert report.imputation.method == "none"
    assert report.little is None
    assert report.dim_upper_bound in (1, 2)
    assert len(report.difficulty.rows) == 8
    assert len(report.centering.rows) == 8

    fitted = report.difficulty.as_series().reindex(continuous.matrix.course_ids).to_numpy()
    assert np.corrcoef(fitted, continuous.delta[:, 0])[0, 1] > 0.9
    assert report.validity is not None
    assert [r.mode for r in report.split_half] == ["random"]


def test_run_method_binary():
    """Test that pass/fail data runs the IRT branch."""
    data = simulate_irt(SimulationConfig(n_students=300, n_courses=8, seed=4))
    report = run_method(data.matrix)
    assert report.model_class == "irt"
    assert report.bic[0].likelihood == "marginal"
    fitted = report.difficulty.as_series().reindex(data.matrix.course_ids).to_numpy()
    assert np.corrcoef(fitted, data.delta[:, 0])[0, 1] > 0.9


def test_run_method_with_missing_grades(continuous):
    """Test missingness checks and imputation on amputed data."""
    amputed = ampute_mar(continuous.matrix, tau=0.3, alpha=0.5, seed=2).matrix
    report = run_method(amputed, PipelineConfig(seed=1))
    assert report.imputation.method in ("mean", "mipca")
    assert report.n_observed == amputed.n_observed
    assert len(report.mar) == 8
    assert report.observed_ratio.overall < 1.0


def test_run_method_constant_course_falls_back_to_mean():
    """Test that a course with one observed outcome turns MIPCA failure into a flag."""
    data = simulate_irt(SimulationConfig(n_students=25, n_courses=6, seed=3))
    amputed = ampute_mar(data.matrix, tau=0.5, alpha=0.5, seed=3).matrix
    report = run_method(amputed)
    assert report.imputation.method == "mean"
    assert any(f.check == "imputation" for f in report.flags), [f.check for f in report.flags]
    assert report.difficulty.rows, "difficulty estimates are still emitted"


def test_run_method_deterministic(continuous):
    """Test that equal inputs and settings give equal estimates."""
    amputed = ampute_mar(continuous.matrix, tau=0.3, alpha=0.3, seed=5).matrix
    a = run_method(amputed, PipelineConfig(seed=9))
    b = run_method(amputed, PipelineConfig(seed=9))
    pd.testing.assert_frame_equal(a.difficulty.to_frame(), b.difficulty.to_frame())
    assert a.summary() == b.summary()


def test_run_method_forced_agm_on_binary_fails():
    """Test that forcing AGM onto pass/fail data aborts in the scale stage."""
    data = simulate_irt(SimulationConfig(n_students=100, n_courses=5))
    with pytest.raises(PipelineError) as info:
        run_method(data.matrix, PipelineConfig(model_class="agm"))
    assert info.value.stage == "scale"


def test_run_method_forced_irt_binarizes(continuous):
    """Test that forcing IRT on continuous grades binarizes at the pass threshold."""
    report = run_method(continuous.matrix, PipelineConfig(model_class="irt"))
    assert report.model_class == "irt"
    assert report.binarized
    assert any(f.check == "scale" for f in report.flags)


def test_run_method_time_resolved_needs_terms(continuous):
    """Test that time-resolved runs require a term table."""
    with pytest.raises(PipelineError) as info:
        run_method(continuous.matrix, PipelineConfig(time_resolved=True))
    assert info.value.stage == "time_resolved"


def test_run_method_time_resolved(tmp_path):
    """Test per-offering output on drifting data."""
    cfg = SimulationConfig(n_students=800, n_courses=4, seed=6)
    data = simulate_drift(cfg, DriftConfig(scenario="course_constant_drift", rate=0.3, n_terms=2))
    report = run_method(data.matrix, PipelineConfig(time_resolved=True, bootstrap_reps=3))

    assert len(report.time_resolved.rows) == 8
    assert {r.mode for r in report.split_half} == {"random", "time"}
    written = emit_report(report, tmp_path)
    assert tmp_path / "difficulty_over_time.csv" in written


def test_run_checks_flags_instead_of_raising(continuous, continuous_report):
    """Test that checks on a fitted model return results and flags."""
    m, _ = fitted_matrix(continuous.matrix, PipelineConfig())
    checks = run_checks(m, continuous_report.model, PipelineConfig())
    assert checks.q3 is not None
    assert checks.residual_pca is not None
    assert len(checks.split_half) == 1
    assert set(checks.summary()) == {"format_version", "q3", "residual_pca", "split_half", "validity", "flags"}


# ---------------------------------------------------------------- DCF entry point

@pytest.fixture(scope="module")
def dcf_setup():
    data, groups = simulate_dcf(SimulationConfig(n_students=600, n_courses=6, seed=12), courses=[2], effect=1.5)
    report = run_method(data.matrix)
    m, _ = fitted_matrix(data.matrix, PipelineConfig())
    return m, report.model, groups


def test_dcf_entrypoint_all_courses(dcf_setup):
    """Test BH-corrected DCF over every course."""
    m, model, groups = dcf_setup
    results = dcf_entrypoint(m, model, groups)
    assert len(results) == 6
    assert all(r.p_bh is not None for r in results)
    assert results[0].course_id == "C03"


def test_dcf_entrypoint_single_course(dcf_setup):
    """Test that a single-course request skips the correction."""
    m, model, groups = dcf_setup
    results = dcf_entrypoint(m, model, groups, course_name="C03")
    assert len(results) == 1
    assert results[0].p_bh is None
    assert results[0].p_raw < 0.05


def test_dcf_entrypoint_unknown_students(dcf_setup):
    """Test that group files naming unknown students are rejected."""
    m, model, groups = dcf_setup
    extended = GroupAssignment(groups={**groups.groups, "S9999": 1})
    with pytest.raises(StructuralError):
        dcf_entrypoint(m, model, extended)


# ---------------------------------------------------------------- report writers

def test_emit_report_all(tmp_path, continuous_report):
    """Test every file written by the default format."""
    written = emit_report(continuous_report, tmp_path)
    names = [p.name for p in written]
    assert names == [
        "summary.json", "model.json", "difficulty.csv", "centering_difficulty.csv", "traits.csv",
        "missingness.csv", "pve.csv", "bic.csv", "q3_violations.csv", "reliability.csv", "flags.csv",
    ]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["model_class"] == "agm"
    assert "harder course" in summary["sign_convention"]
    assert summary["settings"]["seed"] == 1

    model = LatentModel.from_json((tmp_path / "model.json").read_text())
    assert model.course_ids == continuous_report.model.course_ids
    difficulty = pd.read_csv(tmp_path / "difficulty.csv")
    assert len(difficulty) == 8


def test_emit_report_json_only(tmp_path, continuous_report):
    """Test that the json format skips the CSV tables."""
    written = emit_report(continuous_report, tmp_path, fmt="json")
    assert [p.name for p in written] == ["summary.json", "model.json"]


def test_emit_report_bad_format(tmp_path, continuous_report):
    """Test that unknown formats are rejected."""
    with pytest.raises(ValueError):
        emit_report(continuous_report, tmp_path, fmt="xml")


def test_emit_report_unwritable(tmp_path, continuous_report):
    """Test that an output path occupied by a file is a write error."""
    blocker = tmp_path / "taken"
    blocker.write_text("x")
    with pytest.raises(ReportWriteError):
        emit_report(continuous_report, blocker)


def test_emit_checks(tmp_path, continuous, continuous_report):
    """Test the check-only writer."""
    m, _ = fitted_matrix(continuous.matrix, PipelineConfig())
    model = continuous_report.model
    written = emit_checks(run_checks(m, model, PipelineConfig()), tmp_path)
    assert [p.name for p in written] == ["checks.json", "q3_violations.csv", "reliability.csv", "flags.csv"]
    assert json.loads((tmp_path / "checks.json").read_text())["format_version"] == 1


# ---------------------------------------------------------------- studies

def test_baseline_study_small():
    """Test one summary row per model class."""
    cfg = SimulationConfig(n_students=200, n_courses=6, replicates=1, seed=2)
    frame = studies.baseline_study(cfg)
    assert set(frame["model_class"]) == {"agm", "centering", "irt"}
    assert "bic_correct_share" in frame.columns
    assert (frame["pve_1"] > frame["pve_2"]).all()


def test_imputation_study_small():
    """Test the imputation study grid layout."""
    cfg = SimulationConfig(n_students=300, n_courses=6, replicates=1, grade_kind="continuous")
    frame = studies.imputation_reliability_study(cfg, taus=(0.3,), alphas=(0.2, 0.6))
    assert len(frame) == 2
    assert frame["missing_rate"].is_monotonic_increasing
    assert set(frame.columns) >= {"pve_complete", "pve_mipca", "pve_mean", "mipca_converged"}
    mipca_gap = (frame["pve_mipca"] - frame["pve_complete"]).abs()
    mean_gap = (frame["pve_mean"] - frame["pve_complete"]).abs()
    assert (mipca_gap < 0.05).all(), mipca_gap.tolist()
    assert (mean_gap > mipca_gap).all(), "mean imputation should distort PVE more than MIPCA"


def test_time_invariance_study_small():
    """Test that time-invariant fits still track the temporal mean under mild drift."""
    cfg = SimulationConfig(n_students=400, n_courses=10, replicates=1, grade_kind="continuous")
    frame = studies.time_invariance_study(cfg, scenarios=("course_constant_drift", "course_drift_with_shock"))
    assert len(frame) == 2
    assert (frame["model_class"] == "agm").all()
    assert (frame["course_r"] > 0.95).all(), frame["course_r"].tolist()


def test_drift_trajectories_layout():
    """Test the long trajectory table."""
    cfg = SimulationConfig(n_students=20, n_courses=3)
    frame = studies.drift_trajectories(cfg, DriftConfig(scenario="course_constant_drift", n_terms=4))
    assert list(frame.columns) == ["entity", "kind", "term", "value"]
    assert len(frame) == (20 + 3) * 4


def test_choice_bias_study_small():
    """Test one row per model class and cap."""
    cfg = SimulationConfig(n_students=200, n_courses=6, replicates=1)
    frame = studies.choice_bias_study(cfg, max_courses_grid=(3,))
    assert sorted(frame["model_class"]) == ["agm", "centering"]
    assert (frame["mean_courses"] <= 3).all()
    assert (frame["rmse_mean"] > 0).all()
    by_class = frame.set_index("model_class")
    assert by_class.loc["agm", "r2_mean"] > by_class.loc["centering", "r2_mean"]
    assert by_class.loc["agm", "rmse_mean"] < by_class.loc["centering", "rmse_mean"]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

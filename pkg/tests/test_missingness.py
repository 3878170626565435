"""
Tests for missingness diagnostics and the regression helpers they use.
"""
import numpy as np
import pandas as pd
import pytest

from analysis import missingness
from analysis.regression import fit_linear, fit_logistic, has_group_separation
from data.errors import NotApplicableError
from data.schema import CourseResponseMatrix, GradeScaleSpec


SCALE = GradeScaleSpec(lowest_grade=-100, kind="continuous")


def _matrix(values):
    values = np.asarray(values, dtype=float)
    frame = pd.DataFrame(
        values,
        index=[f"S{i:04d}" for i in range(values.shape[0])],
        columns=[f"C{j:02d}" for j in range(values.shape[1])],
    )
    return CourseResponseMatrix(grades=frame, scale=SCALE)


def _correlated(n, n_courses, seed, rho=0.5):
    rng = np.random.default_rng(seed)
    common = rng.standard_normal((n, 1))
    return np.sqrt(rho) * common + np.sqrt(1 - rho) * rng.standard_normal((n, n_courses))


def _mcar(n, n_courses, rate, seed):
    values = _correlated(n, n_courses, seed)
    rng = np.random.default_rng(seed + 1000)
    mask = rng.random(values.shape) < rate
    mask[:, -1] = False
    values[mask] = np.nan
    return _matrix(values)


def _mar(n, seed):
    """Course 0 goes missing for students whose other grades are high."""
    values = _correlated(n, 5, seed)
    rng = np.random.default_rng(seed + 1)
    gpa_others = values[:, 1:].mean(axis=1)
    prob = np.where(gpa_others > 0.3, 0.9, 0.05)
    values[rng.random(n) < prob, 0] = np.nan
    return _matrix(values)


def test_missingness_patterns():
    """Test that patterns and their counts are found."""
    m = _matrix([[1, 2, np.nan], [3, 4, np.nan], [5, 6, 7], [np.nan, 1, 2]])
    patterns = {(p.observed_set, p.count) for p in missingness.missingness_patterns(m)}
    assert patterns == {((0, 1), 2), ((0, 1, 2), 1), ((1, 2), 1)}


def test_little_complete_matrix_not_applicable():
    """Test that a complete matrix has nothing to test."""
    m = _matrix(_correlated(50, 3, seed=0))
    with pytest.raises(NotApplicableError):
        missingness.little_mcar_test(m)


def test_little_detects_mar():
    """Test that missingness driven by other grades is rejected as MCAR."""
    result = missingness.little_mcar_test(_mar(600, seed=3))
    assert result.p_value < 0.01
    assert result.dof > 0
    assert result.n_patterns >= 2


def test_little_mcar_rejection_rate():
    """Test that the MCAR rejection rate stays near the nominal level."""
    rejections = [
        missingness.little_mcar_test(_mcar(300, 5, 0.2, seed)).p_value < 0.05
        for seed in range(100)
    ]
    assert np.mean(rejections) <= 0.12


def test_little_p_value_bounds():
    """Test that the statistic and p-value are in range."""
    result = missingness.little_mcar_test(_mcar(200, 4, 0.3, seed=8))
    assert result.t2 >= 0
    assert 0 <= result.p_value <= 1
    assert result.shrinkage == 0.0, "Well-conditioned data needs no shrinkage"


def test_mar_regression_explains_mar_course():
    """Test that a MAR-masked course has a pseudo R2 above the cut."""
    results = missingness.mar_regression_test(_mar(800, seed=5))
    first = results[0]
    assert first.tested
    assert first.pseudo_r2 > 0.1
    assert not first.flagged
    assert set(first.coefficients) == set(missingness.MAR_FEATURES)


def test_mar_regression_flags_random_course():
    """Test that randomly masked courses are flagged (missingness unexplained)."""
    results = missingness.mar_regression_test(_mcar(800, 4, 0.2, seed=6))
    tested = [r for r in results if r.tested]
    assert tested
    assert all(r.flagged for r in tested)


def test_mar_regression_skips_complete_course():
    """Test that a course without missing grades is not tested."""
    results = missingness.mar_regression_test(_mcar(200, 4, 0.2, seed=1))
    last = results[-1]
    assert not last.tested
    assert last.note == "no missing grades"


def _little(p):
    return missingness.LittleResult(t2=1.0, dof=3, p_value=p, n_patterns=2)


def _mar_result(course, flagged):
    return missingness.MarCourseResult(course_id=course, pseudo_r2=0.05 if flagged else 0.3, flagged=flagged)


def test_classify_mcar():
    """Test that a large Little p-value means MCAR."""
    verdict = missingness.classify_missingness(_little(0.4), [_mar_result("A", True)])
    assert verdict.mechanism == "MCAR"
    assert verdict.caution_courses == ["A"]


def test_classify_mar():
    """Test that mostly explained missingness means MAR."""
    mar = [_mar_result("A", False), _mar_result("B", False), _mar_result("C", True)]
    verdict = missingness.classify_missingness(_little(0.001), mar)
    assert verdict.mechanism == "MAR"
    assert verdict.unflagged_courses == 2
    assert verdict.testable_courses == 3


def test_classify_mnar_suspect():
    """Test that mostly unexplained missingness is MNAR-suspect."""
    mar = [_mar_result("A", True), _mar_result("B", True), _mar_result("C", False)]
    verdict = missingness.classify_missingness(_little(0.001), mar)
    assert verdict.mechanism == "MNAR_SUSPECT"


def test_observed_ratio_report():
    """Test observed shares per course and overall."""
    m = _matrix([[1, np.nan], [2, 3], [4, np.nan], [5, 6]])
    report = missingness.observed_ratio_report(m)
    assert report.overall == pytest.approx(6 / 8)
    assert report.per_course == {"C00": 1.0, "C01": 0.5}
    assert report.students_per_course == {"C00": 4, "C01": 2}


def test_mar_table_columns():
    """Test the missingness table layout."""
    table = missingness.mar_table(missingness.mar_regression_test(_mar(300, seed=2)))
    assert list(table.columns) == ["course", "GPA", "STD", "MIN", "MAX", "pseudo_r2", "flagged", "note"]
    assert len(table) == 5


def test_has_group_separation():
    """Test detection of an outcome constant within a group."""
    y = np.array([1, 1, 0, 1])
    assert has_group_separation(y, np.array([-1, -1, 1, 1]))
    assert not has_group_separation(np.array([1, 0, 0, 1]), np.array([-1, -1, 1, 1]))


def test_fit_logistic_recovers_slope():
    """Test that a logistic fit recovers a known slope."""
    rng = np.random.default_rng(0)
    x = rng.standard_normal(4000)
    y = (rng.random(4000) < 1 / (1 + np.exp(-(0.5 + 1.5 * x)))).astype(float)
    fit = fit_logistic(y, pd.DataFrame({"x": x}))
    assert fit.params["x"] == pytest.approx(1.5, abs=0.15)
    assert fit.params["const"] == pytest.approx(0.5, abs=0.15)
    assert not fit.separated
    assert 0 < fit.pseudo_r2 < 1


def test_fit_logistic_separation_falls_back_to_ridge():
    """Test that perfectly separated data gives a finite ridge fit."""
    x = np.linspace(-2, 2, 40)
    y = (x > 0).astype(float)
    fit = fit_logistic(y, pd.DataFrame({"x": x}))
    assert fit.separated
    assert np.isfinite(fit.params["x"]) and fit.params["x"] > 0


def test_fit_linear_offset():
    """Test that an offset is subtracted before least squares."""
    rng = np.random.default_rng(1)
    x = rng.standard_normal(200)
    offset = rng.standard_normal(200)
    y = 2.0 + 3.0 * x + offset
    fit = fit_linear(y, pd.DataFrame({"x": x}), offset=offset)
    assert fit.params["x"] == pytest.approx(3.0)
    assert fit.params["const"] == pytest.approx(2.0)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

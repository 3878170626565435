"""
Tests for local independence, reliability, validity and regression validation checks.
"""
import numpy as np
import pandas as pd
import pytest

from checks.local_independence import noise_level, residual_pca_check, residuals, yen_q3
from checks.regression_validation import parameter_rows, regression_validation, summarize_scores
from checks.reliability import (
    compare_halves,
    concurrent_validity,
    split_half,
    split_half_correlation,
)
from data.errors import StructuralError
from data.generator import simulate_irt
from data.schema import CourseResponseMatrix, GradeScaleSpec, SimulationConfig
from models.agm import fit_agm
from models.heuristics import centering_estimates
from models.irt import fit_irt


SCALE = GradeScaleSpec(lowest_grade=-100)


def _matrix(values, terms=None):
    values = np.asarray(values, dtype=float)
    index = [f"S{i + 1:04d}" for i in range(values.shape[0])]
    columns = [f"C{j + 1:02d}" for j in range(values.shape[1])]
    frame = pd.DataFrame(values, index=index, columns=columns)
    term_frame = None if terms is None else pd.DataFrame(np.asarray(terms, dtype=float), index=index, columns=columns)
    return CourseResponseMatrix(grades=frame, scale=SCALE, terms=term_frame)


def _additive(n_students, n_courses, seed, noise=0.5):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(n_students)
    delta = rng.standard_normal(n_courses)
    return theta[:, None] + delta[None, :] + noise * rng.standard_normal((n_students, n_courses))


def _two_block(n_students, n_courses, seed, noise=0.5):
    """First half of the courses load on one trait, second half on another."""
    rng = np.random.default_rng(seed)
    traits = rng.standard_normal((n_students, 2))
    delta = rng.standard_normal(n_courses)
    block = (np.arange(n_courses) >= n_courses // 2).astype(int)
    return traits[:, block] + delta[None, :] + noise * rng.standard_normal((n_students, n_courses))


@pytest.fixture(scope="module")
def rasch():
    data = simulate_irt(SimulationConfig(n_students=1000, n_courses=10, seed=17))
    return data.matrix, fit_irt(data.matrix)


@pytest.fixture(scope="module")
def additive():
    m = _matrix(_additive(500, 10, seed=4))
    return m, fit_agm(m)


# ---------------------------------------------------------------- Q3

def test_noise_level():
    """Test the white-noise share of the largest eigenvalue."""
    assert noise_level(1000, 10) == pytest.approx(1.21 / 10)


def test_residuals_are_grade_minus_prediction(additive):
    """Test that residuals subtract the model prediction."""
    m, model = additive
    frame = residuals(model, m)
    assert np.allclose(frame.to_numpy(), m.values - model.predict())


def test_q3_no_violations_on_fitting_model(rasch):
    """Test that Rasch data fitted by a Rasch model shows no dependent pairs."""
    m, model = rasch
    report = yen_q3(model, m)
    assert report.violations == []
    assert report.n_pairs == 45
    assert report.undefined_pairs == 0
    assert report.mean_q3 < 0.05
    assert np.isnan(report.q3.loc["C01", "C01"])


def test_q3_flags_duplicated_course():
    """Test that two courses with identical outcomes violate local independence."""
    data = simulate_irt(SimulationConfig(n_students=1000, n_courses=10, seed=18))
    grades = data.matrix.grades.copy()
    grades["C02"] = grades["C01"]
    m = data.matrix.replace(grades=grades)
    report = yen_q3(fit_irt(m), m)

    pairs = {(v.first, v.second) for v in report.violations}
    assert ("C01", "C02") in pairs
    assert report.violation_frame().columns.tolist() == ["first", "second", "q3", "sign"]


def test_q3_sparse_pairs_undefined():
    """Test that pairs with too few joint students stay undefined."""
    rng = np.random.default_rng(2)
    values = rng.normal(size=(12, 3))
    values[5:, 2] = np.nan
    m = _matrix(values)
    report = yen_q3(centering_estimates(m), m)
    assert report.n_pairs == 3
    assert report.undefined_pairs == 2
    assert np.isnan(report.q3.loc["C01", "C03"])


def test_q3_centering_misses_second_dimension():
    """Test that centering leaves many dependent pairs on 2-dim data while a 2-dim AGM does not."""
    cfg = SimulationConfig(n_students=1000, n_courses=20, n_dim=2, grade_kind="continuous", seed=23)
    for replicate in range(2):
        m = simulate_irt(cfg, replicate=replicate).matrix
        centering = yen_q3(centering_estimates(m), m)
        agm = yen_q3(fit_agm(m, n_dim=2), m)
        assert centering.n_pairs == 190
        assert len(centering.violations) >= 60, f"only {len(centering.violations)} centering violations"
        assert len(agm.violations) < len(centering.violations) / 3


# ---------------------------------------------------------------- residual PCA

def test_residual_pca_quiet_for_fitting_model(additive):
    """Test that additive data leaves only noise in AGM residuals."""
    m, model = additive
    report = residual_pca_check(model, m)
    assert not report.flagged
    assert len(report.residual_pve) == 10
    assert report.noise_level == pytest.approx(noise_level(500, 10))


def test_residual_pca_flags_missing_dimension():
    """Test that a two-trait structure shows up in one-dimensional residuals."""
    m = _matrix(_two_block(1000, 10, seed=6))
    report = residual_pca_check(fit_agm(m), m)
    assert report.flagged
    assert report.residual_pve[0] > report.data_pve[1]


def test_residual_pca_needs_complete_matrix():
    """Test that residual PCA refuses missing grades."""
    values = _additive(50, 4, seed=1)
    values[0, 0] = np.nan
    m = _matrix(values)
    with pytest.raises(ValueError):
        residual_pca_check(fit_agm(m), m)


# ---------------------------------------------------------------- split-half

def test_split_half_random_partition():
    """Test that each student's grades are split with the extra grade in half 1."""
    values = _additive(4, 5, seed=3)
    values[3, 1:] = np.nan
    m = _matrix(values)
    first, second, notes = split_half(m, seed=1)

    assert first.student_ids == ["S0001", "S0002", "S0003"]
    assert (first.grades.notna().sum(axis=1) == 3).all()
    assert (second.grades.notna().sum(axis=1) == 2).all()
    assert "1 students with fewer than two grades" in notes[0]

    joined = first.grades.combine_first(second.grades)
    pd.testing.assert_frame_equal(joined[m.course_ids], m.grades.iloc[:3], check_names=False)


def test_split_half_time_puts_early_terms_first():
    """Test that time mode assigns the earliest grades to half 1."""
    values = _additive(2, 4, seed=5)
    terms = [[3, 0, 2, 1], [0, 1, 2, 3]]
    first, second, _ = split_half(_matrix(values, terms), mode="time")
    assert set(first.grades.columns[first.grades.loc["S0001"].notna()]) == {"C02", "C04"}
    assert set(first.grades.columns[first.grades.loc["S0002"].notna()]) == {"C01", "C02"}
    assert set(second.grades.columns[second.grades.loc["S0002"].notna()]) == {"C03", "C04"}


def test_split_half_time_needs_terms():
    """Test that time mode requires a term table."""
    with pytest.raises(StructuralError):
        split_half(_matrix(_additive(3, 3, seed=0)), mode="time")


def test_split_half_correlation_reliable():
    """Test that additive data gives reliable halves."""
    m = _matrix(_additive(500, 10, seed=8))
    report = split_half_correlation(m, "agm", seed=2)
    assert report.course_corr > 0.9
    assert report.student_corr > 0.8
    assert not report.flagged
    assert report.n_courses == 10
    assert report.n_students == 500


def test_compare_halves_identical_models(additive):
    """Test that a model compared with itself correlates perfectly."""
    _, model = additive
    student_r, course_r = compare_halves(model, model)
    assert student_r == pytest.approx(1.0)
    assert course_r == pytest.approx(1.0)


# ---------------------------------------------------------------- validity

def test_concurrent_validity(additive):
    """Test that difficulty runs against course means and traits with GPAs."""
    m, model = additive
    report = concurrent_validity(model, m)
    assert report.course_r > 0.99
    assert report.course_sign == -1
    assert report.student_r > 0.9
    assert report.student_sign == 1
    assert not report.flagged


# ---------------------------------------------------------------- regression validation

def test_parameter_rows(additive):
    """Test one row per observed cell."""
    m, model = additive
    rows = parameter_rows(model, m)
    assert len(rows) == m.n_observed
    assert list(rows.columns) == ["theta_1", "difficulty", "grade"]


def test_regression_validation_scores(additive):
    """Test held-out fit quality on additive data."""
    m, model = additive
    scores = regression_validation(model, m, repeats=3, seed=1)
    assert [s.repeat for s in scores] == [0, 1, 2]
    assert all(s.n_test == 1500 and s.n_train == 3500 for s in scores)
    assert all(s.r2 > 0.7 for s in scores)
    assert all(0.4 < s.rmse < 0.6 for s in scores)

    summary = summarize_scores(scores)
    assert list(summary.index) == ["rmse_mean", "rmse_std", "r2_mean", "r2_std"]
    assert summary["rmse_mean"] == pytest.approx(np.mean([s.rmse for s in scores]))


def test_regression_validation_reproducible(additive):
    """Test that splits depend only on the seed."""
    m, model = additive
    a = regression_validation(model, m, repeats=2, seed=5)
    b = regression_validation(model, m, repeats=2, seed=5)
    assert [s.rmse for s in a] == [s.rmse for s in b]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

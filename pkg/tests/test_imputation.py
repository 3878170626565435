"""
Tests for mean, median and iterative PCA imputation.
"""
import numpy as np
import pandas as pd
import pytest

from analysis import imputation
from analysis.correlation import correlation_matrix
from analysis.dimensionality import pca_pve
from data.errors import DegenerateDataError
from data.generator import ampute_mar, simulate_irt
from data.schema import CourseResponseMatrix, GradeScaleSpec, SimulationConfig


@pytest.fixture
def small():
    """4 x 2 continuous matrix with two missing grades."""
    frame = pd.DataFrame(
        {"C01": [1.0, 2.0, np.nan, 9.0], "C02": [4.0, np.nan, 6.0, 8.0]},
        index=["S1", "S2", "S3", "S4"],
    )
    return CourseResponseMatrix(grades=frame, scale=GradeScaleSpec(lowest_grade=0))


@pytest.fixture(scope="module")
def continuous():
    """1-dim continuous simulation, 1000 x 10."""
    return simulate_irt(SimulationConfig(n_students=1000, n_courses=10, grade_kind="continuous", seed=21))


def _first_pve(m):
    return pca_pve(correlation_matrix(m)).pve[0]


def test_mean_impute(small):
    """Test that missing cells get the course mean and are marked imputed."""
    filled = imputation.mean_impute(small)
    assert filled.grades.loc["S3", "C01"] == pytest.approx(4.0)
    assert filled.grades.loc["S2", "C02"] == pytest.approx(6.0)
    assert filled.is_complete
    assert filled.imputed.loc["S3", "C01"]
    assert not filled.imputed.loc["S1", "C01"]
    assert filled.grades.loc["S4", "C01"] == 9.0, "Observed grades never change"


def test_median_impute(small):
    """Test that missing cells get the course median."""
    filled = imputation.median_impute(small)
    assert filled.grades.loc["S3", "C01"] == pytest.approx(2.0)
    assert filled.grades.loc["S2", "C02"] == pytest.approx(6.0)


def test_complete_matrix_unchanged(continuous):
    """Test that complete matrices pass through every imputer."""
    m = continuous.matrix
    assert imputation.mean_impute(m) is m
    assert imputation.mipca_impute(m).method == "none"
    assert imputation.impute(m, "MAR").method == "none"


def test_observed_values_hide_imputed_cells(small):
    """Test that models see imputed cells as missing again."""
    filled = imputation.mean_impute(small)
    assert np.isnan(filled.observed_values()[2, 0])
    assert filled.imputed_mask().sum() == 2


def test_mipca_keeps_observed_and_converges(continuous):
    """Test that MIPCA fills only missing cells and converges."""
    amputed = ampute_mar(continuous.matrix, tau=0.3, alpha=0.3, seed=3).matrix
    result = imputation.mipca_impute(amputed, seed=3)

    before, after = amputed.values, result.matrix.values
    observed = ~np.isnan(before)
    assert result.matrix.is_complete
    assert np.array_equal(before[observed], after[observed])
    assert np.array_equal(result.matrix.imputed_mask(), ~observed)
    assert result.converged
    assert result.n_components >= 1
    assert len(result.changes) == result.n_iter


def test_mipca_preserves_structure(continuous):
    """Test that MIPCA PVE stays close to the complete-data PVE."""
    complete = _first_pve(continuous.matrix)
    amputed = ampute_mar(continuous.matrix, tau=0.3, alpha=0.3, seed=4).matrix
    mipca = _first_pve(imputation.mipca_impute(amputed, seed=4).matrix)
    assert abs(mipca - complete) < 0.05


def test_mipca_beats_mean_at_high_missingness(continuous):
    """Test that mean imputation distorts PVE more than MIPCA when many grades are missing."""
    complete = _first_pve(continuous.matrix)
    amputed = ampute_mar(continuous.matrix, tau=0.3, alpha=0.9, seed=5)
    mipca = _first_pve(imputation.mipca_impute(amputed.matrix, seed=5).matrix)
    mean = _first_pve(imputation.mean_impute(amputed.matrix))
    assert abs(mean - complete) > abs(mipca - complete)
    assert mean < complete, "Mean imputation attenuates correlations"


def test_mipca_point_fill_is_deterministic(continuous):
    """Test that the noise-free fill does not depend on the seed."""
    amputed = ampute_mar(continuous.matrix, tau=0.3, alpha=0.3, seed=6).matrix
    a = imputation.mipca_impute(amputed, add_noise=False, seed=1).matrix.values
    b = imputation.mipca_impute(amputed, add_noise=False, seed=2).matrix.values
    assert np.allclose(a, b)


def test_mipca_binary_fill():
    """Test that binary MIPCA fills 0/1 values and reports pass probabilities."""
    data = simulate_irt(SimulationConfig(n_students=600, n_courses=8, seed=9))
    amputed = ampute_mar(data.matrix, tau=0.3, alpha=0.3, seed=9).matrix
    result = imputation.mipca_impute(amputed, seed=9, max_iter=30)

    values = result.matrix.values
    assert set(np.unique(values)) <= {0.0, 1.0}
    probs = result.probabilities.to_numpy()
    assert np.all((probs >= 0) & (probs <= 1))


def test_mipca_rejects_bad_rank(continuous):
    """Test that the PCA rank must be below the number of courses."""
    amputed = ampute_mar(continuous.matrix, tau=0.3, alpha=0.3, seed=7).matrix
    with pytest.raises(ValueError):
        imputation.mipca_impute(amputed, n_components=10)


def test_mipca_constant_course():
    """Test that a constant course cannot be imputed."""
    frame = pd.DataFrame(
        {"A": [1.0, 1.0, np.nan, 1.0], "B": [1.0, 2.0, 3.0, np.nan], "C": [3.0, 1.0, 2.0, 5.0]},
        index=["S1", "S2", "S3", "S4"],
    )
    m = CourseResponseMatrix(grades=frame, scale=GradeScaleSpec(lowest_grade=0))
    with pytest.raises(DegenerateDataError):
        imputation.mipca_impute(m, n_components=1)


def test_impute_dispatch(continuous):
    """Test mean imputation under MCAR and MIPCA otherwise."""
    amputed = ampute_mar(continuous.matrix, tau=0.3, alpha=0.3, seed=8).matrix
    assert imputation.impute(amputed, "MCAR").method == "mean"
    assert imputation.impute(amputed, "MAR", seed=1).method == "mipca"
    assert imputation.impute(amputed, "MNAR_SUSPECT", seed=1).method == "mipca"


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

"""
Tests for per-offering difficulty and bootstrap intervals.
"""
import numpy as np
import pandas as pd
import pytest

from data.errors import StructuralError
from data.generator import simulate_drift
from data.schema import CourseResponseMatrix, DriftConfig, GradeScaleSpec, SimulationConfig
from models import time_resolved


@pytest.fixture
def termed():
    """6 students in one course over three terms, plus a second course in one term."""
    index = [f"S{i:04d}" for i in range(1, 7)]
    grades = pd.DataFrame(
        {"C01": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0], "C02": [2.0, 2.0, 3.0, 3.0, 4.0, 4.0]},
        index=index,
    )
    terms = pd.DataFrame(
        {"C01": [0.0, 0.0, 0.0, 1.0, 1.0, 2.0], "C02": [1.0] * 6},
        index=index,
    )
    return CourseResponseMatrix(grades=grades, scale=GradeScaleSpec(lowest_grade=0), terms=terms)


@pytest.fixture(scope="module")
def drift():
    cfg = SimulationConfig(n_students=1500, n_courses=4, seed=11)
    return simulate_drift(cfg, DriftConfig(scenario="course_constant_drift", rate=0.5, n_terms=3))


def test_offering_id_round_trip():
    """Test offering names and their parsing."""
    name = time_resolved.offering_id("C01", 3)
    assert name == "C01@3"
    assert time_resolved._split_offering(name) == ("C01", 3)
    assert time_resolved._split_offering("C01") == ("C01", None)


def test_expand_offerings(termed):
    """Test that large offerings get columns and small ones pool at course level."""
    expanded, warnings = time_resolved.expand_offerings(termed, min_size=2)
    assert set(expanded.course_ids) == {"C01@0", "C01@1", "C01", "C02@1"}
    assert expanded.grades["C01@0"].notna().sum() == 3
    assert expanded.grades.loc["S0006", "C01"] == 6.0
    assert expanded.n_observed == termed.n_observed
    assert len(warnings) == 1 and "C01" in warnings[0]


def test_expand_offerings_needs_terms():
    """Test that a matrix without terms cannot be split."""
    grades = pd.DataFrame({"C01": [1.0, 2.0]}, index=["S1", "S2"])
    m = CourseResponseMatrix(grades=grades, scale=GradeScaleSpec(lowest_grade=0))
    with pytest.raises(StructuralError):
        time_resolved.expand_offerings(m)


def test_bootstrap_reproducible(termed):
    """Test that bootstrap draws depend only on the seed."""
    expanded, _ = time_resolved.expand_offerings(termed, min_size=2)
    a = time_resolved.bootstrap_difficulty(expanded, "centering", reps=4, seed=3)
    b = time_resolved.bootstrap_difficulty(expanded, "centering", reps=4, seed=3)
    assert a.shape == (4, 4)
    pd.testing.assert_frame_equal(a, b)


def test_fit_time_resolved_offerings(drift):
    """Test one row per offering with raw bootstrap percentile intervals."""
    estimates, warnings = time_resolved.fit_time_resolved(drift.matrix, "irt", bootstrap_reps=5, seed=1)
    frame = estimates.to_frame().set_index("offering_id")

    assert len(frame) == 12
    assert set(frame["term"]) == {0, 1, 2}
    assert (frame["ci_lower"] <= frame["ci_upper"]).all()

    expanded, _ = time_resolved.expand_offerings(drift.matrix)
    draws = time_resolved.bootstrap_difficulty(expanded, "irt", reps=5, seed=1)
    for offering, row in frame.iterrows():
        column = draws[offering].dropna().to_numpy()
        assert row["ci_lower"] == pytest.approx(np.percentile(column, 2.5))
        assert row["ci_upper"] == pytest.approx(np.percentile(column, 97.5))
        outside = not row["ci_lower"] <= row["difficulty"] <= row["ci_upper"]
        assert outside == any(w.startswith(f"{offering}:") and "outside" in w for w in warnings)
    assert (frame["n_students"] >= 75).all()
    assert (frame["ci_level"] == 0.95).all()


def test_fit_time_resolved_tracks_drift(drift):
    """Test that per-offering difficulties follow the drifting truth."""
    estimates, _ = time_resolved.fit_time_resolved(drift.matrix, "irt", bootstrap_reps=2, seed=1)
    fitted = estimates.as_series()
    truth = pd.Series({
        time_resolved.offering_id(f"C{c + 1:02d}", t): drift.delta_by_term[c, t]
        for c in range(4) for t in range(3)
    })
    assert np.corrcoef(fitted[truth.index], truth)[0, 1] > 0.85


def test_fit_time_resolved_falls_back_to_courses(termed):
    """Test the warning and per-course rows when no offering is large enough."""
    estimates, warnings = time_resolved.fit_time_resolved(termed, "centering", bootstrap_reps=3, min_size=50)
    frame = estimates.to_frame()
    assert list(frame["course_id"]) == ["C01", "C02"]
    assert frame["term"].isna().all()
    assert any("No offering reaches 50" in w for w in warnings)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

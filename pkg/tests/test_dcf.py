"""
Tests for differential course functioning and the BH correction.
"""
import numpy as np
import pandas as pd
import pytest

from data.errors import UnknownIdentifierError
from data.generator import simulate_dcf
from data.schema import CourseResponseMatrix, GradeScaleSpec, GroupAssignment, SimulationConfig
from insights import dcf
from models.agm import fit_agm
from models.irt import fit_irt


@pytest.fixture(scope="module")
def planted():
    """2000 x 10 binary data with a group effect of 1.0 logit in C01."""
    data, groups = simulate_dcf(SimulationConfig(n_students=2000, n_courses=10, seed=23), courses=[0], effect=1.0)
    return data.matrix, fit_irt(data.matrix), groups


@pytest.fixture(scope="module")
def null():
    data, groups = simulate_dcf(SimulationConfig(n_students=2000, n_courses=10, seed=24), courses=[], effect=0.0)
    return data.matrix, fit_irt(data.matrix), groups


def test_bh_correct_example():
    """Test BH adjusted p-values and rejections on a small example."""
    adjusted, reject = dcf.bh_correct([0.01, 0.03, 0.04, 0.20])
    assert reject.tolist() == [True, False, False, False]
    assert adjusted == pytest.approx([0.04, 0.16 / 3, 0.16 / 3, 0.20])


def test_bh_correct_keeps_input_order():
    """Test that adjusted values follow the input order."""
    adjusted, reject = dcf.bh_correct([0.2, 0.001])
    assert adjusted == pytest.approx([0.2, 0.002])
    assert reject.tolist() == [False, True]


def test_bh_correct_edge_cases():
    """Test empty input and out-of-range p-values."""
    adjusted, reject = dcf.bh_correct([])
    assert adjusted.size == 0 and reject.size == 0
    with pytest.raises(ValueError):
        dcf.bh_correct([0.5, 1.5])


@pytest.mark.parametrize("trait_p,flag,expected", [
    (0.001, True, "trait_and_dcf"),
    (0.001, False, "trait_only"),
    (0.5, True, "dcf_only"),
    (0.5, False, "null"),
    (None, False, "null"),
])
def test_classify_case(trait_p, flag, expected):
    """Test the decision-tree labels."""
    assert dcf.classify_case(trait_p, flag) == expected


def test_planted_effect_detected(planted):
    """Test that the planted course is significant with a positive effect."""
    m, model, groups = planted
    results = dcf.dcf_all(m, model, groups)
    by_course = {r.course_id: r for r in results}

    first = by_course["C01"]
    assert first.significant
    assert first.p_bh < 0.01
    assert first.beta1 > 0.5
    assert first.regression == "logistic"
    assert first.beta2 == [pytest.approx(1.0)]
    assert results[0].course_id == "C01", "Largest effect sorts first"


def test_likelihood_ratio_agrees(planted):
    """Test that the LR test also rejects for the planted course."""
    m, model, groups = planted
    result = dcf.dcf_course(m, model, "C01", groups, test="lr")
    assert result.test == "lr"
    assert result.p_raw < 0.01


def test_null_data_mostly_clean(null):
    """Test that data without group effects yields at most one BH rejection."""
    m, model, groups = null
    results = dcf.dcf_all(m, model, groups)
    assert sum(r.significant for r in results) <= 1
    assert all(r.p_bh >= r.p_raw for r in results)


def test_swapped_groups_flip_sign(planted):
    """Test that relabeling the groups flips the effect."""
    m, model, groups = planted
    a = dcf.dcf_course(m, model, "C01", groups)
    b = dcf.dcf_course(m, model, "C01", groups.swapped())
    assert b.beta1 == pytest.approx(-a.beta1, abs=1e-6)


def test_small_group_skipped(planted):
    """Test that courses with too few students in a group are skipped with a note."""
    m, model, _ = planted
    ids = m.student_ids
    groups = GroupAssignment(groups={s: (-1 if i < 5 else 1) for i, s in enumerate(ids)})
    results = dcf.dcf_all(m, model, groups)
    assert all(r.skipped for r in results)
    table = dcf.dcf_table(results)
    assert table["note"].str.contains("fewer than 10").all()
    assert table["DCF"].isna().all()


def test_unknown_course(planted):
    """Test that an unknown course is reported."""
    m, model, groups = planted
    with pytest.raises(UnknownIdentifierError):
        dcf.dcf_course(m, model, "C99", groups)


def test_unknown_test_name(planted):
    """Test that only wald and lr tests are accepted."""
    m, model, groups = planted
    with pytest.raises(ValueError):
        dcf.dcf_course(m, model, "C01", groups, test="score")


def test_separated_course_uses_ridge(planted):
    """Test that a course failed by all of one group gets a stabilized fit."""
    m, model, groups = planted
    grades = m.grades.copy()
    minus = [s for s, g in groups.groups.items() if g == -1]
    grades.loc[minus, "C02"] = 0.0
    changed = m.replace(grades=grades)

    result = dcf.dcf_course(changed, model, "C02", groups)
    assert result.separated
    assert "ridge" in result.note
    assert np.isfinite(result.beta1) and result.beta1 > 0


def test_linear_dcf_for_continuous_grades():
    """Test the linear second stage on additive grades with a planted shift."""
    rng = np.random.default_rng(3)
    S, C = 1000, 8
    theta = rng.standard_normal(S)
    delta = rng.standard_normal(C)
    codes = rng.choice([-1, 1], size=S)
    values = theta[:, None] + delta[None, :] + 0.5 * rng.standard_normal((S, C))
    values[:, 0] += 0.8 * codes

    index = [f"S{i + 1:04d}" for i in range(S)]
    frame = pd.DataFrame(values, index=index, columns=[f"C{j + 1:02d}" for j in range(C)])
    m = CourseResponseMatrix(grades=frame, scale=GradeScaleSpec(lowest_grade=-100))
    groups = GroupAssignment(groups=dict(zip(index, codes.tolist())))

    result = dcf.dcf_course(m, fit_agm(m), "C01", groups)
    assert result.regression == "linear"
    assert result.beta1 == pytest.approx(0.8, abs=0.2)
    assert result.p_raw < 0.001


def test_dcf_table_columns(planted):
    """Test the DCF table layout."""
    m, model, groups = planted
    table = dcf.dcf_table(dcf.dcf_all(m, model, groups))
    assert list(table.columns) == [
        "course", "n_group_minus", "n_group_plus", "DCF", "p_raw", "p_bh", "significant", "case", "note",
    ]
    assert len(table) == 10
    assert (table["n_group_minus"] + table["n_group_plus"] == 2000).all()


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

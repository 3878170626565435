"""
Missing-data diagnostics for grade matrices.

Little's MCAR test, per-course logistic regressions predicting
missingness from the student's other grades (MAR check), and the
combined MCAR / MAR / MNAR-suspect verdict.
"""
import logging
from typing import Dict, List, Literal, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.stats import chi2

import config
from analysis.regression import fit_logistic
from data.errors import DegenerateDataError, NotApplicableError
from data.schema import CourseResponseMatrix

logger = logging.getLogger(__name__)

MAR_FEATURES = ("GPA", "STD", "MIN", "MAX")


class MissingnessPattern(BaseModel):
    observed_set: Tuple[int, ...]
    missing_set: Tuple[int, ...]
    count: int = Field(..., ge=1)


class LittleResult(BaseModel):
    t2: float = Field(..., ge=0)
    dof: int
    p_value: float = Field(..., ge=0, le=1)
    n_patterns: int
    skipped_patterns: int = 0
    shrinkage: float = 0.0


class MarCourseResult(BaseModel):
    """Logistic regression of a course's missing indicator on the other grades."""
    course_id: str
    tested: bool = True
    n_rows: int = 0
    coefficients: Dict[str, float] = Field(default_factory=dict)
    p_values: Dict[str, float] = Field(default_factory=dict)
    pseudo_r2: float = float("nan")
    flagged: bool = False
    note: str = ""


class MissingnessVerdict(BaseModel):
    mechanism: Literal["MCAR", "MAR", "MNAR_SUSPECT"]
    little_p: float
    caution_courses: List[str]
    testable_courses: int
    unflagged_courses: int


class ObservedRatioReport(BaseModel):
    overall: float
    per_course: Dict[str, float]
    students_per_course: Dict[str, int]


def missingness_patterns(m: CourseResponseMatrix) -> List[MissingnessPattern]:
    """Distinct observed/missing course sets with their student counts."""
    observed = ~np.isnan(m.observed_values())
    patterns, counts = np.unique(observed, axis=0, return_counts=True)
    result = []
    for pattern, count in zip(patterns, counts):
        result.append(MissingnessPattern(
            observed_set=tuple(int(j) for j in np.flatnonzero(pattern)),
            missing_set=tuple(int(j) for j in np.flatnonzero(~pattern)),
            count=int(count),
        ))
    return result


def _positive_definite(cov: np.ndarray, start: float) -> Tuple[np.ndarray, float]:
    """Shrink ``cov`` toward its diagonal until a Cholesky factor exists."""
    try:
        np.linalg.cholesky(cov)
        return cov, 0.0
    except np.linalg.LinAlgError:
        pass
    diagonal = np.diag(np.diag(cov))
    lam = start
    while True:
        lam = min(lam, 1.0)
        shrunk = (1.0 - lam) * cov + lam * diagonal
        try:
            np.linalg.cholesky(shrunk)
            logger.info("Covariance shrunk toward its diagonal (lambda=%g)", lam)
            return shrunk, lam
        except np.linalg.LinAlgError:
            if lam >= 1.0:
                raise DegenerateDataError("Covariance is not positive definite even on its diagonal")
            lam *= 2.0


def little_mcar_test(
    m: CourseResponseMatrix, shrinkage_start: float = config.LITTLE_SHRINKAGE_START
) -> LittleResult:
    """
    Little's chi-square test of missing completely at random.

    Means and covariances are pairwise-complete estimates; the covariance
    is shrunk toward its diagonal when it is not positive definite. A
    small p-value is evidence against MCAR.

    Returns:
        LittleResult with T^2, degrees of freedom and p-value
    """
    X = m.observed_values()
    observed = ~np.isnan(X)
    if observed.all():
        raise NotApplicableError("No missing grades; Little's test does not apply")
    patterns, inverse, counts = np.unique(
        observed, axis=0, return_inverse=True, return_counts=True
    )
    inverse = np.asarray(inverse).ravel()
    if len(patterns) < 2:
        raise NotApplicableError("Little's test needs at least two missingness patterns")

    mu = np.nanmean(X, axis=0)
    cov = pd.DataFrame(X).cov(min_periods=2).to_numpy()
    variances = np.diag(cov)
    bad = [m.course_ids[j] for j in np.flatnonzero(~np.isfinite(variances) | (variances <= 0))]
    if bad:
        raise DegenerateDataError(f"Courses without grade variance: {bad}")
    cov = np.nan_to_num(cov, nan=0.0)
    cov, lam = _positive_definite(cov, shrinkage_start)

    t2 = 0.0
    used_observed = 0
    skipped = 0
    for index, pattern in enumerate(patterns):
        cols = np.flatnonzero(pattern)
        rows = inverse == index
        diff = X[np.ix_(rows, cols)].mean(axis=0) - mu[cols]
        try:
            factor = cho_factor(cov[np.ix_(cols, cols)])
        except LinAlgError:
            logger.warning("Skipping singular missingness pattern with %d students", counts[index])
            skipped += 1
            continue
        t2 += counts[index] * float(diff @ cho_solve(factor, diff))
        used_observed += cols.size

    dof = used_observed - m.n_courses
    if dof <= 0:
        raise NotApplicableError(f"Little's test has no degrees of freedom (dof={dof})")
    p_value = float(chi2.sf(t2, dof))
    logger.info("Little's test: T2=%.3f, dof=%d, p=%.4f", t2, dof, p_value)
    return LittleResult(
        t2=max(t2, 0.0), dof=dof, p_value=p_value,
        n_patterns=len(patterns), skipped_patterns=skipped, shrinkage=lam,
    )


def _other_grade_features(X: np.ndarray, course: int) -> Tuple[pd.DataFrame, np.ndarray]:
    others = np.delete(X, course, axis=1)
    counts = (~np.isnan(others)).sum(axis=1)
    rows = counts >= 2
    subset = others[rows]
    features = pd.DataFrame({
        "GPA": np.nanmean(subset, axis=1),
        "STD": np.nanstd(subset, axis=1, ddof=1),
        "MIN": np.nanmin(subset, axis=1),
        "MAX": np.nanmax(subset, axis=1),
    })
    return features, rows


def mar_regression_test(
    m: CourseResponseMatrix, cutoff: float = config.MAR_PSEUDO_R2_CUTOFF
) -> List[MarCourseResult]:
    """
    Predict each course's missing indicator from the student's other grades.

    Features are GPA, standard deviation, minimum and maximum over the
    student's other observed grades (students with fewer than two other
    grades are left out). Features are standardized, so coefficients are
    per standard deviation. A course is flagged when McFadden's
    pseudo R-squared is below ``cutoff``.
    """
    if m.n_courses < 2:
        raise ValueError("MAR regressions need at least two courses")
    X = m.observed_values()
    results = []
    for j, course in enumerate(m.course_ids):
        missing = np.isnan(X[:, j])
        if missing.all() or not missing.any():
            results.append(MarCourseResult(
                course_id=course, tested=False,
                note="no missing grades" if not missing.any() else "no observed grades",
            ))
            continue

        features, rows = _other_grade_features(X, j)
        y = missing[rows].astype(float)
        if y.size == 0 or np.unique(y).size < 2:
            results.append(MarCourseResult(
                course_id=course, tested=False, n_rows=int(y.size),
                note="outcome constant after excluding students with fewer than two other grades",
            ))
            continue

        spread = features.std(ddof=0)
        usable = [f for f in MAR_FEATURES if spread[f] > 0]
        dropped = [f for f in MAR_FEATURES if f not in usable]
        standardized = (features[usable] - features[usable].mean()) / spread[usable]
        fit = fit_logistic(y, standardized)

        pseudo_r2 = fit.pseudo_r2
        result = MarCourseResult(
            course_id=course,
            n_rows=int(y.size),
            coefficients={f: fit.params.get(f, float("nan")) for f in MAR_FEATURES},
            p_values={f: fit.pvalues.get(f, float("nan")) for f in MAR_FEATURES},
            pseudo_r2=pseudo_r2,
            flagged=pseudo_r2 < cutoff,
            note=("constant features dropped: " + ", ".join(dropped)) if dropped else
                 ("separation; ridge fit" if fit.separated else ""),
        )
        results.append(result)
    flagged = [r.course_id for r in results if r.flagged]
    if flagged:
        logger.info("Missingness poorly explained (pseudo R2 < %s) for: %s", cutoff, flagged)
    return results


def classify_missingness(
    little: LittleResult,
    mar: List[MarCourseResult],
    alpha: float = config.SIGNIFICANCE_LEVEL,
) -> MissingnessVerdict:
    """
    Combine Little's test and the MAR regressions into a verdict.

    MCAR when Little's p-value is at least ``alpha``; otherwise MAR when
    more than half of the testable courses are unflagged, else
    MNAR_SUSPECT. Flagged courses are always listed for caution.
    """
    testable = [r for r in mar if r.tested]
    unflagged = sum(1 for r in testable if not r.flagged)
    caution = [r.course_id for r in testable if r.flagged]

    if little.p_value >= alpha:
        mechanism = "MCAR"
    elif testable and unflagged > len(testable) / 2:
        mechanism = "MAR"
    else:
        mechanism = "MNAR_SUSPECT"
    return MissingnessVerdict(
        mechanism=mechanism,
        little_p=little.p_value,
        caution_courses=caution,
        testable_courses=len(testable),
        unflagged_courses=unflagged,
    )


def observed_ratio_report(m: CourseResponseMatrix) -> ObservedRatioReport:
    """Observed-grade share overall and per course, plus students per course."""
    observed = ~np.isnan(m.observed_values())
    per_course = observed.mean(axis=0)
    counts = observed.sum(axis=0)
    return ObservedRatioReport(
        overall=float(observed.mean()),
        per_course=dict(zip(m.course_ids, per_course.astype(float).tolist())),
        students_per_course=dict(zip(m.course_ids, counts.astype(int).tolist())),
    )


def mar_table(results: List[MarCourseResult]) -> pd.DataFrame:
    """Table with one row per course: feature p-values, pseudo R2 and flag."""
    rows = []
    for r in results:
        row = {"course": r.course_id}
        row.update({f: r.p_values.get(f, float("nan")) for f in MAR_FEATURES})
        row.update({"pseudo_r2": r.pseudo_r2, "flagged": r.flagged, "note": r.note})
        rows.append(row)
    return pd.DataFrame(rows, columns=["course", *MAR_FEATURES, "pseudo_r2", "flagged", "note"])

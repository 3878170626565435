"""
Time-resolved difficulty: one parameter per course offering (course, term)
with student-bootstrap percentile intervals.
"""
import logging
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

import config
from data.errors import CourseDataError, StructuralError
from data.schema import CourseResponseMatrix
from models.schema import DifficultyEstimates, DifficultyRow
from models.selection import fit_model, unidim_difficulty

logger = logging.getLogger(__name__)

OFFERING_SEPARATOR = "@"


def offering_id(course_id: str, term: int) -> str:
    return f"{course_id}{OFFERING_SEPARATOR}{term}"


def expand_offerings(
    m: CourseResponseMatrix, min_size: int = config.MIN_OFFERING_SIZE
) -> Tuple[CourseResponseMatrix, List[str]]:
    """
    Split every course into one column per offering with at least
    ``min_size`` students.

    Grades from smaller offerings, or without a term, stay in a column
    named after the course.

    Returns:
        (expanded matrix, warnings)
    """
    if not m.has_terms:
        raise StructuralError("Time-resolved fitting needs a term table")
    grades = m.grades
    terms = m.terms
    columns = {}
    term_columns = {}
    warnings: List[str] = []

    for course in grades.columns:
        observed = grades[course].notna()
        course_terms = terms[course].where(observed)
        sizes = course_terms.value_counts()
        large = sorted(int(t) for t, n in sizes.items() if n >= min_size)
        small = sorted(int(t) for t, n in sizes.items() if n < min_size)
        rest = observed.copy()
        for term in large:
            mask = course_terms == term
            name = offering_id(str(course), term)
            columns[name] = grades[course].where(mask)
            term_columns[name] = terms[course].where(mask)
            rest &= ~mask
        if small and large:
            warnings.append(f"{course}: offerings {small} below {min_size} students pooled at course level")
        if rest.any():
            columns[str(course)] = grades[course].where(rest)
            term_columns[str(course)] = terms[course].where(rest)

    for message in warnings:
        logger.warning(message)
    expanded = pd.DataFrame(columns, index=grades.index)
    expanded_terms = pd.DataFrame(term_columns, index=grades.index)
    matrix = CourseResponseMatrix(
        grades=expanded, scale=m.scale, terms=expanded_terms,
        degenerate_courses=tuple(c for c in expanded.columns if c in set(m.degenerate_courses)),
    )
    return matrix, warnings


def _split_offering(name: str) -> Tuple[str, Optional[int]]:
    course, sep, term = name.rpartition(OFFERING_SEPARATOR)
    if sep and term.lstrip("-").isdigit():
        return course, int(term)
    return name, None


def _bootstrap_sample(m: CourseResponseMatrix, rng: np.random.Generator) -> Optional[CourseResponseMatrix]:
    picks = rng.integers(0, m.n_students, size=m.n_students)
    grades = m.grades.iloc[picks].copy()
    grades.index = [f"{m.student_ids[i]}#{k}" for k, i in enumerate(picks)]
    grades = grades.loc[:, grades.notna().any(axis=0)]
    try:
        return CourseResponseMatrix(grades=grades, scale=m.scale)
    except ValueError:
        return None


def bootstrap_difficulty(
    m: CourseResponseMatrix,
    model_class: str,
    n_dim: int = 1,
    reps: int = config.BOOTSTRAP_REPS,
    seed: int = config.RANDOM_SEED,
) -> pd.DataFrame:
    """
    Difficulty of every column over ``reps`` student resamples.

    Replicate r uses ``default_rng([seed, r])``. Replicates whose fit
    fails (e.g. a disconnected resample) are left as NaN rows.

    Returns:
        DataFrame reps x columns
    """
    draws = pd.DataFrame(np.nan, index=range(reps), columns=m.course_ids)
    for r in range(reps):
        sample = _bootstrap_sample(m, np.random.default_rng([seed, r]))
        if sample is None:
            continue
        try:
            model = fit_model(model_class, sample, n_dim=n_dim)
        except CourseDataError as e:
            logger.debug("Bootstrap replicate %d skipped: %s", r, e)
            continue
        series = unidim_difficulty(model).as_series()
        draws.loc[r, series.index] = series.to_numpy()
    return draws


def fit_time_resolved(
    m: CourseResponseMatrix,
    model_class: str,
    n_dim: int = 1,
    bootstrap_reps: int = config.BOOTSTRAP_REPS,
    min_size: int = config.MIN_OFFERING_SIZE,
    ci_level: float = config.CI_LEVEL,
    seed: int = config.RANDOM_SEED,
) -> Tuple[DifficultyEstimates, List[str]]:
    """
    Per-offering difficulty with percentile bootstrap intervals.

    Intervals are the raw bootstrap percentiles; a point estimate that
    falls outside its interval is reported as a warning. If no offering
    reaches ``min_size`` students the courses are fitted as a whole and
    a warning is returned.

    Args:
        m: Grade matrix with a term table
        model_class: "centering", "agm" or "irt"
        n_dim: Latent dimensions
        bootstrap_reps: Student resamples
        min_size: Minimum students for an offering of its own
        ci_level: Interval coverage
        seed: Base seed

    Returns:
        (DifficultyEstimates with one row per fitted column, warnings)

    Example:
        >>> estimates, _ = fit_time_resolved(drift.matrix, "irt", bootstrap_reps=50)
        >>> estimates.to_frame()[["offering_id", "term", "difficulty"]].head()
    """
    expanded, warnings = expand_offerings(m, min_size=min_size)
    n_offerings = sum(_split_offering(c)[1] is not None for c in expanded.course_ids)
    if n_offerings == 0:
        message = f"No offering reaches {min_size} students; fitting per course"
        logger.warning(message)
        warnings.append(message)

    model = fit_model(model_class, expanded, n_dim=n_dim)
    warnings.extend(model.warnings)
    counts = dict(zip(expanded.course_ids, expanded.observed.sum(axis=0).tolist()))
    point = unidim_difficulty(model, n_students=counts)

    draws = bootstrap_difficulty(expanded, model_class, n_dim=n_dim, reps=bootstrap_reps, seed=seed)
    tail = 100.0 * (1.0 - ci_level) / 2.0

    rows = []
    for row in point.rows:
        course, term = _split_offering(row.course_id)
        column = draws[row.course_id].to_numpy(dtype=float) if row.course_id in draws else np.array([])
        finite = column[np.isfinite(column)]
        lower = upper = None
        if row.difficulty is not None and finite.size >= 2:
            lower, upper = (float(v) for v in np.percentile(finite, [tail, 100.0 - tail]))
            if not lower <= row.difficulty <= upper:
                logger.warning(
                    "%s: point estimate %.3f outside [%.3f, %.3f]", row.course_id, row.difficulty, lower, upper
                )
                warnings.append(f"{row.course_id}: point estimate outside its bootstrap interval")
        elif row.difficulty is not None:
            warnings.append(f"{row.course_id}: too few bootstrap fits for an interval")
        rows.append(DifficultyRow(
            course_id=course,
            offering_id=row.course_id,
            term=term,
            difficulty=row.difficulty,
            raw=row.raw,
            ci_lower=lower,
            ci_upper=upper,
            ci_level=ci_level,
            n_students=row.n_students,
            flagged=row.flagged,
        ))
    logger.info("Time-resolved %s fit: %d columns, %d offerings", model_class, len(rows), n_offerings)
    return DifficultyEstimates(model_class=model.model_class, n_dim=model.n_dim, rows=rows), warnings

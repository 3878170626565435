"""
Reliability and validity: split-half refits and concurrent validity.
"""
import logging
from typing import List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.stats import pearsonr

import config
from data.errors import DegenerateDataError, StructuralError
from data.schema import CourseResponseMatrix
from models.heuristics import heuristic_estimates
from models.schema import LatentModel
from models.selection import fit_model, unidim_difficulty

logger = logging.getLogger(__name__)

SplitMode = Literal["random", "time"]


class SplitHalfReport(BaseModel):
    mode: SplitMode
    model_class: str
    student_corr: Optional[float] = Field(default=None, ge=-1, le=1)
    course_corr: Optional[float] = Field(default=None, ge=-1, le=1)
    n_students: int = 0
    n_courses: int = 0
    threshold: float = config.RELIABILITY_THRESHOLD
    flagged: bool = False
    notes: List[str] = Field(default_factory=list)


class ValidityReport(BaseModel):
    """|Pearson r| of model parameters against course means and GPAs."""
    student_r: Optional[float] = None
    course_r: Optional[float] = None
    student_sign: int = 0
    course_sign: int = 0
    threshold: float = config.RELIABILITY_THRESHOLD
    flagged: bool = False


def _pearson(a: pd.Series, b: pd.Series) -> Optional[float]:
    joined = pd.concat([a, b], axis=1, join="inner").dropna()
    if len(joined) < 3 or joined.iloc[:, 0].std() == 0 or joined.iloc[:, 1].std() == 0:
        return None
    r, _ = pearsonr(joined.iloc[:, 0], joined.iloc[:, 1])
    return float(np.clip(r, -1.0, 1.0))


def _half_matrix(m: CourseResponseMatrix, mask: np.ndarray, students: List[str]) -> CourseResponseMatrix:
    grades = m.grades.where(mask).loc[students]
    grades = grades.loc[:, grades.notna().any(axis=0)]
    return m.replace(grades=grades, imputed=None)


def split_half(
    m: CourseResponseMatrix, mode: SplitMode = "random", seed: int = config.RANDOM_SEED
) -> Tuple[CourseResponseMatrix, CourseResponseMatrix, List[str]]:
    """
    Partition every student's observed grades into two halves.

    Time mode puts the chronologically first half in half 1 (ties broken
    by course id); random mode shuffles with ``seed``. Odd counts give
    the extra grade to half 1. Students with fewer than two grades are
    left out of both halves.

    Returns:
        (half1, half2, notes)

    Example:
        >>> first, second, _ = split_half(m, mode="time")
    """
    if mode == "time" and not m.has_terms:
        raise StructuralError("Time split-half needs a term table")
    if mode not in ("random", "time"):
        raise ValueError(f"Unknown split mode: {mode}")

    observed = m.observed & ~m.imputed_mask()
    terms = m.terms.to_numpy(dtype=float) if mode == "time" else None
    order = np.argsort(np.array(m.course_ids), kind="stable")
    rng = np.random.default_rng(seed)

    first = np.zeros_like(observed)
    kept: List[str] = []
    for i, student in enumerate(m.student_ids):
        cells = order[observed[i, order]]
        if cells.size < 2:
            continue
        if mode == "time":
            keys = np.where(np.isnan(terms[i, cells]), np.inf, terms[i, cells])
            cells = cells[np.argsort(keys, kind="stable")]
        else:
            cells = rng.permutation(cells)
        first[i, cells[: (cells.size + 1) // 2]] = True
        kept.append(student)

    notes = []
    dropped = m.n_students - len(kept)
    if dropped:
        notes.append(f"{dropped} students with fewer than two grades left out of the split")
        logger.info(notes[-1])
    if not kept:
        raise DegenerateDataError("No student has two or more grades to split")
    return _half_matrix(m, first, kept), _half_matrix(m, observed & ~first, kept), notes


def split_half_correlation(
    m: CourseResponseMatrix,
    model_class: str,
    n_dim: int = 1,
    mode: SplitMode = "random",
    seed: int = config.RANDOM_SEED,
    threshold: float = config.RELIABILITY_THRESHOLD,
) -> SplitHalfReport:
    """
    Fit one model per half and correlate the parameter sets.

    Students are compared on their primary trait and courses on their
    scalar difficulty, both on ids shared by the two fits.
    """
    half1, half2, notes = split_half(m, mode=mode, seed=seed)
    models = [fit_model(model_class, half, n_dim=n_dim) for half in (half1, half2)]
    for k, model in enumerate(models, start=1):
        if model.excluded_courses:
            notes.append(f"half {k}: degenerate courses dropped {model.excluded_courses}")

    student_r, course_r = compare_halves(*models)
    flagged = any(r is None or r < threshold for r in (student_r, course_r))
    if flagged:
        logger.warning("%s split-half below %.2f: students %s, courses %s", mode, threshold, student_r, course_r)
    return SplitHalfReport(
        mode=mode,
        model_class=model_class,
        student_corr=student_r,
        course_corr=course_r,
        n_students=len(set(models[0].student_ids) & set(models[1].student_ids)),
        n_courses=len(set(models[0].course_ids) & set(models[1].course_ids)),
        threshold=threshold,
        flagged=flagged,
        notes=notes,
    )


def compare_halves(a: LatentModel, b: LatentModel) -> Tuple[Optional[float], Optional[float]]:
    """(student r, course r) between two fitted models on shared ids."""
    traits = [pd.Series(x.primary_traits(), index=x.student_ids) for x in (a, b)]
    difficulty = [unidim_difficulty(x).as_series() for x in (a, b)]
    return _pearson(*traits), _pearson(*difficulty)


def concurrent_validity(
    model: LatentModel, m: CourseResponseMatrix, threshold: float = config.RELIABILITY_THRESHOLD
) -> ValidityReport:
    """
    Agreement of difficulty with course mean grades and of traits with GPAs.

    Magnitudes are compared against ``threshold``; the sign is recorded
    separately since difficulty runs against the mean grade.
    """
    course_means, gpas = heuristic_estimates(m)
    difficulty = unidim_difficulty(model).as_series()
    traits = pd.Series(model.primary_traits(), index=model.student_ids)
    student_r = _pearson(traits, gpas)
    course_r = _pearson(difficulty, course_means)

    def sign(r):
        return 0 if r is None else int(np.sign(r))

    flagged = any(r is None or abs(r) < threshold for r in (student_r, course_r))
    return ValidityReport(
        student_r=None if student_r is None else abs(student_r),
        course_r=None if course_r is None else abs(course_r),
        student_sign=sign(student_r),
        course_sign=sign(course_r),
        threshold=threshold,
        flagged=flagged,
    )

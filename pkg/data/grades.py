"""
Grade matrix ingestion and grade-scale transformations.

Reads delimited grade tables, canonicalizes the grade orientation and
applies the percentile and pass/fail conversions used before modeling.
"""
import logging
from pathlib import Path
from typing import Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import rankdata

import config
from data.errors import (
    DegenerateDataError,
    EmptyMatrixError,
    GradeParseError,
    ScaleError,
    StructuralError,
    UnknownIdentifierError,
)
from data.schema import CourseResponseMatrix, GradeScaleSpec, GroupAssignment

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _detect_separator(path: Path) -> str:
    with open(path, "r", encoding="utf-8") as handle:
        first_line = handle.readline()
    return "\t" if "\t" in first_line else ","


def _read_cells(path: PathLike) -> Tuple[pd.DataFrame, pd.Index, pd.Index]:
    """Read a raw table of strings and split header, ids and body."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Grade file not found: {path}")

    try:
        raw = pd.read_csv(
            path,
            sep=_detect_separator(path),
            header=None,
            dtype=str,
            keep_default_na=False,
            encoding="utf-8",
        )
    except pd.errors.ParserError as e:
        raise StructuralError(f"{path.name} is not a rectangular table: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise StructuralError(f"{path.name} is empty") from e

    if raw.shape[0] < 2 or raw.shape[1] < 2:
        raise StructuralError(f"{path.name} needs a header row and an id column")

    courses = pd.Index([str(c).strip() for c in raw.iloc[0, 1:]])
    students = pd.Index([str(s).strip() for s in raw.iloc[1:, 0]])

    if courses.has_duplicates:
        dupes = sorted(set(courses[courses.duplicated()]))
        raise StructuralError(f"Duplicate course names: {dupes}")
    if students.has_duplicates:
        dupes = sorted(set(students[students.duplicated()]))
        raise StructuralError(f"Duplicate student ids: {dupes[:10]}")
    if (courses == "").any() or (students == "").any():
        raise StructuralError("Empty course name or student id")

    body = raw.iloc[1:, 1:].fillna("")
    body.index = students
    body.columns = courses
    return body, students, courses


def _parse_numbers(body: pd.DataFrame) -> pd.DataFrame:
    stripped = body.apply(lambda col: col.str.strip())
    missing = stripped.apply(lambda col: col.str.lower().isin(config.MISSING_TOKENS))
    numbers = stripped.apply(pd.to_numeric, errors="coerce")
    bad = numbers.isna() & ~missing
    if bad.to_numpy().any():
        row_pos, col_pos = np.argwhere(bad.to_numpy())[0]
        raise GradeParseError(
            row=str(body.index[row_pos]),
            column=str(body.columns[col_pos]),
            value=str(body.iat[row_pos, col_pos]),
        )
    return numbers.astype(float)


def _drop_empty(grades: pd.DataFrame) -> pd.DataFrame:
    observed = grades.notna()
    empty_rows = grades.index[~observed.any(axis=1)]
    empty_cols = grades.columns[~observed.any(axis=0)]
    if len(empty_rows):
        logger.warning("Dropping %d students without any grade", len(empty_rows))
    if len(empty_cols):
        logger.warning("Dropping courses without any grade: %s", list(empty_cols))
    return grades.loc[observed.any(axis=1), observed.any(axis=0)]


def _check_threshold(values: np.ndarray, threshold: Optional[float], scale_name: str) -> None:
    if threshold is None:
        return
    seen = values[~np.isnan(values)]
    if threshold < seen.min() or threshold > seen.max():
        raise ScaleError(
            f"{scale_name} {threshold} lies outside the observed grade range "
            f"[{seen.min()}, {seen.max()}]"
        )


def load_matrix(path: PathLike, spec: GradeScaleSpec) -> CourseResponseMatrix:
    """
    Load a grade table into a CourseResponseMatrix.

    The first row holds course names, the first column student ids.
    Empty cells (or ``nan``/``NA``) are missing grades. The separator is
    detected from the header line (tab if present, otherwise comma).

    Args:
        path: CSV/TSV file location
        spec: Grade scale the table is written in

    Returns:
        CourseResponseMatrix with the scale attached

    Example:
        >>> spec = GradeScaleSpec(lowest_grade=0, kind="continuous")
        >>> m = load_matrix("grades.csv", spec)
        >>> m.n_observed
        5
    """
    body, _, _ = _read_cells(path)
    grades = _drop_empty(_parse_numbers(body))
    if grades.empty:
        raise EmptyMatrixError(f"{Path(path).name} contains no grades")

    values = grades.to_numpy()
    if not spec.conforms(values):
        raise ScaleError(
            f"Grades outside the {spec.direction} scale with lowest grade {spec.lowest_grade}"
        )
    if spec.kind == "binary" and not np.isin(values[~np.isnan(values)], (0.0, 1.0)).all():
        raise ScaleError("Binary scale declared but grades other than 0/1 found")
    _check_threshold(values, spec.pass_threshold, "Pass threshold")

    matrix = CourseResponseMatrix(grades=grades, scale=spec)
    logger.info(
        "Loaded %d students x %d courses (%d observed grades)",
        matrix.n_students, matrix.n_courses, matrix.n_observed,
    )
    return matrix


def save_matrix(m: CourseResponseMatrix, path: PathLike) -> Path:
    """Write the matrix in the layout read by load_matrix (empty cell = missing)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m.grades.to_csv(path, index_label="student_id", na_rep="")
    return path


def load_terms(path: PathLike, m: CourseResponseMatrix) -> CourseResponseMatrix:
    """
    Attach a term table (same layout as the grade file) to a matrix.

    Every student and course of the matrix must appear in the term file.
    Observed grades without a term are allowed and treated as unknown term.
    """
    body, students, courses = _read_cells(path)
    terms = _parse_numbers(body)

    missing_students = [s for s in m.student_ids if s not in set(students)]
    missing_courses = [c for c in m.course_ids if c not in set(courses)]
    if missing_students or missing_courses:
        raise StructuralError(
            f"Term table lacks students {missing_students[:10]} / courses {missing_courses}"
        )
    terms = terms.loc[m.grades.index, m.grades.columns]
    finite = terms.to_numpy()[~np.isnan(terms.to_numpy())]
    if not np.allclose(finite, np.round(finite)):
        raise StructuralError("Term indices must be integers")
    terms = terms.where(m.grades.notna())
    return m.replace(grades=m.grades, terms=terms)


def load_groups(path: PathLike, m: Optional[CourseResponseMatrix] = None) -> GroupAssignment:
    """
    Read a ``student_id,group`` file with group codes -1/+1.

    Raises StructuralError listing ids that are not in ``m``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Group file not found: {path}")
    table = pd.read_csv(path, sep=_detect_separator(path), dtype={"student_id": str})
    if not {"student_id", "group"}.issubset(table.columns):
        raise StructuralError("Group file needs the columns student_id and group")
    if table["student_id"].duplicated().any():
        raise StructuralError("Duplicate student ids in group file")

    codes = pd.to_numeric(table["group"], errors="coerce")
    if codes.isna().any():
        raise StructuralError("Group codes must be -1 or 1")
    groups = GroupAssignment(
        groups=dict(zip(table["student_id"].str.strip(), codes.astype(int)))
    )

    if m is not None:
        unmatched = groups.unmatched(m.student_ids)
        if unmatched:
            raise StructuralError(f"Group file references unknown students: {unmatched[:20]}")
    return groups


def reflect_threshold(scale: GradeScaleSpec, threshold: Optional[float]) -> Optional[float]:
    """Map a threshold from input units to canonical ascending units."""
    if threshold is None or scale.direction == "ascending":
        return threshold
    return scale.lowest_grade - threshold


def normalize_scale(m: CourseResponseMatrix) -> CourseResponseMatrix:
    """
    Canonicalize grades to ascending order with 0 as the worst grade.

    Descending scales are reflected (g -> lowest_grade - g). Ascending
    matrices are returned as they are, so the operation is idempotent.
    """
    if m.scale.direction == "ascending":
        return m

    reflected = m.scale.lowest_grade - m.grades
    scale = m.scale.model_copy(update={
        "lowest_grade": 0.0,
        "direction": "ascending",
        "pass_threshold": reflect_threshold(m.scale, m.scale.pass_threshold),
    })
    logger.info("Reflected descending grades around %s", m.scale.lowest_grade)
    return m.replace(grades=reflected, scale=scale)


def _require_ascending(m: CourseResponseMatrix, operation: str) -> None:
    if m.scale.direction != "ascending":
        raise ScaleError(f"{operation} needs a canonical (ascending) matrix; call normalize_scale first")


def percentile_transform(m: CourseResponseMatrix) -> CourseResponseMatrix:
    """
    Replace grades by pooled mid-rank percentiles on [0, 100].

    Each observed grade maps to 100 * (share of observed grades strictly
    below it + half the share equal to it). The pass threshold, if any,
    is mapped with the same formula.
    """
    _require_ascending(m, "percentile_transform")
    if m.scale.kind == "binary":
        raise ScaleError("percentile_transform applies to ordinal or continuous grades")

    values = m.values
    observed = ~np.isnan(values)
    pooled = values[observed]
    n = pooled.size

    percentiles = np.full_like(values, np.nan)
    percentiles[observed] = 100.0 * (rankdata(pooled, method="average") - 0.5) / n
    if np.unique(pooled).size == 1:
        logger.warning("All grades are identical; every percentile is 50")

    threshold = m.scale.pass_threshold
    if threshold is not None:
        ordered = np.sort(pooled)
        below = np.searchsorted(ordered, threshold, side="left")
        equal = np.searchsorted(ordered, threshold, side="right") - below
        threshold = 100.0 * (below + 0.5 * equal) / n

    scale = m.scale.model_copy(update={
        "lowest_grade": 0.0, "kind": "continuous", "pass_threshold": threshold,
    })
    frame = pd.DataFrame(percentiles, index=m.grades.index, columns=m.grades.columns)
    return m.replace(grades=frame, scale=scale)


def binarize(m: CourseResponseMatrix, threshold: Optional[float] = None) -> CourseResponseMatrix:
    """
    Convert grades to pass (1) / fail (0): g >= threshold passes.

    Courses whose observed outcomes are all identical are listed in
    ``degenerate_courses`` so the IRT fit can exclude or regularize them.

    Args:
        m: Canonical (ascending) matrix
        threshold: Passing grade; defaults to the scale's pass_threshold

    Returns:
        Binary CourseResponseMatrix
    """
    _require_ascending(m, "binarize")
    threshold = m.scale.pass_threshold if threshold is None else threshold
    if threshold is None:
        raise ScaleError("binarize needs a threshold (none given and no pass_threshold on the scale)")
    values = m.observed_values()
    _check_threshold(values, threshold, "Threshold")

    passed = np.where(np.isnan(values), np.nan, (values >= threshold).astype(float))
    frame = pd.DataFrame(passed, index=m.grades.index, columns=m.grades.columns)

    distinct = frame.nunique(axis=0, dropna=True)
    degenerate = tuple(str(c) for c in distinct.index[distinct <= 1])
    if degenerate:
        logger.warning("Degenerate pass/fail courses (single outcome): %s", list(degenerate))

    scale = GradeScaleSpec(lowest_grade=0.0, direction="ascending", kind="binary")
    return m.replace(grades=frame, scale=scale, imputed=None, degenerate_courses=degenerate)


def filter_students(m: CourseResponseMatrix, min_observed: int) -> CourseResponseMatrix:
    """Drop students with fewer than ``min_observed`` grades, then empty courses."""
    if min_observed < 1:
        raise ValueError("min_observed must be at least 1")

    counts = m.grades.notna().sum(axis=1)
    kept = m.grades.loc[counts >= min_observed]
    if kept.empty:
        raise EmptyMatrixError(f"No student has {min_observed} or more grades")

    dropped = int((counts < min_observed).sum())
    if dropped:
        logger.info("Removed %d students with fewer than %d grades", dropped, min_observed)

    has_grades = kept.notna().any(axis=0)
    if not has_grades.all():
        logger.warning("Courses left without grades were removed: %s", list(kept.columns[~has_grades]))
        kept = kept.loc[:, has_grades]
    if kept.shape[0] == m.n_students and kept.shape[1] == m.n_courses:
        return m
    return m.replace(grades=kept)


def merge_courses(
    m: CourseResponseMatrix, first: str, second: str, merged_name: Optional[str] = None
) -> CourseResponseMatrix:
    """
    Merge two locally dependent courses into one column.

    Where both grades exist the merged grade is their rounded mean,
    otherwise whichever grade exists. This is a manual remediation step.
    """
    for course in (first, second):
        if course not in m.grades.columns:
            raise UnknownIdentifierError(f"Unknown course: {course}")
    merged_name = merged_name or f"{first}+{second}"

    pair = m.grades[[first, second]]
    merged = pair.mean(axis=1, skipna=True).round()
    if m.scale.kind == "continuous":
        merged = pair.mean(axis=1, skipna=True)

    grades = m.grades.drop(columns=[first, second])
    grades[merged_name] = merged
    terms = None
    if m.terms is not None:
        terms = m.terms.drop(columns=[first, second])
        terms[merged_name] = m.terms[[first, second]].max(axis=1)
    return CourseResponseMatrix(grades=grades, scale=m.scale, terms=terms)


def count_categories(m: CourseResponseMatrix) -> int:
    values = m.observed_values()
    return int(np.unique(values[~np.isnan(values)]).size)


def choose_model_class(
    scale: GradeScaleSpec, n_categories: int
) -> Tuple[Literal["irt", "agm"], bool]:
    """
    Pick the latent model class from the grade scale.

    Returns:
        (model_class, needs_binarization)
    """
    if scale.kind == "binary":
        return "irt", False
    if scale.kind == "continuous":
        return "agm", False
    if n_categories >= config.ORDINAL_MIN_CATEGORIES:
        return "agm", False
    if scale.pass_threshold is None:
        raise ScaleError(
            f"Ordinal scale with {n_categories} categories needs binarization; "
            "provide a pass threshold"
        )
    return "irt", True


def cohort_groups(m: CourseResponseMatrix) -> GroupAssignment:
    """Group -1: first observed term at or before the median first term; +1 otherwise."""
    if m.terms is None:
        raise StructuralError("cohort_groups needs a term table")
    first_terms = m.terms.min(axis=1, skipna=True)
    known = first_terms.dropna()
    if known.empty:
        raise StructuralError("No student has a known term")
    cutoff = float(np.median(known.to_numpy()))
    codes = {str(s): (-1 if t <= cutoff else 1) for s, t in known.items()}
    if len(set(codes.values())) < 2:
        raise DegenerateDataError("All students share one cohort; cannot form two groups")
    return GroupAssignment(groups=codes)

"""
Pydantic models for grade matrices, grade scales, group assignments and
simulation scenarios.
"""
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

import config

_SCALE_TOL = 1e-9


class GradeScaleSpec(BaseModel):
    """Grade scale description: where the worst grade sits and which way merit grows."""
    model_config = ConfigDict(
        frozen=True,
        json_schema_extra={
            "example": {
                "lowest_grade": 5,
                "direction": "descending",
                "kind": "ordinal",
                "pass_threshold": 4,
            }
        }
    )

    lowest_grade: float = Field(..., description="Worst possible grade in input units")
    direction: Literal["ascending", "descending"] = Field(
        default="ascending", description="ascending: higher is better"
    )
    kind: Literal["binary", "ordinal", "continuous"] = Field(default="continuous")
    pass_threshold: Optional[float] = Field(
        default=None, description="Passing grade in input units (inclusive)"
    )

    def conforms(self, values: np.ndarray) -> bool:
        """Check that every value lies on the good side of lowest_grade."""
        values = values[~np.isnan(values)]
        if values.size == 0:
            return True
        if self.direction == "ascending":
            return bool(values.min() >= self.lowest_grade - _SCALE_TOL)
        return bool(values.max() <= self.lowest_grade + _SCALE_TOL)


class CourseResponseMatrix(BaseModel):
    """Students × courses grade table with NaN for missing grades.

    Matrices are immutable; every transform returns a new instance. Cells
    filled by imputation are tracked in ``imputed`` and exempt from scale
    checks.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grades: pd.DataFrame
    scale: GradeScaleSpec
    terms: Optional[pd.DataFrame] = None
    imputed: Optional[pd.DataFrame] = None
    degenerate_courses: Tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check_matrix(self) -> "CourseResponseMatrix":
        grades = self.grades
        if grades.shape[0] == 0 or grades.shape[1] == 0:
            raise ValueError("Grade matrix must have at least one student and one course")
        if not grades.index.is_unique:
            raise ValueError("Student identifiers must be unique")
        if not grades.columns.is_unique:
            raise ValueError("Course identifiers must be unique")
        if not all(pd.api.types.is_numeric_dtype(t) for t in grades.dtypes):
            raise ValueError("Grades must be numeric")

        observed = grades.notna()
        empty_rows = observed.index[~observed.any(axis=1)]
        if len(empty_rows):
            raise ValueError(f"Students without observed grades: {list(empty_rows[:5])}")
        empty_cols = observed.columns[~observed.any(axis=0)]
        if len(empty_cols):
            raise ValueError(f"Courses without observed grades: {list(empty_cols[:5])}")

        for name, frame in (("terms", self.terms), ("imputed", self.imputed)):
            if frame is not None and (
                not frame.index.equals(grades.index) or not frame.columns.equals(grades.columns)
            ):
                raise ValueError(f"{name} table labels do not match the grade matrix")

        raw = grades.to_numpy(dtype=float)
        if self.imputed is not None:
            raw = np.where(self.imputed.to_numpy(dtype=bool), np.nan, raw)
        if not self.scale.conforms(raw):
            raise ValueError(
                f"Grades fall outside the scale bounded by {self.scale.lowest_grade} "
                f"({self.scale.direction})"
            )
        if self.scale.kind == "binary":
            seen = raw[~np.isnan(raw)]
            if not np.isin(seen, (0.0, 1.0)).all():
                raise ValueError("Binary grades must be 0 or 1")
        return self

    # ------------------------------------------------------------------ #
    @property
    def student_ids(self) -> List[str]:
        return [str(s) for s in self.grades.index]

    @property
    def course_ids(self) -> List[str]:
        return [str(c) for c in self.grades.columns]

    @property
    def n_students(self) -> int:
        return self.grades.shape[0]

    @property
    def n_courses(self) -> int:
        return self.grades.shape[1]

    @property
    def values(self) -> np.ndarray:
        """Copy of the grades as a float array (NaN = missing)."""
        return self.grades.to_numpy(dtype=float, copy=True)

    @property
    def observed(self) -> np.ndarray:
        return self.grades.notna().to_numpy()

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())

    @property
    def is_complete(self) -> bool:
        return bool(self.observed.all())

    @property
    def has_terms(self) -> bool:
        return self.terms is not None

    def observed_values(self) -> np.ndarray:
        """Grades with imputed cells masked back to NaN. Models fit on these."""
        values = self.values
        if self.imputed is not None:
            values[self.imputed.to_numpy(dtype=bool)] = np.nan
        return values

    def imputed_mask(self) -> np.ndarray:
        if self.imputed is None:
            return np.zeros(self.grades.shape, dtype=bool)
        return self.imputed.to_numpy(dtype=bool)

    def subset(
        self,
        students: Optional[List[str]] = None,
        courses: Optional[List[str]] = None,
    ) -> "CourseResponseMatrix":
        """Restrict to the given students/courses (order as given)."""
        rows = self.grades.index if students is None else pd.Index(students)
        cols = self.grades.columns if courses is None else pd.Index(courses)
        return self.replace(grades=self.grades.loc[rows, cols])

    def replace(self, grades: pd.DataFrame, **changes) -> "CourseResponseMatrix":
        """Build a new matrix with ``grades`` and side tables realigned to it."""
        fields = {
            "scale": self.scale,
            "terms": self.terms,
            "imputed": self.imputed,
            "degenerate_courses": self.degenerate_courses,
        }
        fields.update(changes)
        for name in ("terms", "imputed"):
            frame = fields[name]
            if frame is not None:
                fields[name] = frame.loc[grades.index, grades.columns]
        kept = set(str(c) for c in grades.columns)
        fields["degenerate_courses"] = tuple(
            c for c in fields["degenerate_courses"] if c in kept
        )
        return CourseResponseMatrix(grades=grades, **fields)


class GroupAssignment(BaseModel):
    """Student → DCF group code in {-1, +1}."""
    model_config = ConfigDict(
        json_schema_extra={"example": {"groups": {"S0001": -1, "S0002": 1}}}
    )

    groups: Dict[str, int]

    @field_validator("groups")
    @classmethod
    def _check_codes(cls, groups: Dict[str, int]) -> Dict[str, int]:
        bad = sorted(s for s, g in groups.items() if g not in (-1, 1))
        if bad:
            raise ValueError(f"Group codes must be -1 or +1; offending students: {bad[:10]}")
        codes = set(groups.values())
        if codes != {-1, 1}:
            raise ValueError("Both groups (-1 and +1) must be non-empty")
        return groups

    def unmatched(self, student_ids: List[str]) -> List[str]:
        known = set(student_ids)
        return sorted(s for s in self.groups if s not in known)

    def codes_for(self, student_ids: List[str]) -> np.ndarray:
        """Group codes for the given students; 0 where a student has no group."""
        return np.array([self.groups.get(s, 0) for s in student_ids], dtype=float)

    def swapped(self) -> "GroupAssignment":
        return GroupAssignment(groups={s: -g for s, g in self.groups.items()})


class SimulationConfig(BaseModel):
    """Ground-truth simulation settings."""
    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "n_students": 2000,
                "n_courses": 20,
                "n_dim": 1,
                "grade_kind": "binary",
                "seed": 42,
                "replicates": 10,
            }
        }
    )

    n_students: int = Field(default=config.SIM_STUDENTS, ge=2)
    n_courses: int = Field(default=config.SIM_COURSES, ge=2)
    n_dim: Literal[1, 2] = 1
    grade_kind: Literal["binary", "continuous"] = "binary"
    seed: int = config.RANDOM_SEED
    replicates: int = Field(default=config.SIM_REPLICATES, ge=1)
    logit_noise_sd: float = Field(
        default=config.SIM_LOGIT_NOISE_SD, ge=0, description="Logit noise for continuous grades"
    )


class DriftConfig(BaseModel):
    """Time-drift scenario settings."""
    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "scenario": "course_drift_with_shock",
                "rate": 0.1,
                "shock_term": 6,
                "n_terms": 10,
            }
        }
    )

    scenario: Literal["course_constant_drift", "course_drift_with_shock", "student_constant_drift"]
    rate: float = Field(default=0.1, ge=0, description="Per-term drift scale (logits)")
    shock_term: Optional[int] = Field(default=None, ge=0)
    shock_sd: float = Field(default=1.0, ge=0)
    n_terms: int = Field(default=config.SIM_TERMS, ge=1)

    @model_validator(mode="after")
    def _check_shock(self) -> "DriftConfig":
        if self.scenario == "course_drift_with_shock" and self.shock_term is None:
            raise ValueError("course_drift_with_shock requires shock_term")
        if self.shock_term is not None and self.shock_term >= self.n_terms:
            raise ValueError(f"shock_term {self.shock_term} outside 0..{self.n_terms - 1}")
        return self

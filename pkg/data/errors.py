"""
Exception types shared across the toolkit.
"""
from typing import List, Optional, Sequence


class CourseDataError(ValueError):
    """Base class for data, scale and modeling errors."""


class GradeParseError(CourseDataError):
    """A grade cell could not be parsed as a number."""

    def __init__(self, row: str, column: str, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"Cannot parse grade {value!r} at row {row!r}, column {column!r}")


class StructuralError(CourseDataError):
    """Duplicate identifiers, ragged tables or mismatched labels."""


class ScaleError(CourseDataError):
    """Grades do not fit the declared grade scale, or the scale does not fit the operation."""


class EmptyMatrixError(CourseDataError):
    """Filtering removed every student or course."""


class DegenerateDataError(CourseDataError):
    """Constant columns, too few joint observations or similar degenerate input."""


class NotApplicableError(CourseDataError):
    """The requested test does not apply to this data (e.g. no missing values)."""


class AmputationError(CourseDataError):
    """Amputation kept producing fully-missing rows or columns."""


class IdentifiabilityError(CourseDataError):
    """The student-course graph is disconnected, so parameters are not jointly identifiable."""

    def __init__(self, components: Sequence[Sequence[str]]):
        self.components: List[List[str]] = [list(c) for c in components]
        preview = "; ".join(
            f"[{', '.join(c[:5])}{', ...' if len(c) > 5 else ''}]" for c in self.components
        )
        super().__init__(f"Student-course graph has {len(self.components)} components: {preview}")


class UnknownIdentifierError(CourseDataError, KeyError):
    """A student or course identifier is not part of the matrix or model."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ReportWriteError(CourseDataError):
    """The report directory cannot be created or written."""


class PipelineError(CourseDataError):
    """A fatal error inside a named pipeline stage."""

    def __init__(self, stage: str, message: str, cause: Optional[BaseException] = None):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {message}")

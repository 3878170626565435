"""
Pipeline report model and writers (JSON summary and CSV tables).
"""
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from analysis.dimensionality import PveResult
from analysis.missingness import (
    LittleResult,
    MarCourseResult,
    MissingnessVerdict,
    ObservedRatioReport,
    mar_table,
)
from checks.local_independence import Q3Report, ResidualPcaReport
from checks.reliability import SplitHalfReport, ValidityReport
from data.errors import ReportWriteError
from data.schema import GradeScaleSpec
from insights.dcf import DcfResult, dcf_table
from models.schema import DifficultyEstimates, LatentModel
from models.selection import BicRow
from pipeline.settings import PipelineConfig

logger = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
SIGN_CONVENTION = (
    "Pass probability is sigmoid(<alpha, theta - delta>). Higher theta means "
    "stronger performance and higher difficulty means a harder course for every "
    "model class; centering and AGM difficulties are the negated projections "
    "(raw values in the 'raw' column)."
)

Severity = Literal["info", "warning", "error"]


class Flag(BaseModel):
    """A failed or cautionary check. Flags never suppress estimates."""
    check: str
    severity: Severity = "warning"
    message: str


class ImputationSummary(BaseModel):
    method: str
    n_components: Optional[int] = None
    n_iter: int = 0
    converged: bool = True


class CheckResults(BaseModel):
    """Outcome of the assumption checks on an existing model (check verb)."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    q3: Optional[Q3Report] = None
    residual_pca: Optional[ResidualPcaReport] = None
    split_half: List[SplitHalfReport] = Field(default_factory=list)
    validity: Optional[ValidityReport] = None
    flags: List[Flag] = Field(default_factory=list)

    def summary(self) -> Dict[str, Any]:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "q3": _q3_summary(self.q3),
            "residual_pca": self.residual_pca.model_dump() if self.residual_pca else None,
            "split_half": [r.model_dump() for r in self.split_half],
            "validity": self.validity.model_dump() if self.validity else None,
            "flags": [f.model_dump() for f in self.flags],
        }


def _q3_summary(q3: Optional[Q3Report]) -> Optional[Dict[str, Any]]:
    if q3 is None:
        return None
    return {
        "mean_q3": q3.mean_q3,
        "n_pairs": q3.n_pairs,
        "undefined_pairs": q3.undefined_pairs,
        "violations": [v.model_dump() for v in q3.violations],
    }


def _reliability_frame(split_half: List[SplitHalfReport], validity: Optional[ValidityReport]) -> pd.DataFrame:
    rows = [{
        "check": f"split_half_{r.mode}",
        "student_r": r.student_corr,
        "course_r": r.course_corr,
        "flagged": r.flagged,
    } for r in split_half]
    if validity is not None:
        rows.append({
            "check": "concurrent_validity",
            "student_r": validity.student_r,
            "course_r": validity.course_r,
            "flagged": validity.flagged,
        })
    return pd.DataFrame(rows, columns=["check", "student_r", "course_r", "flagged"])


class PipelineReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    model_class: str
    n_dim: int
    scale: GradeScaleSpec
    settings: PipelineConfig
    n_students: int
    n_courses: int
    n_observed: int
    binarized: bool = False
    observed_ratio: Optional[ObservedRatioReport] = None
    little: Optional[LittleResult] = None
    mar: List[MarCourseResult] = Field(default_factory=list)
    missingness: Optional[MissingnessVerdict] = None
    imputation: Optional[ImputationSummary] = None
    pve: Optional[PveResult] = None
    dim_upper_bound: int = 1
    bic: List[BicRow] = Field(default_factory=list)
    model: LatentModel
    difficulty: DifficultyEstimates
    centering: DifficultyEstimates
    time_resolved: Optional[DifficultyEstimates] = None
    q3: Optional[Q3Report] = None
    residual_pca: Optional[ResidualPcaReport] = None
    split_half: List[SplitHalfReport] = Field(default_factory=list)
    validity: Optional[ValidityReport] = None
    dcf: List[DcfResult] = Field(default_factory=list)
    flags: List[Flag] = Field(default_factory=list)

    @property
    def has_nonconvergence(self) -> bool:
        return any(f.check == "convergence" for f in self.flags)

    # ------------------------------------------------------------------ #
    def traits_frame(self) -> pd.DataFrame:
        return self.model.student_frame().reset_index()

    def reliability_frame(self) -> pd.DataFrame:
        return _reliability_frame(self.split_half, self.validity)

    def pve_frame(self) -> pd.DataFrame:
        if self.pve is None:
            return pd.DataFrame(columns=["component", "eigenvalue", "pve", "cumulative"])
        return pd.DataFrame({
            "component": range(1, len(self.pve.pve) + 1),
            "eigenvalue": self.pve.eigenvalues,
            "pve": self.pve.pve,
            "cumulative": self.pve.cumulative,
        })

    def summary(self) -> Dict[str, Any]:
        """JSON-ready summary; large tables go to CSV instead."""
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "sign_convention": SIGN_CONVENTION,
            "model_class": self.model_class,
            "n_dim": self.n_dim,
            "scale": self.scale.model_dump(),
            "settings": self.settings.model_dump(),
            "data": {
                "n_students": self.n_students,
                "n_courses": self.n_courses,
                "n_observed": self.n_observed,
                "binarized": self.binarized,
            },
            "observed_ratio": self.observed_ratio.model_dump() if self.observed_ratio else None,
            "little": self.little.model_dump() if self.little else None,
            "missingness": self.missingness.model_dump() if self.missingness else None,
            "imputation": self.imputation.model_dump() if self.imputation else None,
            "pve": self.pve.model_dump() if self.pve else None,
            "dim_upper_bound": self.dim_upper_bound,
            "bic": [r.model_dump() for r in self.bic],
            "fit": {
                "log_likelihood": self.model.log_likelihood,
                "n_params": self.model.n_params,
                "converged": self.model.converged,
                "n_iter": self.model.n_iter,
                "excluded_courses": self.model.excluded_courses,
                "warnings": self.model.warnings,
            },
            "q3": _q3_summary(self.q3),
            "residual_pca": self.residual_pca.model_dump() if self.residual_pca else None,
            "split_half": [r.model_dump() for r in self.split_half],
            "validity": self.validity.model_dump() if self.validity else None,
            "difficulty": [r.model_dump() for r in self.difficulty.rows],
            "centering_difficulty": [r.model_dump() for r in self.centering.rows],
            "dcf": [r.model_dump() for r in self.dcf],
            "flags": [f.model_dump() for f in self.flags],
        }


def _sanitize(value: Any) -> Any:
    """Replace NaN/inf with None so the JSON stays standard."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {str(k): _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    return value


def _write_json(payload: Dict[str, Any], path: Path) -> Path:
    path.write_text(json.dumps(_sanitize(payload), indent=2, sort_keys=True), encoding="utf-8")
    return path


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False)
    return path


def emit_report(
    report: PipelineReport,
    out_dir: Path,
    fmt: Literal["json", "tables", "all"] = "all",
) -> List[Path]:
    """
    Write the report to ``out_dir``.

    json: summary.json and model.json. tables: model.json plus one CSV
    per table. all: both.

    Returns:
        Paths written, in a fixed order
    """
    if fmt not in ("json", "tables", "all"):
        raise ValueError(f"Unknown report format: {fmt}")
    out_dir = Path(out_dir)
    written: List[Path] = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if fmt in ("json", "all"):
            written.append(_write_json(report.summary(), out_dir / "summary.json"))
        model_path = out_dir / "model.json"
        model_path.write_text(report.model.to_json(), encoding="utf-8")
        written.append(model_path)

        if fmt in ("tables", "all"):
            tables = {
                "difficulty.csv": report.difficulty.to_frame(),
                "centering_difficulty.csv": report.centering.to_frame(),
                "traits.csv": report.traits_frame(),
                "missingness.csv": mar_table(report.mar),
                "pve.csv": report.pve_frame(),
                "bic.csv": pd.DataFrame([r.model_dump() for r in report.bic], columns=list(BicRow.model_fields)),
                "q3_violations.csv": report.q3.violation_frame() if report.q3 else pd.DataFrame(),
                "reliability.csv": report.reliability_frame(),
                "flags.csv": pd.DataFrame([f.model_dump() for f in report.flags], columns=list(Flag.model_fields)),
            }
            if report.time_resolved is not None:
                series = report.time_resolved.to_frame()[
                    ["course_id", "offering_id", "term", "difficulty", "ci_lower", "ci_upper", "ci_level", "n_students"]
                ]
                tables["difficulty_over_time.csv"] = series.sort_values(["course_id", "term"], na_position="last")
            if report.dcf:
                tables["dcf.csv"] = dcf_table(report.dcf)
            for name, frame in tables.items():
                written.append(_write_csv(frame, out_dir / name))
    except OSError as e:
        raise ReportWriteError(f"Cannot write report to {out_dir}: {e}") from e

    logger.info("Report written to %s (%d files)", out_dir, len(written))
    return written


def write_dcf(results: List[DcfResult], out_dir: Path) -> Path:
    """Write a stand-alone DCF table (dcf verb)."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        return _write_csv(dcf_table(results), out_dir / "dcf.csv")
    except OSError as e:
        raise ReportWriteError(f"Cannot write DCF table to {out_dir}: {e}") from e


def emit_checks(checks: CheckResults, out_dir: Path) -> List[Path]:
    """Write check results: checks.json, q3_violations.csv, reliability.csv, flags.csv."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = [_write_json(checks.summary(), out_dir / "checks.json")]
        written.append(_write_csv(
            checks.q3.violation_frame() if checks.q3 else pd.DataFrame(), out_dir / "q3_violations.csv"
        ))
        written.append(_write_csv(_reliability_frame(checks.split_half, checks.validity), out_dir / "reliability.csv"))
        written.append(_write_csv(
            pd.DataFrame([f.model_dump() for f in checks.flags], columns=list(Flag.model_fields)),
            out_dir / "flags.csv",
        ))
    except OSError as e:
        raise ReportWriteError(f"Cannot write checks to {out_dir}: {e}") from e
    logger.info("Checks written to %s", out_dir)
    return written

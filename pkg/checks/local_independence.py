"""
Local independence checks on model residuals: Yen's Q3 and residual PCA.
"""
import logging
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

import config
from analysis.dimensionality import pca_pve
from data.schema import CourseResponseMatrix
from models.schema import LatentModel

logger = logging.getLogger(__name__)


class Q3Violation(BaseModel):
    first: str
    second: str
    q3: float
    sign: int


class Q3Report(BaseModel):
    """Residual correlations between course pairs (diagonal undefined)."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    q3: pd.DataFrame
    mean_q3: float
    violations: List[Q3Violation]
    n_pairs: int
    undefined_pairs: int

    def violation_frame(self) -> pd.DataFrame:
        columns = list(Q3Violation.model_fields)
        return pd.DataFrame([v.model_dump() for v in self.violations], columns=columns)


class ResidualPcaReport(BaseModel):
    residual_pve: List[float]
    data_pve: List[float]
    noise_level: float
    flagged: bool
    note: Optional[str] = None


def _aligned(model: LatentModel, m: CourseResponseMatrix) -> Tuple[np.ndarray, np.ndarray]:
    """Grades and imputation mask on the model's students and courses."""
    grades = m.grades.loc[model.student_ids, model.course_ids].to_numpy(dtype=float)
    if m.imputed is None:
        return grades, np.zeros_like(grades, dtype=bool)
    return grades, m.imputed.loc[model.student_ids, model.course_ids].to_numpy(dtype=bool)


def residuals(model: LatentModel, m: CourseResponseMatrix, observed_only: bool = True) -> pd.DataFrame:
    """Grade minus prediction (pass probability for IRT); NaN where unobserved."""
    grades, imputed = _aligned(model, m)
    if observed_only:
        grades = np.where(imputed, np.nan, grades)
    return pd.DataFrame(grades - model.predict(), index=model.student_ids, columns=model.course_ids)


def yen_q3(
    model: LatentModel,
    m: CourseResponseMatrix,
    threshold: float = config.Q3_THRESHOLD,
    min_joint: int = config.Q3_MIN_JOINT,
) -> Q3Report:
    """
    Yen's Q3: Pearson correlation of residuals for every course pair.

    Pairs with fewer than ``min_joint`` jointly observed students stay
    undefined and are left out of the mean. A pair violates local
    independence when its Q3 exceeds the mean by more than ``threshold``.
    Violating pairs are reported, never merged.
    """
    frame = residuals(model, m)
    q3 = frame.corr(method="pearson", min_periods=min_joint)
    values = q3.to_numpy(copy=True)
    np.fill_diagonal(values, np.nan)
    q3 = pd.DataFrame(values, index=q3.index, columns=q3.columns)

    upper = np.triu_indices_from(values, k=1)
    pairs = values[upper]
    defined = np.isfinite(pairs)
    mean_q3 = float(pairs[defined].mean()) if defined.any() else float("nan")

    violations = []
    courses = list(q3.columns)
    for i, j, value in zip(upper[0], upper[1], pairs):
        if np.isfinite(value) and value - mean_q3 > threshold:
            violations.append(Q3Violation(
                first=courses[i], second=courses[j], q3=float(value), sign=int(np.sign(value)) or 1,
            ))
    if violations:
        logger.warning("%d course pairs violate local independence", len(violations))
    return Q3Report(
        q3=q3, mean_q3=mean_q3, violations=violations,
        n_pairs=int(pairs.size), undefined_pairs=int((~defined).sum()),
    )


def noise_level(n_students: int, n_courses: int) -> float:
    """Largest-eigenvalue share expected from white residuals."""
    return (1.0 + np.sqrt(n_courses / n_students)) ** 2 / n_courses


def residual_pca_check(
    model: LatentModel,
    m_imputed: CourseResponseMatrix,
    margin: float = config.NOISE_MARGIN,
) -> ResidualPcaReport:
    """
    Compare the PVE profile of model residuals with that of the data.

    Flagged when the first residual component explains more than both
    the data's second component and the white-noise level plus margin.

    Args:
        model: Fitted model
        m_imputed: Complete (imputed) matrix
    """
    frame = residuals(model, m_imputed, observed_only=False)
    grades = m_imputed.grades.loc[model.student_ids, model.course_ids]
    if frame.isna().any().any() or grades.isna().any().any():
        raise ValueError("Residual PCA needs a complete (imputed) matrix")

    data = grades.to_numpy(dtype=float)
    data = data[:, data.std(axis=0) > 0]
    data_pve = pca_pve(np.corrcoef(data, rowvar=False)).pve if data.shape[1] > 1 else [1.0]
    level = noise_level(*frame.shape)
    spread = frame.std(axis=0).to_numpy()
    live = spread > 1e-8 * max(float(grades.std(axis=0).max()), 1.0)
    if live.sum() < 2:
        return ResidualPcaReport(
            residual_pve=[], data_pve=data_pve, noise_level=level,
            flagged=False, note="no residual structure",
        )

    residual_pve = pca_pve(np.corrcoef(frame.to_numpy()[:, live], rowvar=False)).pve
    second = data_pve[1] if len(data_pve) > 1 else 0.0
    flagged = residual_pve[0] > max(second, level + margin)
    if flagged:
        logger.warning(
            "Residual first component explains %.1f%% (data second: %.1f%%)",
            100 * residual_pve[0], 100 * second,
        )
    return ResidualPcaReport(
        residual_pve=residual_pve, data_pve=data_pve, noise_level=level, flagged=bool(flagged),
    )

"""
Pydantic models for fitted latent models and difficulty estimates.
"""
import json
from typing import Dict, List, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit

from data.errors import UnknownIdentifierError

MODEL_FORMAT_VERSION = 1

ModelClass = Literal["centering", "agm", "irt"]


class LatentModel(BaseModel):
    """
    A fitted course difficulty model.

    IRT: P(pass) = sigmoid(<alpha_c, theta_s - delta_c>).
    AGM: g = <alpha_c, theta_s + delta_c> (alpha = 1 in one dimension).
    Centering: g = intercept + theta_s + delta_c.
    """
    model_config = ConfigDict(
        arbitrary_types_allowed=True,
        json_schema_extra={
            "example": {
                "model_class": "irt",
                "n_dim": 1,
                "student_ids": ["S0001", "S0002"],
                "course_ids": ["C01"],
                "theta": [[0.4], [-0.4]],
                "delta": [[0.1]],
                "alpha": [[1.0]],
                "log_likelihood": -1.3,
                "n_params": 3,
            }
        },
    )

    model_class: ModelClass
    n_dim: int = Field(..., ge=1)
    student_ids: List[str]
    course_ids: List[str]
    theta: np.ndarray
    delta: np.ndarray
    alpha: np.ndarray
    intercept: float = 0.0
    sigma2: Optional[float] = None
    log_likelihood: float
    n_params: int
    n_obs: int = 0
    discrimination: bool = False
    converged: bool = True
    n_iter: int = 0
    objective_trace: List[float] = Field(default_factory=list)
    excluded_courses: List[str] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_shapes(self) -> "LatentModel":
        S, C, n = len(self.student_ids), len(self.course_ids), self.n_dim
        if self.theta.shape != (S, n):
            raise ValueError(f"theta must be {S}x{n}, got {self.theta.shape}")
        if self.delta.shape != (C, n) or self.alpha.shape != (C, n):
            raise ValueError(f"delta and alpha must be {C}x{n}")
        if self.model_class == "agm" and not (self.sigma2 and self.sigma2 > 0):
            raise ValueError("AGM models need a positive sigma2")
        return self

    # ------------------------------------------------------------------ #
    def student_index(self, student_id: str) -> int:
        try:
            return self.student_ids.index(student_id)
        except ValueError:
            raise UnknownIdentifierError(f"Unknown student: {student_id}") from None

    def course_index(self, course_id: str) -> int:
        try:
            return self.course_ids.index(course_id)
        except ValueError:
            raise UnknownIdentifierError(f"Unknown course: {course_id}") from None

    def course_locations(self) -> np.ndarray:
        """<alpha_c, delta_c> for every course."""
        return np.sum(self.alpha * self.delta, axis=1)

    def linear_predictor(self) -> np.ndarray:
        """Students x courses logit (IRT) or expected grade (AGM, centering)."""
        if self.model_class == "irt":
            return self.theta @ self.alpha.T - self.course_locations()[None, :]
        if self.model_class == "agm":
            return self.theta @ self.alpha.T + self.course_locations()[None, :]
        return self.intercept + self.theta[:, :1] + self.delta[:, 0][None, :]

    def predict(self) -> np.ndarray:
        """Pass probabilities (IRT) or expected grades, students x courses."""
        eta = self.linear_predictor()
        return expit(eta) if self.model_class == "irt" else eta

    def primary_traits(self) -> np.ndarray:
        """Scalar student trait: theta for one dimension, first principal score otherwise."""
        if self.n_dim == 1:
            return self.theta[:, 0].copy()
        centered = self.theta - self.theta.mean(axis=0)
        _, _, Vt = np.linalg.svd(centered, full_matrices=False)
        axis = Vt[0]
        if np.sum(self.alpha @ axis) < 0:
            axis = -axis
        return centered @ axis

    def student_frame(self) -> pd.DataFrame:
        columns = [f"theta_{k + 1}" for k in range(self.n_dim)]
        frame = pd.DataFrame(self.theta, index=self.student_ids, columns=columns)
        frame.index.name = "student_id"
        return frame

    # ------------------------------------------------------------------ #
    def to_json(self) -> str:
        payload = {
            "format_version": MODEL_FORMAT_VERSION,
            "model_class": self.model_class,
            "n_dim": self.n_dim,
            "student_ids": self.student_ids,
            "course_ids": self.course_ids,
            "theta": self.theta.tolist(),
            "delta": self.delta.tolist(),
            "alpha": self.alpha.tolist(),
            "intercept": self.intercept,
            "sigma2": self.sigma2,
            "log_likelihood": self.log_likelihood,
            "n_params": self.n_params,
            "n_obs": self.n_obs,
            "discrimination": self.discrimination,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "excluded_courses": self.excluded_courses,
            "warnings": self.warnings,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LatentModel":
        payload = json.loads(text)
        version = payload.pop("format_version", None)
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"Unsupported model format version: {version}")
        n = payload["n_dim"]
        for name in ("theta", "delta", "alpha"):
            payload[name] = np.asarray(payload[name], dtype=float).reshape(-1, n)
        return cls(**payload)


class DifficultyRow(BaseModel):
    course_id: str
    offering_id: Optional[str] = None
    term: Optional[int] = None
    difficulty: Optional[float] = None
    raw: Optional[float] = None
    ci_lower: Optional[float] = None
    ci_upper: Optional[float] = None
    ci_level: Optional[float] = None
    n_students: Optional[int] = None
    flagged: bool = False

    @model_validator(mode="after")
    def _check_interval(self) -> "DifficultyRow":
        bounds = (self.ci_lower, self.ci_upper, self.difficulty)
        if None not in bounds and np.all(np.isfinite(bounds)):
            if not self.ci_lower <= self.difficulty <= self.ci_upper:
                raise ValueError(
                    f"{self.course_id}: interval [{self.ci_lower}, {self.ci_upper}] "
                    f"does not contain {self.difficulty}"
                )
        return self


class DifficultyEstimates(BaseModel):
    """Scalar difficulty per course (or per course offering). Higher = harder."""
    model_class: ModelClass
    n_dim: int
    rows: List[DifficultyRow]

    def to_frame(self) -> pd.DataFrame:
        columns = list(DifficultyRow.model_fields)
        return pd.DataFrame([r.model_dump() for r in self.rows], columns=columns)

    def as_series(self) -> pd.Series:
        """Difficulty indexed by offering id (course id when not time-resolved)."""
        keys = [r.offering_id or r.course_id for r in self.rows]
        values = [np.nan if r.difficulty is None else r.difficulty for r in self.rows]
        return pd.Series(values, index=keys, dtype=float)

    def by_course(self) -> Dict[str, float]:
        return self.as_series().to_dict()

"""
Pipeline settings: defaults from config.py, overridable from a flat
key=value file and from the command line.
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError

import config
from data.errors import StructuralError
from data.schema import DriftConfig, SimulationConfig

logger = logging.getLogger(__name__)


class PipelineConfig(BaseModel):
    """Every tunable constant of a pipeline run. Echoed in each report."""
    model_config = ConfigDict(
        extra="forbid",
        frozen=True,
        json_schema_extra={
            "example": {"seed": 42, "max_dimensions": 3, "bootstrap_reps": 200, "dcf_test": "wald"}
        },
    )

    seed: int = config.RANDOM_SEED
    min_observed: int = Field(default=config.MIN_OBSERVED_PER_STUDENT, ge=1)
    model_class: Optional[Literal["agm", "irt"]] = None

    significance_level: float = Field(default=config.SIGNIFICANCE_LEVEL, gt=0, lt=1)
    mar_pseudo_r2_cutoff: float = Field(default=config.MAR_PSEUDO_R2_CUTOFF, ge=0, le=1)
    little_shrinkage_start: float = Field(default=config.LITTLE_SHRINKAGE_START, gt=0)
    min_course_observed_ratio: float = config.MIN_COURSE_OBSERVED_RATIO
    min_overall_observed_ratio: float = config.MIN_OVERALL_OBSERVED_RATIO

    mipca_tol: float = Field(default=config.MIPCA_TOL, gt=0)
    mipca_max_iter: int = Field(default=config.MIPCA_MAX_ITER, ge=1)
    variance_threshold: float = Field(default=config.VARIANCE_THRESHOLD, gt=0, le=1)
    max_dimensions: int = Field(default=config.MAX_DIMENSIONS, ge=1)

    agm_tol: float = Field(default=config.AGM_TOL, gt=0)
    agm_max_iter: int = Field(default=config.AGM_MAX_ITER, ge=1)
    irt_ridge: float = Field(default=config.IRT_RIDGE, ge=0)
    irt_theta_ridge: float = Field(default=config.IRT_THETA_RIDGE, ge=0)
    irt_gradient_tol: float = Field(default=config.IRT_GRADIENT_TOL, gt=0)
    irt_max_epochs: int = Field(default=config.IRT_MAX_EPOCHS, ge=1)
    degenerate_policy: Literal["exclude", "penalize"] = config.DEGENERATE_POLICY
    irt_bic_likelihood: Literal["marginal", "joint"] = config.IRT_BIC_LIKELIHOOD

    time_resolved: bool = False
    min_offering_size: int = Field(default=config.MIN_OFFERING_SIZE, ge=1)
    bootstrap_reps: int = Field(default=config.BOOTSTRAP_REPS, ge=0)
    ci_level: float = Field(default=config.CI_LEVEL, gt=0, lt=1)

    q3_threshold: float = config.Q3_THRESHOLD
    q3_min_joint: int = Field(default=config.Q3_MIN_JOINT, ge=3)
    reliability_threshold: float = config.RELIABILITY_THRESHOLD
    noise_margin: float = config.NOISE_MARGIN

    dcf_min_group: int = Field(default=config.DCF_MIN_GROUP, ge=2)
    dcf_test: Literal["wald", "lr"] = config.DCF_TEST
    fdr_q: float = Field(default=config.FDR_Q, gt=0, lt=1)

    strict: bool = False

    def fit_options(self, model_class: str) -> Dict[str, Any]:
        """Keyword arguments for the model fitters."""
        if model_class == "agm":
            return {"tol": self.agm_tol, "max_iter": self.agm_max_iter}
        if model_class == "irt":
            return {
                "ridge": self.irt_ridge,
                "theta_ridge": self.irt_theta_ridge,
                "tol": self.irt_gradient_tol,
                "max_epochs": self.irt_max_epochs,
                "degenerate_policy": self.degenerate_policy,
            }
        return {}


def load_pipeline_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> PipelineConfig:
    """
    Build a PipelineConfig from a key=value file plus overrides.

    Keys are case-insensitive; unknown keys are rejected. Overrides
    whose value is None are ignored, so unset CLI flags keep the file
    or default value.

    Example:
        >>> load_pipeline_config("run.cfg", {"seed": 7}).seed
        7
    """
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise StructuralError(f"Config file not found: {path}")
        values = {k.strip().lower(): v for k, v in dotenv_values(path).items() if v is not None}
        logger.info("Loaded %d settings from %s", len(values), path)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return PipelineConfig(**values)
    except ValidationError as e:
        raise StructuralError(f"Invalid pipeline settings: {e}") from e


Generator = Literal["irt", "drift", "choice_bias", "dcf"]


class ScenarioConfig(BaseModel):
    """A ``simulate`` scenario: which generator to run and with what settings."""

    generator: Generator = "irt"
    simulation: SimulationConfig
    drift: Optional[DriftConfig] = None
    max_courses: Optional[int] = Field(default=None, ge=2)
    dcf_courses: List[int] = Field(default_factory=list)
    dcf_effect: float = 0.5
    replicate: int = Field(default=0, ge=0)


def load_scenario(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> ScenarioConfig:
    """
    Parse a flat key=value scenario file.

    ``generator`` picks the simulator (irt, drift, choice_bias, dcf).
    SimulationConfig keys (n_students, n_courses, n_dim, grade_kind,
    seed, ...) and DriftConfig keys (scenario, rate, shock_term, ...)
    may be mixed freely; ``dcf_courses`` is a comma-separated list of
    0-based course positions.

    Example:
        generator=drift
        scenario=course_drift_with_shock
        shock_term=6
        n_students=500
    """
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise StructuralError(f"Scenario file not found: {path}")
        values = {k.strip().lower(): v for k, v in dotenv_values(path).items() if v is not None}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    sim_keys = set(SimulationConfig.model_fields)
    drift_keys = set(DriftConfig.model_fields)
    own_keys = {"generator", "max_courses", "dcf_courses", "dcf_effect", "replicate"}
    unknown = sorted(set(values) - sim_keys - drift_keys - own_keys)
    if unknown:
        raise StructuralError(f"Unknown scenario keys: {unknown}")

    own = {k: values[k] for k in own_keys if k in values}
    if isinstance(own.get("dcf_courses"), str):
        own["dcf_courses"] = [int(p) for p in own["dcf_courses"].split(",") if p.strip()]
    try:
        simulation = SimulationConfig(**{k: v for k, v in values.items() if k in sim_keys})
        drift_values = {k: v for k, v in values.items() if k in drift_keys}
        drift = DriftConfig(**drift_values) if drift_values else None
        scenario = ScenarioConfig(simulation=simulation, drift=drift, **own)
    except (ValidationError, ValueError) as e:
        raise StructuralError(f"Invalid scenario: {e}") from e

    if scenario.generator == "drift" and scenario.drift is None:
        raise StructuralError("generator=drift needs a 'scenario' key")
    if scenario.generator == "choice_bias" and scenario.max_courses is None:
        raise StructuralError("generator=choice_bias needs 'max_courses'")
    if scenario.generator == "dcf" and not scenario.dcf_courses:
        raise StructuralError("generator=dcf needs 'dcf_courses'")
    return scenario

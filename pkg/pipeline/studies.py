"""
Simulation studies: ground-truth baselines, imputation reliability under
MAR amputation, time invariance under drift, and course-choice bias.

Every study returns a pandas DataFrame; the CLI ``study`` verb writes it
as CSV.
"""
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import pearsonr

import config
from analysis.correlation import correlation_matrix
from analysis.dimensionality import pca_pve
from analysis.imputation import mean_impute, mipca_impute
from checks.local_independence import yen_q3
from checks.regression_validation import regression_validation, summarize_scores
from checks.reliability import concurrent_validity, split_half_correlation
from data.generator import ampute_mar, simulate_choice_bias, simulate_drift, simulate_irt
from data.schema import DriftConfig, SimulationConfig
from models.heuristics import centering_estimates
from models.selection import fit_model, select_dimension, unidim_difficulty

logger = logging.getLogger(__name__)

DEFAULT_TAUS = (0.2, 0.3)
DEFAULT_ALPHAS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
DEFAULT_MAX_COURSES = (3, 4, 5, 6, 8, 10, 15, 20)


def first_pve(m) -> List[float]:
    return pca_pve(correlation_matrix(m)).pve


def _baseline_row(data, model_class: str, cfg: SimulationConfig, replicate: int) -> Dict[str, float]:
    m = data.matrix
    pve = first_pve(m)
    if model_class == "centering":
        model, chosen = centering_estimates(m), 1
    else:
        max_dim = 3 if model_class == "agm" else 2
        selection = select_dimension(m, model_class, max_dim=max_dim)
        model, chosen = selection.best, selection.best.n_dim
    q3 = yen_q3(model, m)
    split = split_half_correlation(m, model_class, n_dim=model.n_dim, seed=cfg.seed + replicate)
    validity = concurrent_validity(model, m)
    return {
        "model_class": model_class,
        "grade_kind": m.scale.kind,
        "replicate": replicate,
        "pve_1": pve[0],
        "pve_2": pve[1] if len(pve) > 1 else 0.0,
        "bic_n_dim": chosen,
        "q3_violations": len(q3.violations),
        "q3_pairs": q3.n_pairs,
        "split_half_students": split.student_corr,
        "split_half_courses": split.course_corr,
        "validity_students": validity.student_r,
        "validity_courses": validity.course_r,
    }


def baseline_study(cfg: SimulationConfig, per_replicate: bool = False) -> pd.DataFrame:
    """
    Fit AGM (continuous grades), IRT (binary grades) and centering on
    simulated data and collect PVE, BIC choice, Q3, split-half and
    validity numbers.

    Args:
        cfg: Simulation settings (n_dim sets the true dimension)
        per_replicate: Return one row per replicate instead of means

    Returns:
        DataFrame with one row per model class (and grade kind)
    """
    rows = []
    for r in range(cfg.replicates):
        continuous = simulate_irt(cfg.model_copy(update={"grade_kind": "continuous"}), replicate=r)
        binary = simulate_irt(cfg.model_copy(update={"grade_kind": "binary"}), replicate=r)
        rows.append(_baseline_row(continuous, "agm", cfg, r))
        rows.append(_baseline_row(continuous, "centering", cfg, r))
        rows.append(_baseline_row(binary, "irt", cfg, r))
        logger.info("Baseline replicate %d/%d done", r + 1, cfg.replicates)
    frame = pd.DataFrame(rows)
    if per_replicate:
        return frame
    grouped = frame.drop(columns="replicate").groupby(["model_class", "grade_kind"], sort=True)
    summary = grouped.mean(numeric_only=True)
    summary["bic_correct_share"] = grouped["bic_n_dim"].apply(lambda s: float(np.mean(s == cfg.n_dim)))
    return summary.reset_index()


def imputation_reliability_study(
    cfg: SimulationConfig,
    taus: Sequence[float] = DEFAULT_TAUS,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
) -> pd.DataFrame:
    """
    First-component PVE after MAR amputation: complete vs MIPCA vs mean imputation.

    Returns:
        One row per (replicate, tau, alpha) with the realized missing rate
    """
    rows = []
    for r in range(cfg.replicates):
        data = simulate_irt(cfg, replicate=r)
        complete_pve = first_pve(data.matrix)[0]
        for tau in taus:
            for alpha in alphas:
                amputed = ampute_mar(data.matrix, tau=tau, alpha=alpha, seed=cfg.seed + r)
                mipca = mipca_impute(amputed.matrix, seed=cfg.seed + r)
                rows.append({
                    "replicate": r,
                    "tau": tau,
                    "alpha": alpha,
                    "missing_rate": amputed.missing_rate,
                    "pve_complete": complete_pve,
                    "pve_mipca": first_pve(mipca.matrix)[0],
                    "pve_mean": first_pve(mean_impute(amputed.matrix))[0],
                    "mipca_converged": mipca.converged,
                })
    return pd.DataFrame(rows)


def _corr(a: np.ndarray, b: np.ndarray) -> float:
    return float(pearsonr(a, b)[0])


def time_invariance_study(
    cfg: SimulationConfig,
    scenarios: Sequence[str] = ("course_constant_drift", "course_drift_with_shock", "student_constant_drift"),
    rate: float = 0.1,
    shock_term: Optional[int] = 6,
) -> pd.DataFrame:
    """
    Correlation of time-invariant fits with the temporal mean parameters.

    IRT is fitted to binary data and AGM to continuous data.
    """
    model_class = "irt" if cfg.grade_kind == "binary" else "agm"
    rows = []
    for scenario in scenarios:
        drift = DriftConfig(
            scenario=scenario,
            rate=rate,
            shock_term=shock_term if scenario == "course_drift_with_shock" else None,
        )
        for r in range(cfg.replicates):
            data = simulate_drift(cfg, drift, replicate=r)
            model = fit_model(model_class, data.matrix)
            difficulty = unidim_difficulty(model).as_series()
            true_delta = pd.Series(data.delta_mean, index=data.matrix.course_ids)
            true_theta = pd.Series(data.theta_mean, index=data.matrix.student_ids)
            traits = pd.Series(model.primary_traits(), index=model.student_ids)
            rows.append({
                "scenario": scenario,
                "replicate": r,
                "model_class": model_class,
                "course_r": _corr(difficulty.to_numpy(), true_delta.reindex(difficulty.index).to_numpy()),
                "student_r": _corr(traits.to_numpy(), true_theta.reindex(traits.index).to_numpy()),
            })
    return pd.DataFrame(rows)


def drift_trajectories(cfg: SimulationConfig, drift: DriftConfig, replicate: int = 0) -> pd.DataFrame:
    """Long table of per-term true parameters (entity, kind, term, value) for plotting."""
    data = simulate_drift(cfg, drift, replicate=replicate)
    frames = []
    for kind, ids, values in (
        ("course", data.matrix.course_ids, data.delta_by_term),
        ("student", data.matrix.student_ids, data.theta_by_term),
    ):
        wide = pd.DataFrame(values, index=pd.Index(ids, name="entity"))
        long = wide.reset_index().melt(id_vars="entity", var_name="term", value_name="value")
        long.insert(1, "kind", kind)
        frames.append(long)
    return pd.concat(frames, ignore_index=True)


def choice_bias_study(
    cfg: SimulationConfig,
    max_courses_grid: Sequence[int] = DEFAULT_MAX_COURSES,
    p_high: float = config.CHOICE_BIAS_HIGH,
    p_low: float = config.CHOICE_BIAS_LOW,
) -> pd.DataFrame:
    """
    Second-stage regression RMSE and R^2 of AGM and centering under
    course-choice bias, per maximum number of courses per student.
    """
    cfg = cfg.model_copy(update={"grade_kind": "continuous"})
    rows = []
    for max_courses in max_courses_grid:
        for r in range(cfg.replicates):
            data = simulate_choice_bias(max_courses, cfg, replicate=r, p_high=p_high, p_low=p_low)
            m = data.matrix
            for model_class in ("agm", "centering"):
                model = fit_model(model_class, m)
                summary = summarize_scores(regression_validation(model, m, seed=cfg.seed + r))
                rows.append({
                    "max_courses": max_courses,
                    "replicate": r,
                    "model_class": model_class,
                    "mean_courses": float(m.observed.sum(axis=1).mean()),
                    **summary.to_dict(),
                })
        logger.info("Choice-bias setting max_courses=%d done", max_courses)
    return pd.DataFrame(rows)

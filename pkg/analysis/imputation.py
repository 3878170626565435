"""
Imputation of missing grades for PCA.

Mean/median imputation for MCAR data and iterative PCA imputation
(MIPCA-style) for MAR data. Binary matrices use a tetrachoric PCA whose
reconstruction is mapped to pass probabilities through the course
thresholds. Imputed cells are tracked in the matrix's ``imputed`` mask;
observed cells never change.
"""
import logging
from typing import List, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import ndtr, ndtri

import config
from analysis.correlation import correlation_matrix
from analysis.dimensionality import pca_pve
from data.errors import DegenerateDataError
from data.schema import CourseResponseMatrix, GradeScaleSpec

logger = logging.getLogger(__name__)


class ImputationResult(BaseModel):
    """Completed matrix plus convergence bookkeeping."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    matrix: CourseResponseMatrix
    method: Literal["none", "mean", "median", "mipca"]
    n_components: Optional[int] = None
    n_iter: int = 0
    converged: bool = True
    changes: List[float] = Field(default_factory=list)
    probabilities: Optional[pd.DataFrame] = None


def _with_fill(m: CourseResponseMatrix, filled: np.ndarray) -> CourseResponseMatrix:
    missing = np.isnan(m.values)
    frame = pd.DataFrame(filled, index=m.grades.index, columns=m.grades.columns)
    mask = pd.DataFrame(missing | m.imputed_mask(), index=m.grades.index, columns=m.grades.columns)
    return m.replace(grades=frame, imputed=mask)


def _column_fill(m: CourseResponseMatrix, statistic) -> CourseResponseMatrix:
    if m.is_complete:
        return m
    values = m.values
    missing = np.isnan(values)
    empty = [m.course_ids[j] for j in np.flatnonzero(missing.all(axis=0))]
    if empty:
        raise DegenerateDataError(f"Courses without observed grades: {empty}")
    fill = statistic(values, axis=0)
    filled = np.where(missing, fill[None, :], values)
    return _with_fill(m, filled)


def mean_impute(m: CourseResponseMatrix) -> CourseResponseMatrix:
    """Fill each missing grade with its course's observed mean."""
    return _column_fill(m, np.nanmean)


def median_impute(m: CourseResponseMatrix) -> CourseResponseMatrix:
    """Fill each missing grade with its course's observed median."""
    return _column_fill(m, np.nanmedian)


def default_n_components(m: CourseResponseMatrix, variance_threshold: float = 0.5) -> int:
    """Smallest k whose cumulative PVE on the mean-imputed matrix reaches the threshold."""
    pve = pca_pve(correlation_matrix(mean_impute(m)))
    k = int(np.searchsorted(np.asarray(pve.cumulative), variance_threshold - 1e-12) + 1)
    return max(1, min(k, min(m.n_students, m.n_courses) - 1))


def _continuous_step(X: np.ndarray, k: int) -> np.ndarray:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    return ((U[:, :k] * s[:k]) @ Vt[:k]) * sd + mu


def _binary_step(P: np.ndarray, thresholds: np.ndarray, k: int, course_ids: List[str]) -> np.ndarray:
    B = (P >= 0.5).astype(float)
    frame = pd.DataFrame(B, columns=course_ids)
    binary = CourseResponseMatrix(
        grades=frame, scale=GradeScaleSpec(lowest_grade=0, kind="binary")
    )
    R = correlation_matrix(binary, method="tetrachoric").values
    eigvals, eigvecs = np.linalg.eigh(R)
    order = np.argsort(eigvals)[::-1][:k]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    loadings = eigvecs * np.sqrt(eigvals)

    sd = B.std(axis=0)
    sd[sd == 0] = 1.0
    scores = ((B - B.mean(axis=0)) / sd) @ eigvecs
    score_sd = scores.std(axis=0)
    score_sd[score_sd == 0] = 1.0
    scores = (scores - scores.mean(axis=0)) / score_sd

    latent = scores @ loadings.T
    communality = np.clip((loadings ** 2).sum(axis=1), 0.0, 0.999)
    return ndtr((latent - thresholds[None, :]) / np.sqrt(np.maximum(1.0 - communality, 1e-3)))


def mipca_impute(
    m: CourseResponseMatrix,
    n_components: Optional[int] = None,
    tol: float = config.MIPCA_TOL,
    max_iter: int = config.MIPCA_MAX_ITER,
    add_noise: bool = True,
    seed: int = config.RANDOM_SEED,
) -> ImputationResult:
    """
    Iterative PCA imputation.

    Starts from mean imputation and repeatedly reconstructs the matrix
    from its top ``n_components`` principal components, overwriting only
    the missing cells, until the largest relative change of imputed
    cells falls below ``tol``. The final completion draws one stochastic
    fill: residual noise for continuous grades, Bernoulli outcomes from
    the pass probabilities for binary grades. With ``add_noise=False``
    the fill is the reconstruction itself (thresholded at 0.5 for binary).

    Args:
        m: Matrix with missing grades
        n_components: PCA rank; defaults to the smallest k reaching 50% PVE
        tol: Relative change tolerance
        max_iter: Iteration cap
        add_noise: Draw the final fill instead of using the point reconstruction
        seed: Seed for the final draw

    Returns:
        ImputationResult with the completed matrix
    """
    if m.is_complete:
        return ImputationResult(matrix=m, method="none", n_components=n_components, n_iter=1, changes=[0.0])

    X0 = m.values
    missing = np.isnan(X0)
    observed_sd = np.nanstd(X0, axis=0)
    degenerate = [m.course_ids[j] for j in np.flatnonzero(~(observed_sd > 0))]
    if degenerate:
        raise DegenerateDataError(f"Cannot impute constant or empty courses: {degenerate}")

    k = n_components or default_n_components(m)
    if not 1 <= k < min(m.n_students, m.n_courses):
        raise ValueError(f"n_components must lie in [1, {min(m.n_students, m.n_courses) - 1}], got {k}")

    binary = m.scale.kind == "binary"
    X = mean_impute(m).values
    thresholds = None
    if binary:
        pass_rate = np.clip(np.nanmean(X0, axis=0), 1e-3, 1 - 1e-3)
        thresholds = -ndtri(pass_rate)

    previous = X[missing]
    changes: List[float] = []
    converged = False
    for _ in range(max_iter):
        if binary:
            reconstruction = _binary_step(X, thresholds, k, m.course_ids)
        else:
            reconstruction = _continuous_step(X, k)
        current = reconstruction[missing]
        change = float(np.max(np.abs(current - previous)) / max(np.max(np.abs(previous)), 1e-12))
        changes.append(change)
        X[missing] = current
        previous = current
        if change < tol:
            converged = True
            break
    if not converged:
        logger.warning("MIPCA did not converge in %d iterations (last change %.2e)", max_iter, changes[-1])

    rng = np.random.default_rng(seed)
    probabilities = None
    if binary:
        probabilities = pd.DataFrame(
            np.where(missing, X, X0), index=m.grades.index, columns=m.grades.columns
        )
        if add_noise:
            draws = (rng.random(X.shape) < X).astype(float)
        else:
            draws = (X >= 0.5).astype(float)
        X = np.where(missing, draws, X0)
    elif add_noise:
        fitted = _continuous_step(X, k)
        residual_sd = np.array([
            np.std((X0[:, j] - fitted[:, j])[~missing[:, j]]) for j in range(m.n_courses)
        ])
        noise = rng.standard_normal(X.shape) * residual_sd[None, :]
        X = np.where(missing, X + noise, X0)
        if m.scale.direction == "ascending":
            X = np.where(missing, np.maximum(X, m.scale.lowest_grade), X)
    else:
        X = np.where(missing, X, X0)

    return ImputationResult(
        matrix=_with_fill(m, X),
        method="mipca",
        n_components=k,
        n_iter=len(changes),
        converged=converged,
        changes=changes,
        probabilities=probabilities,
    )


def impute(
    m: CourseResponseMatrix,
    mechanism: str,
    n_components: Optional[int] = None,
    tol: float = config.MIPCA_TOL,
    max_iter: int = config.MIPCA_MAX_ITER,
    seed: int = config.RANDOM_SEED,
) -> ImputationResult:
    """Mean imputation under MCAR, MIPCA otherwise; complete matrices pass through."""
    if m.is_complete:
        return ImputationResult(matrix=m, method="none", n_iter=0)
    if mechanism == "MCAR":
        return ImputationResult(matrix=mean_impute(m), method="mean", n_iter=1)
    return mipca_impute(m, n_components=n_components, tol=tol, max_iter=max_iter, seed=seed)

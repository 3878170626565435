"""
Mean-based baselines: course means, GPAs and the centering estimates.
"""
import logging
from typing import Tuple

import numpy as np
import pandas as pd

import config
from data.schema import CourseResponseMatrix
from models.schema import LatentModel

logger = logging.getLogger(__name__)


def heuristic_estimates(m: CourseResponseMatrix) -> Tuple[pd.Series, pd.Series]:
    """
    Course mean grades (pass rates for binary data) and student GPAs.

    Returns:
        Tuple of (course_means, student_gpas)

    Example:
        >>> means, gpas = heuristic_estimates(m)
        >>> means["C01"]
        75.0
    """
    grades = pd.DataFrame(m.observed_values(), index=m.grades.index, columns=m.grades.columns)
    return grades.mean(axis=0, skipna=True), grades.mean(axis=1, skipna=True)


def _gaussian_log_likelihood(residuals: np.ndarray) -> Tuple[float, float]:
    n = residuals.size
    sigma2 = max(float(np.mean(residuals ** 2)), config.SIGMA2_FLOOR)
    return -0.5 * n * (np.log(2 * np.pi) + np.log(sigma2) + 1.0), sigma2


def centering_estimates(m: CourseResponseMatrix) -> LatentModel:
    """
    Centering estimates over observed grades.

    delta_c is the mean of (grade - student GPA) over the course's
    students; theta_s the mean of (grade - course mean) over the
    student's courses. The intercept is the mean observed grade left
    after removing both, so predictions are intercept + theta + delta.
    """
    X = m.observed_values()
    course_means = np.nanmean(X, axis=0)
    gpas = np.nanmean(X, axis=1)
    delta = np.nanmean(X - gpas[:, None], axis=0)
    theta = np.nanmean(X - course_means[None, :], axis=1)

    observed = ~np.isnan(X)
    intercept = float(np.nanmean(X - theta[:, None] - delta[None, :]))
    residuals = (X - intercept - theta[:, None] - delta[None, :])[observed]
    log_likelihood, sigma2 = _gaussian_log_likelihood(residuals)

    return LatentModel(
        model_class="centering",
        n_dim=1,
        student_ids=m.student_ids,
        course_ids=m.course_ids,
        theta=theta[:, None],
        delta=delta[:, None],
        alpha=np.ones((m.n_courses, 1)),
        intercept=intercept,
        sigma2=sigma2,
        log_likelihood=log_likelihood,
        n_params=m.n_students + m.n_courses + 1,
        n_obs=int(observed.sum()),
    )

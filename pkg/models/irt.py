"""
Joint maximum likelihood IRT fits (Rasch, 2PL, multidimensional 2PL).

Pass probability: sigmoid(<alpha_c, theta_s - delta_c>). The penalized
negative log-likelihood over observed cells is minimized with L-BFGS-B
using analytic gradients.
"""
import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

import config
from data.errors import ScaleError
from data.schema import CourseResponseMatrix
from models.schema import LatentModel

logger = logging.getLogger(__name__)


def _unpack(params: np.ndarray, S: int, C: int, n: int, rasch: bool):
    theta = params[: S * n].reshape(S, n)
    delta = params[S * n: S * n + C * n].reshape(C, n)
    alpha = np.ones((C, n)) if rasch else params[S * n + C * n:].reshape(C, n)
    return theta, delta, alpha


def log_likelihood(X: np.ndarray, W: np.ndarray, theta: np.ndarray, delta: np.ndarray, alpha: np.ndarray) -> float:
    """Bernoulli log-likelihood over cells with W == 1 (X filled with 0 elsewhere)."""
    eta = theta @ alpha.T - np.sum(alpha * delta, axis=1)[None, :]
    return float(np.sum(W * (X * eta - np.logaddexp(0.0, eta))))


def irt_objective(
    params: np.ndarray,
    X: np.ndarray,
    W: np.ndarray,
    n_dim: int,
    rasch: bool,
    ridge: float = config.IRT_RIDGE,
    theta_ridge: float = config.IRT_THETA_RIDGE,
) -> Tuple[float, np.ndarray]:
    """
    Penalized negative log-likelihood and its gradient.

    Penalty: theta_ridge * ||theta||^2 + ridge * (||delta||^2 + ||alpha - 1||^2).

    Args:
        params: Flattened (theta, delta[, alpha])
        X: 0/1 outcomes with missing cells set to 0
        W: 1 for observed cells, 0 otherwise
        n_dim: Number of dimensions
        rasch: alpha fixed at 1 when True

    Returns:
        (objective, gradient)
    """
    S, C = X.shape
    theta, delta, alpha = _unpack(params, S, C, n_dim, rasch)
    eta = theta @ alpha.T - np.sum(alpha * delta, axis=1)[None, :]
    ll = np.sum(W * (X * eta - np.logaddexp(0.0, eta)))
    residual = W * (X - expit(eta))
    column = residual.sum(axis=0)

    grad_theta = residual @ alpha
    grad_delta = -alpha * column[:, None]
    value = -ll + theta_ridge * np.sum(theta ** 2) + ridge * np.sum(delta ** 2)
    parts = [
        -grad_theta + 2.0 * theta_ridge * theta,
        -grad_delta + 2.0 * ridge * delta,
    ]
    if not rasch:
        grad_alpha = residual.T @ theta - delta * column[:, None]
        value += ridge * np.sum((alpha - 1.0) ** 2)
        parts.append(-grad_alpha + 2.0 * ridge * (alpha - 1.0))
    return float(value), np.concatenate([p.ravel() for p in parts])


def _initial_values(X: np.ndarray, W: np.ndarray, n_dim: int, rasch: bool) -> np.ndarray:
    S, C = X.shape
    student_rate = (np.sum(W * X, axis=1) + 0.5) / (W.sum(axis=1) + 1.0)
    course_rate = (np.sum(W * X, axis=0) + 0.5) / (W.sum(axis=0) + 1.0)
    theta0 = logit(student_rate)
    theta0 = theta0 - theta0.mean()
    b0 = -logit(course_rate)

    if rasch:
        return np.concatenate([theta0, b0])

    filled = np.where(W > 0, X, course_rate[None, :])
    Z = (filled - filled.mean(axis=0)) / np.where(filled.std(axis=0) > 0, filled.std(axis=0), 1.0)
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    theta = U[:, :n_dim] * np.sqrt(S)
    alpha = 1.7 * Vt[:n_dim].T * s[:n_dim] / np.sqrt(S)
    flip = np.where(alpha.sum(axis=0) < 0, -1.0, 1.0)
    theta, alpha = theta * flip, alpha * flip
    norms = np.sum(alpha ** 2, axis=1)
    norms[norms == 0] = 1.0
    delta = b0[:, None] * alpha / norms[:, None]
    return np.concatenate([theta.ravel(), delta.ravel(), alpha.ravel()])


def _identify(theta: np.ndarray, delta: np.ndarray, alpha: np.ndarray, rasch: bool):
    """Mean-zero traits; unit (n=1) or whitened (n>1) trait covariance, then rotation."""
    mean = theta.mean(axis=0)
    theta = theta - mean
    delta = delta - mean[None, :]
    if rasch:
        return theta, delta, alpha

    cov = theta.T @ theta / theta.shape[0]
    L = np.linalg.cholesky(cov + 1e-12 * np.eye(cov.shape[0]))
    L_inv = np.linalg.inv(L)
    theta = theta @ L_inv.T
    delta = delta @ L_inv.T
    alpha = alpha @ L

    n = alpha.shape[1]
    if n > 1:
        Q, _ = np.linalg.qr(alpha[:n].T)
        theta, delta, alpha = theta @ Q, delta @ Q, alpha @ Q
    signs = np.sign(np.diag(alpha[: min(n, alpha.shape[0])]))
    signs[signs == 0] = 1.0
    return theta * signs, delta * signs, alpha * signs


def fit_irt(
    m: CourseResponseMatrix,
    n_dim: int = 1,
    discrimination: Optional[bool] = None,
    ridge: float = config.IRT_RIDGE,
    theta_ridge: float = config.IRT_THETA_RIDGE,
    tol: float = config.IRT_GRADIENT_TOL,
    max_epochs: int = config.IRT_MAX_EPOCHS,
    degenerate_policy: str = config.DEGENERATE_POLICY,
) -> LatentModel:
    """
    Fit a Rasch (n_dim=1) or 2PL / multidimensional 2PL model.

    Courses whose observed outcomes are all identical are excluded
    (``degenerate_policy="exclude"``) or kept and held finite by the
    ridge penalty (``"penalize"``); both cases are recorded as warnings.

    Args:
        m: Binary grade matrix
        n_dim: Latent dimensions
        discrimination: Fit course discriminations (forced for n_dim > 1)
        ridge: Penalty on delta and alpha - 1
        theta_ridge: Penalty on theta
        tol: Projected gradient tolerance
        max_epochs: L-BFGS-B iteration cap
        degenerate_policy: "exclude" or "penalize"

    Returns:
        LatentModel with class ``irt``
    """
    if m.scale.kind != "binary":
        raise ScaleError("IRT needs pass/fail grades; binarize the matrix first")
    if degenerate_policy not in ("exclude", "penalize"):
        raise ValueError(f"Unknown degenerate policy: {degenerate_policy}")
    if not 1 <= n_dim < min(m.n_students, m.n_courses):
        raise ValueError(f"n_dim must lie in [1, {min(m.n_students, m.n_courses) - 1}]")
    rasch = not (discrimination or n_dim > 1)

    values = m.observed_values()
    courses = m.course_ids
    warnings: List[str] = []
    excluded: List[str] = []

    outcome_counts = [np.unique(values[~np.isnan(values[:, j]), j]).size for j in range(len(courses))]
    degenerate = sorted(set(m.degenerate_courses) | {c for c, k in zip(courses, outcome_counts) if k < 2})
    if degenerate:
        if degenerate_policy == "exclude":
            excluded = degenerate
            warnings.append(f"Degenerate courses excluded: {degenerate}")
        else:
            warnings.append(f"Degenerate courses kept under ridge penalty: {degenerate}")
        logger.warning(warnings[-1])

    keep = [j for j, c in enumerate(courses) if c not in set(excluded)]
    values = values[:, keep]
    courses = [courses[j] for j in keep]
    W = (~np.isnan(values)).astype(float)
    rows = W.sum(axis=1) > 0
    if not rows.all():
        warnings.append(f"{int((~rows).sum())} students without grades in fitted courses dropped")
    values, W = values[rows], W[rows]
    students = [s for s, r in zip(m.student_ids, rows) if r]
    X = np.where(W > 0, values, 0.0)

    small = [c for c, n in zip(courses, W.sum(axis=0)) if n < config.MIN_STUDENTS_PER_COURSE]
    if small:
        warnings.append(
            f"Courses with fewer than {config.MIN_STUDENTS_PER_COURSE} students: {small}"
        )
        logger.warning(warnings[-1])

    S, C = X.shape
    result = minimize(
        irt_objective,
        _initial_values(X, W, n_dim, rasch),
        args=(X, W, n_dim, rasch, ridge, theta_ridge),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_epochs, "gtol": tol, "ftol": 1e-12, "maxfun": 4 * max_epochs},
    )
    if not result.success:
        message = f"IRT fit did not converge after {result.nit} iterations: {result.message}"
        logger.warning(message)
        warnings.append(message)

    theta, delta, alpha = _unpack(result.x, S, C, n_dim, rasch)
    theta, delta, alpha = _identify(theta, delta, alpha, rasch)

    n_params = S * n_dim + C * n_dim + (0 if rasch else C * n_dim)
    ll = log_likelihood(X, W, theta, delta, alpha)
    logger.info("IRT %s %d-dim: logL=%.2f after %d iterations",
                "Rasch" if rasch else "2PL", n_dim, ll, result.nit)
    return LatentModel(
        model_class="irt",
        n_dim=n_dim,
        student_ids=students,
        course_ids=courses,
        theta=theta,
        delta=delta,
        alpha=alpha,
        log_likelihood=ll,
        n_params=n_params,
        n_obs=int(W.sum()),
        discrimination=not rasch,
        converged=bool(result.success),
        n_iter=int(result.nit),
        excluded_courses=excluded,
        warnings=warnings,
    )

"""
Additive grade models (AGM).

One dimension: g_sc = theta_s + delta_c, solved as a sparse least
squares problem over observed cells. n dimensions:
g_sc = <alpha_c, theta_s + delta_c>, fitted by alternating least
squares with trait whitening after every sweep.
"""
import logging
from typing import List, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import lsqr

import config
from data.errors import IdentifiabilityError, ScaleError
from data.schema import CourseResponseMatrix
from models.schema import LatentModel

logger = logging.getLogger(__name__)

_RIDGE = 1e-10


def check_connected(m: CourseResponseMatrix) -> None:
    """Raise IdentifiabilityError if the student-course graph is disconnected."""
    observed = ~np.isnan(m.observed_values())
    S, C = observed.shape
    rows, cols = np.nonzero(observed)
    graph = coo_matrix((np.ones(rows.size), (rows, S + cols)), shape=(S + C, S + C))
    n_components, labels = connected_components(graph, directed=False)
    if n_components == 1:
        return
    names = m.student_ids + m.course_ids
    components = [[names[i] for i in np.flatnonzero(labels == k)] for k in range(n_components)]
    raise IdentifiabilityError(components)


def _log_likelihood(residuals: np.ndarray) -> Tuple[float, float]:
    sigma2 = max(float(np.mean(residuals ** 2)), config.SIGMA2_FLOOR)
    n = residuals.size
    return -0.5 * n * (np.log(2 * np.pi) + np.log(sigma2) + 1.0), sigma2


def _fit_additive(X: np.ndarray, observed: np.ndarray) -> Tuple[np.ndarray, np.ndarray, int]:
    S, C = X.shape
    rows, cols = np.nonzero(observed)
    k = np.arange(rows.size)
    design = coo_matrix(
        (np.ones(2 * rows.size), (np.concatenate([k, k]), np.concatenate([rows, S + cols]))),
        shape=(rows.size, S + C),
    ).tocsr()
    solution = lsqr(design, X[rows, cols], atol=1e-14, btol=1e-14, iter_lim=20 * (S + C))
    x, n_iter = solution[0], solution[2]
    theta, delta = x[:S], x[S:]
    shift = theta.mean()
    return theta - shift, delta + shift, int(n_iter)


def _weighted_solve(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    eye = np.eye(gram.shape[-1])
    return np.linalg.solve(gram + _RIDGE * eye, rhs[..., None])[..., 0]


def _whiten(theta: np.ndarray, alpha: np.ndarray, b: np.ndarray):
    mean = theta.mean(axis=0)
    b = b + alpha @ mean
    theta = theta - mean
    cov = theta.T @ theta / theta.shape[0]
    L = np.linalg.cholesky(cov + _RIDGE * np.eye(cov.shape[0]))
    return theta @ np.linalg.inv(L).T, alpha @ L, b


def _rotate(theta: np.ndarray, alpha: np.ndarray):
    """Rotate so the leading alpha block is lower triangular with a positive diagonal."""
    n = alpha.shape[1]
    Q, _ = np.linalg.qr(alpha[:n].T)
    alpha, theta = alpha @ Q, theta @ Q
    signs = np.sign(np.diag(alpha[:n]))
    signs[signs == 0] = 1.0
    return theta * signs, alpha * signs


def _fit_multidim(
    X: np.ndarray, observed: np.ndarray, n_dim: int, tol: float, max_iter: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, List[float], bool]:
    W = observed.astype(float)
    Xf = np.where(observed, X, 0.0)
    S, C = X.shape

    filled = np.where(observed, X, np.nanmean(X, axis=0)[None, :])
    U, _, _ = np.linalg.svd(filled - filled.mean(axis=0), full_matrices=False)
    theta = U[:, :n_dim] * np.sqrt(S)
    alpha = np.zeros((C, n_dim))
    b = np.zeros(C)

    trace: List[float] = []
    converged = False
    for _ in range(max_iter):
        # course step: [alpha_c, b_c] from regressing observed grades on [theta, 1]
        Z = np.hstack([theta, np.ones((S, 1))])
        gram = np.einsum("sc,si,sj->cij", W, Z, Z)
        coef = _weighted_solve(gram, Xf.T @ Z)
        alpha, b = coef[:, :n_dim], coef[:, n_dim]

        # student step
        gram = np.einsum("sc,ci,cj->sij", W, alpha, alpha)
        theta = _weighted_solve(gram, (W * (Xf - b[None, :])) @ alpha)

        theta, alpha, b = _whiten(theta, alpha, b)
        residual = W * (Xf - theta @ alpha.T - b[None, :])
        objective = float(np.sum(residual ** 2))
        trace.append(objective)
        if len(trace) > 1 and trace[-2] - objective <= tol * max(trace[-2], 1e-12):
            converged = True
            break
    theta, alpha = _rotate(theta, alpha)
    return theta, alpha, b, trace, converged


def fit_agm(
    m: CourseResponseMatrix,
    n_dim: int = 1,
    tol: float = config.AGM_TOL,
    max_iter: int = config.AGM_MAX_ITER,
) -> LatentModel:
    """
    Fit an additive grade model on observed grades.

    Args:
        m: Continuous (or ordinal treated as continuous) grade matrix
        n_dim: Number of latent dimensions
        tol: Relative objective change that stops the sweeps
        max_iter: Maximum alternating sweeps (n_dim > 1)

    Returns:
        LatentModel with class ``agm``

    Example:
        >>> model = fit_agm(m)
        >>> model.theta[:, 0].mean()
        0.0
    """
    if m.scale.kind == "binary":
        raise ScaleError("AGM needs continuous grades; use fit_irt for pass/fail data")
    if not 1 <= n_dim < min(m.n_students, m.n_courses):
        raise ValueError(f"n_dim must lie in [1, {min(m.n_students, m.n_courses) - 1}]")
    check_connected(m)

    X = m.observed_values()
    observed = ~np.isnan(X)
    S, C = X.shape
    warnings: List[str] = []

    if n_dim == 1:
        theta, delta, n_iter = _fit_additive(X, observed)
        theta, delta, alpha = theta[:, None], delta[:, None], np.ones((C, 1))
        trace, converged = [], True
        n_params = S + C + 1
    else:
        theta, alpha, b, trace, converged = _fit_multidim(X, observed, n_dim, tol, max_iter)
        norms = np.sum(alpha ** 2, axis=1)
        delta = np.where(norms[:, None] > 0, b[:, None] * alpha / np.where(norms > 0, norms, 1.0)[:, None], 0.0)
        n_iter = len(trace)
        n_params = S * n_dim + 2 * C * n_dim + 1
        if not converged:
            message = f"AGM {n_dim}-dim did not converge in {max_iter} sweeps"
            logger.warning(message)
            warnings.append(message)

    prediction = theta @ alpha.T + np.sum(alpha * delta, axis=1)[None, :]
    log_likelihood, sigma2 = _log_likelihood((X - prediction)[observed])
    logger.info("AGM %d-dim: logL=%.2f, sigma2=%.4g", n_dim, log_likelihood, sigma2)

    return LatentModel(
        model_class="agm",
        n_dim=n_dim,
        student_ids=m.student_ids,
        course_ids=m.course_ids,
        theta=theta,
        delta=delta,
        alpha=alpha,
        sigma2=sigma2,
        log_likelihood=log_likelihood,
        n_params=n_params,
        n_obs=int(observed.sum()),
        discrimination=n_dim > 1,
        converged=converged,
        n_iter=n_iter,
        objective_trace=trace,
        warnings=warnings,
    )

"""
Difficulty projection, pass probabilities, BIC and dimension selection.
"""
import logging
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from scipy.optimize import minimize
from scipy.special import expit, logsumexp

import config
from data.schema import CourseResponseMatrix
from models.agm import fit_agm
from models.heuristics import centering_estimates
from models.irt import fit_irt
from models.schema import DifficultyEstimates, DifficultyRow, LatentModel

logger = logging.getLogger(__name__)

_QUADRATURE_POINTS = {1: 41, 2: 21}


def fit_model(model_class: str, m: CourseResponseMatrix, n_dim: int = 1, **kwargs) -> LatentModel:
    """Fit one model of the given class ("centering", "agm" or "irt")."""
    if model_class == "centering":
        return centering_estimates(m)
    if model_class == "agm":
        return fit_agm(m, n_dim=n_dim, **kwargs)
    if model_class == "irt":
        return fit_irt(m, n_dim=n_dim, **kwargs)
    raise ValueError(f"Unknown model class: {model_class}")


def pass_probability(model: LatentModel, student_id: str, course_id: str) -> float:
    """
    sigmoid(<alpha_c, theta_s - delta_c>) for one student and course.

    Example:
        >>> pass_probability(model, "S0001", "C01")
        0.73
    """
    if model.model_class != "irt":
        raise ValueError("Pass probabilities are defined for IRT models only")
    s = model.student_index(student_id)
    c = model.course_index(course_id)
    return float(expit(model.alpha[c] @ (model.theta[s] - model.delta[c])))


def unidim_difficulty(model: LatentModel, n_students: Optional[Dict[str, int]] = None) -> DifficultyEstimates:
    """
    Scalar difficulty per course: <alpha_c, delta_c> / ||alpha_c||.

    Centering and AGM place difficulty on the grade side of the
    predictor, so their projection is negated; ``raw`` keeps the
    unflipped value. Courses with a zero discrimination vector get no
    difficulty and are flagged.
    """
    norms = np.linalg.norm(model.alpha, axis=1)
    raw = np.where(norms > 0, model.course_locations() / np.where(norms > 0, norms, 1.0), np.nan)
    sign = 1.0 if model.model_class == "irt" else -1.0

    rows = []
    for j, course in enumerate(model.course_ids):
        defined = bool(np.isfinite(raw[j]))
        if not defined:
            logger.warning("Course %s has zero discrimination; difficulty undefined", course)
        rows.append(DifficultyRow(
            course_id=course,
            difficulty=float(sign * raw[j]) if defined else None,
            raw=float(raw[j]) if defined else None,
            n_students=(n_students or {}).get(course),
            flagged=not defined,
        ))
    return DifficultyEstimates(model_class=model.model_class, n_dim=model.n_dim, rows=rows)


def bic(model: LatentModel, m: CourseResponseMatrix) -> float:
    """BIC = k ln(S) - 2 ln(L) with the model's joint likelihood. Lower is better."""
    return float(model.n_params * np.log(m.n_students) - 2.0 * model.log_likelihood)


def _quadrature(n_dim: int):
    points, weights = np.polynomial.hermite_e.hermegauss(_QUADRATURE_POINTS[n_dim])
    weights = weights / weights.sum()
    if n_dim == 1:
        return points[:, None], np.log(weights)
    grid = np.stack(np.meshgrid(points, points, indexing="ij"), axis=-1).reshape(-1, 2)
    w = np.outer(weights, weights).ravel()
    return grid, np.log(w)


class MarginalIrtFit(BaseModel):
    """Course parameters estimated with standard normal traits integrated out."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    log_likelihood: float
    loadings: np.ndarray    # courses x dim
    intercepts: np.ndarray  # courses
    n_params: int
    n_iter: int
    converged: bool


def _posterior(nodes, log_w, X, W, loadings, intercepts):
    """Per-student posterior weights over the nodes and the marginal log-likelihood."""
    eta = nodes @ loadings.T - intercepts[None, :]          # Q x C
    log_p = -np.logaddexp(0.0, -eta)
    log_q = -np.logaddexp(0.0, eta)
    joint = X @ log_p.T + (W - X) @ log_q.T + log_w[None, :]  # S x Q
    norm = logsumexp(joint, axis=1, keepdims=True)
    return np.exp(joint - norm), float(norm.sum())


def _unpack(params: np.ndarray, n_courses: int, n_dim: int, rasch: bool):
    if rasch:
        return np.full((n_courses, 1), params[0]), params[1:]
    return params[:n_courses * n_dim].reshape(n_courses, n_dim), params[n_courses * n_dim:]


def _expected_nll(params, nodes, passes, trials, rasch, ridge):
    """Expected complete-data negative log-likelihood and its gradient."""
    C = passes.shape[1]
    loadings, intercepts = _unpack(params, C, nodes.shape[1], rasch)
    eta = nodes @ loadings.T - intercepts[None, :]
    nll = -np.sum(passes * -np.logaddexp(0.0, -eta) + (trials - passes) * -np.logaddexp(0.0, eta))
    nll += 0.5 * ridge * float(params @ params)

    G = trials * expit(eta) - passes                        # Q x C
    grad_loadings = G.T @ nodes
    grad = np.concatenate([
        [grad_loadings.sum()] if rasch else grad_loadings.ravel(),
        -G.sum(axis=0),
    ])
    return nll, grad + ridge * params


def fit_marginal_irt(
    model: LatentModel,
    m: CourseResponseMatrix,
    tol: float = config.MARGINAL_EM_TOL,
    max_iter: int = config.MARGINAL_EM_MAX_ITER,
    ridge: float = config.IRT_RIDGE,
) -> MarginalIrtFit:
    """
    Marginal maximum likelihood for an IRT model by EM over a Gauss-Hermite grid.

    Traits are standard normal. The E-step turns each student's grades
    into posterior weights over the grid nodes; the M-step refits every
    course's loadings and intercept to the expected pass and trial counts
    at the nodes. Rasch models share a single loading (the trait scale).
    The joint fit only provides starting values.

    Args:
        model: Fitted IRT model (its courses and dimensionality are used)
        m: Pass/fail matrix
        tol: Relative change in log-likelihood that stops the iteration
        max_iter: Maximum number of EM iterations

    Returns:
        MarginalIrtFit with the marginal log-likelihood at the estimate

    Example:
        >>> fit = fit_marginal_irt(fit_irt(m), m)
        >>> fit.n_params
        11
    """
    if model.model_class != "irt":
        raise ValueError("Marginal likelihood applies to IRT models only")
    if model.n_dim not in _QUADRATURE_POINTS:
        raise ValueError(f"Marginal likelihood supports up to {max(_QUADRATURE_POINTS)} dimensions")
    values = m.observed_values()[:, [m.course_ids.index(c) for c in model.course_ids]]
    W = (~np.isnan(values)).astype(float)
    X = np.where(W > 0, values, 0.0)
    nodes, log_w = _quadrature(model.n_dim)
    C, n = len(model.course_ids), model.n_dim
    rasch = not model.discrimination and n == 1

    # theta = mean + sd * z moves the trait location into the intercepts
    mean, sd = model.theta.mean(axis=0), np.maximum(model.theta.std(axis=0), 0.1)
    intercepts = model.course_locations() - model.alpha @ mean
    if rasch:
        params = np.concatenate([[sd[0]], intercepts])
    else:
        params = np.concatenate([(model.alpha * sd).ravel(), intercepts])

    previous, converged = -np.inf, False
    for n_iter in range(1, max_iter + 1):
        post, ll = _posterior(nodes, log_w, X, W, *_unpack(params, C, n, rasch))
        if ll - previous < tol * abs(ll):
            converged = True
            break
        previous = ll
        result = minimize(
            _expected_nll, params, jac=True, method="L-BFGS-B",
            args=(nodes, post.T @ X, post.T @ W, rasch, ridge),
        )
        params = result.x
    else:
        ll = _posterior(nodes, log_w, X, W, *_unpack(params, C, n, rasch))[1]
        logger.warning("Marginal EM stopped after %d iterations", max_iter)

    loadings, intercepts = _unpack(params, C, n, rasch)
    logger.debug("Marginal EM (%d-dim) finished in %d iterations, ll=%.2f", n, n_iter, ll)
    return MarginalIrtFit(
        log_likelihood=ll, loadings=loadings, intercepts=intercepts,
        n_params=marginal_n_params(model), n_iter=n_iter, converged=converged,
    )


def marginal_irt_log_likelihood(model: LatentModel, m: CourseResponseMatrix) -> float:
    """Log-likelihood of the observed pass/fail grades at the marginal estimate."""
    return fit_marginal_irt(model, m).log_likelihood


def marginal_n_params(model: LatentModel) -> int:
    """
    Free parameters of the marginal model: one intercept per course plus
    loadings (a single trait scale for Rasch), less rotational freedom.
    """
    n, C = model.n_dim, len(model.course_ids)
    if not model.discrimination and n == 1:
        return C + 1
    return C + C * n - n * (n - 1) // 2


class BicRow(BaseModel):
    n_dim: int
    log_likelihood: float
    n_params: int
    bic: float
    likelihood: str
    converged: bool


class SelectionResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    model_class: str
    table: List[BicRow]
    best: LatentModel
    models: Dict[int, LatentModel]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in self.table])


def select_dimension(
    m: CourseResponseMatrix,
    model_class: str,
    max_dim: int = config.MAX_DIMENSIONS,
    likelihood: str = config.IRT_BIC_LIKELIHOOD,
    **fit_kwargs,
) -> SelectionResult:
    """
    Fit 1..max_dim dimensions of one model class and keep the lowest BIC.

    BIC is only compared within a class. IRT candidates use the marginal
    likelihood unless ``likelihood="joint"``; one-dimensional IRT
    candidates are Rasch, higher ones 2PL.

    Args:
        m: Matrix the candidates are fitted on
        model_class: "agm" or "irt" (centering has a single dimension)
        max_dim: Largest dimension tried
        likelihood: "marginal" or "joint" (IRT only)

    Returns:
        SelectionResult with the BIC table and the winning model
    """
    if likelihood not in ("marginal", "joint"):
        raise ValueError(f"Unknown likelihood: {likelihood}")
    if model_class == "centering":
        max_dim = 1
    max_dim = max(1, min(max_dim, min(m.n_students, m.n_courses) - 1))
    if model_class == "irt" and likelihood == "marginal":
        max_dim = min(max_dim, max(_QUADRATURE_POINTS))

    rows: List[BicRow] = []
    models: Dict[int, LatentModel] = {}
    for n_dim in range(1, max_dim + 1):
        model = fit_model(model_class, m, n_dim=n_dim, **fit_kwargs)
        models[n_dim] = model
        if model_class == "irt" and likelihood == "marginal":
            marginal = fit_marginal_irt(model, m)
            ll, k, kind = marginal.log_likelihood, marginal.n_params, "marginal"
        else:
            ll, k, kind = model.log_likelihood, model.n_params, "joint"
        score = float(k * np.log(m.n_students) - 2.0 * ll)
        rows.append(BicRow(
            n_dim=n_dim, log_likelihood=ll, n_params=k, bic=score,
            likelihood=kind, converged=model.converged,
        ))
        logger.info("%s %d-dim: BIC=%.2f (%s)", model_class, n_dim, score, kind)

    best_dim = min(rows, key=lambda r: r.bic).n_dim
    return SelectionResult(model_class=model_class, table=rows, best=models[best_dim], models=models)

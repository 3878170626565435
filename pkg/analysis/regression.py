"""
Logistic and linear regression helpers built on statsmodels.

Used by the MAR missingness regressions and the DCF second-stage fits.
Logistic fits that run into (quasi-)separation fall back to a
ridge-stabilized fit with Wald statistics from the penalized information.
"""
import logging
import warnings
from typing import Dict, Optional

import numpy as np
import pandas as pd
import statsmodels.api as sm
from pydantic import BaseModel
from scipy.optimize import minimize
from scipy.special import expit
from scipy.stats import norm
from statsmodels.tools.sm_exceptions import PerfectSeparationError

import config

logger = logging.getLogger(__name__)


class RegressionFit(BaseModel):
    """Coefficients, Wald p-values and log-likelihoods of a fitted regression."""
    params: Dict[str, float]
    bse: Dict[str, float]
    pvalues: Dict[str, float]
    llf: float
    llnull: float
    n_obs: int
    separated: bool = False
    converged: bool = True

    @property
    def pseudo_r2(self) -> float:
        """McFadden pseudo R-squared, clipped to [0, 1)."""
        if self.llnull == 0:
            return 0.0
        return float(min(max(1.0 - self.llf / self.llnull, 0.0), 1.0 - 1e-12))


def has_group_separation(y: np.ndarray, column: np.ndarray) -> bool:
    """True if the outcome is constant within any level of a categorical column."""
    for level in np.unique(column):
        outcome = y[column == level]
        if outcome.size and np.unique(outcome).size == 1:
            return True
    return False


def _design(exog: pd.DataFrame) -> pd.DataFrame:
    return sm.add_constant(exog, has_constant="add")


def _ridge_logistic(
    y: np.ndarray, X: pd.DataFrame, offset: np.ndarray, ridge: float
) -> RegressionFit:
    """Penalized logistic fit: maximize loglik - n * ridge / 2 * ||b||^2."""
    A = X.to_numpy(dtype=float)
    n = len(y)

    def objective(beta):
        eta = A @ beta + offset
        ll = np.sum(y * eta - np.logaddexp(0.0, eta))
        grad = A.T @ (y - expit(eta))
        return -ll + 0.5 * n * ridge * beta @ beta, -grad + n * ridge * beta

    result = minimize(objective, np.zeros(A.shape[1]), jac=True, method="L-BFGS-B")
    beta = result.x
    p = expit(A @ beta + offset)
    info = A.T @ (A * (p * (1.0 - p))[:, None]) + n * ridge * np.eye(A.shape[1])
    bse = np.sqrt(np.clip(np.diag(np.linalg.inv(info)), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        pvalues = 2.0 * norm.sf(np.abs(beta / bse))

    eta = A @ beta + offset
    llf = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    null = sm.GLM(y, np.ones((n, 1)), family=sm.families.Binomial(), offset=offset).fit()
    names = list(X.columns)
    return RegressionFit(
        params=dict(zip(names, beta.tolist())),
        bse=dict(zip(names, bse.tolist())),
        pvalues=dict(zip(names, pvalues.tolist())),
        llf=llf,
        llnull=float(null.llf),
        n_obs=n,
        separated=True,
        converged=bool(result.success),
    )


def fit_logistic(
    y: np.ndarray,
    exog: pd.DataFrame,
    offset: Optional[np.ndarray] = None,
    ridge: float = config.REGRESSION_RIDGE,
    force_ridge: bool = False,
) -> RegressionFit:
    """
    Fit a logistic regression with intercept by IRLS (statsmodels GLM).

    Args:
        y: 0/1 outcome
        exog: Predictors (an intercept column ``const`` is added)
        offset: Fixed per-row addition to the linear predictor
        ridge: Penalty used when separation is detected
        force_ridge: Skip the plain fit (caller already knows it separates)

    Returns:
        RegressionFit with Wald p-values
    """
    y = np.asarray(y, dtype=float)
    X = _design(exog)
    offset = np.zeros(len(y)) if offset is None else np.asarray(offset, dtype=float)

    if not force_ridge:
        separated = False
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                result = sm.GLM(y, X, family=sm.families.Binomial(), offset=offset).fit()
            except PerfectSeparationError:
                separated = True
                result = None
        if any("Separation" in w.category.__name__ for w in caught):
            separated = True
        if result is not None and not separated and np.all(np.isfinite(result.bse)):
            return RegressionFit(
                params={k: float(v) for k, v in result.params.items()},
                bse={k: float(v) for k, v in result.bse.items()},
                pvalues={k: float(v) for k, v in result.pvalues.items()},
                llf=float(result.llf),
                llnull=float(result.llnull),
                n_obs=len(y),
                converged=bool(result.converged),
            )

    logger.warning("Separation in logistic fit (n=%d); using ridge %g", len(y), ridge)
    return _ridge_logistic(y, X, offset, ridge)


def fit_linear(
    y: np.ndarray, exog: pd.DataFrame, offset: Optional[np.ndarray] = None
) -> RegressionFit:
    """Ordinary least squares of ``y - offset`` on ``exog`` plus intercept."""
    y = np.asarray(y, dtype=float)
    target = y if offset is None else y - np.asarray(offset, dtype=float)
    X = _design(exog)
    result = sm.OLS(target, X).fit()
    null = sm.OLS(target, np.ones((len(y), 1))).fit()
    return RegressionFit(
        params={k: float(v) for k, v in result.params.items()},
        bse={k: float(v) for k, v in result.bse.items()},
        pvalues={k: float(v) for k, v in result.pvalues.items()},
        llf=float(result.llf),
        llnull=float(null.llf),
        n_obs=len(y),
    )

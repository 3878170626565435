"""
PCA-based upper bound on the number of latent dimensions.
"""
import logging
from typing import List, Union

import numpy as np
from pydantic import BaseModel

import config

logger = logging.getLogger(__name__)


class PveResult(BaseModel):
    """Eigenvalues and proportion of variance explained, largest first."""
    eigenvalues: List[float]
    pve: List[float]
    cumulative: List[float]
    suggested_upper_bound: int
    k_threshold: int
    k_elbow: int


def _k_threshold(cumulative: np.ndarray, variance_threshold: float) -> int:
    return int(np.searchsorted(cumulative, variance_threshold - 1e-12) + 1)


def _k_elbow(eigenvalues: np.ndarray) -> int:
    """Position before the sharpest bend of the log scree curve."""
    if eigenvalues.size < 3:
        return 1
    # elbow read on the log scree: the largest second difference marks the bend,
    # and the bound is the component just before it
    logs = np.log(np.maximum(eigenvalues, 1e-12))
    bends = logs[:-2] - 2.0 * logs[1:-1] + logs[2:]  # second difference at i = 2..C-1
    return int(np.argmax(bends) + 2) - 1


def _bound(k_threshold: int, k_elbow: int, n_components: int) -> int:
    return int(np.clip(max(k_threshold, k_elbow), 1, max(1, n_components - 1)))


def pca_pve(corr, variance_threshold: float = config.VARIANCE_THRESHOLD) -> PveResult:
    """
    Eigen-decomposition of a correlation matrix.

    Args:
        corr: CorrelationMatrix or square array
        variance_threshold: Cumulative PVE used for the suggested bound

    Returns:
        PveResult with the suggested dimension upper bound

    Example:
        >>> pca_pve(np.array([[1.0, 0.6], [0.6, 1.0]])).pve
        [0.8, 0.2]
    """
    values = np.asarray(getattr(corr, "values", corr), dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError("Correlation matrix must be square")
    if not np.allclose(values, values.T, atol=1e-10):
        raise ValueError("Correlation matrix must be symmetric")

    eigenvalues = np.sort(np.linalg.eigvalsh(values))[::-1]
    eigenvalues = np.where(eigenvalues < 0, 0.0, eigenvalues)
    pve = eigenvalues / eigenvalues.sum()
    cumulative = np.minimum(np.cumsum(pve), 1.0)

    k_thr = _k_threshold(cumulative, variance_threshold)
    k_elb = _k_elbow(eigenvalues)
    return PveResult(
        eigenvalues=eigenvalues.tolist(),
        pve=pve.tolist(),
        cumulative=cumulative.tolist(),
        suggested_upper_bound=_bound(k_thr, k_elb, eigenvalues.size),
        k_threshold=k_thr,
        k_elbow=k_elb,
    )


def dim_upper_bound(pve: Union[PveResult, List[float]], variance_threshold: float = config.VARIANCE_THRESHOLD) -> int:
    """
    Upper bound on the latent dimension handed to BIC selection.

    The larger of the cumulative-PVE rule and the scree elbow, clipped
    to [1, C - 1].

    Example:
        >>> dim_upper_bound([0.1] * 10)
        5
    """
    shares = np.asarray(pve.pve if isinstance(pve, PveResult) else pve, dtype=float)
    cumulative = np.cumsum(shares)
    bound = _bound(_k_threshold(cumulative, variance_threshold), _k_elbow(shares), shares.size)
    logger.debug("Dimension upper bound %d (threshold %.2f)", bound, variance_threshold)
    return bound

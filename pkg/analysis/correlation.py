"""
Correlation kernels for PCA on grade matrices.

Pearson correlation for continuous grades, tetrachoric correlation for
pass/fail grades, and the bivariate normal CDF the latter needs.
"""
import logging
from typing import List, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from scipy.optimize import minimize_scalar
from scipy.special import ndtr, ndtri

import config
from data.errors import DegenerateDataError
from data.schema import CourseResponseMatrix

logger = logging.getLogger(__name__)

# Gauss-Legendre half-rules (weights, abscissae) for n = 6, 12, 20
_GL6 = (
    np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
    np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970]),
)
_GL12 = (
    np.array([0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
              0.2031674267230659, 0.2334925365383547, 0.2491470458134029]),
    np.array([0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
              0.5873179542866171, 0.3678314989981802, 0.1252334085114692]),
)
_GL20 = (
    np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
              0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
              0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
              0.1527533871307259]),
    np.array([0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
              0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
              0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
              0.07652652113349733]),
)


class CorrelationMatrix(BaseModel):
    """Course × course correlation matrix."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    course_ids: List[str]
    values: np.ndarray
    method: Literal["pearson", "tetrachoric"]
    repaired: bool = False

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=self.course_ids, columns=self.course_ids)


def _upper_bvn(h: float, k: float, r: float) -> float:
    """P(X > h, Y > k) for a standard bivariate normal with correlation r."""
    if abs(r) < 0.3:
        w, x = _GL6
    elif abs(r) < 0.75:
        w, x = _GL12
    else:
        w, x = _GL20

    hk = h * k
    bvn = 0.0
    if abs(r) < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = np.arcsin(r)
        for sign in (-1.0, 1.0):
            sn = np.sin(asr * (1.0 + sign * x) / 2.0)
            bvn += np.sum(w * np.exp((sn * hk - hs) / (1.0 - sn * sn)))
        bvn = bvn * asr / (4.0 * np.pi) + ndtr(-h) * ndtr(-k)
    else:
        if r < 0:
            k = -k
            hk = -hk
        aas = (1.0 - r) * (1.0 + r)
        a = np.sqrt(aas)
        bs = (h - k) ** 2
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 16.0
        asr = -(bs / aas + hk) / 2.0
        if asr > -100:
            bvn = a * np.exp(asr) * (
                1.0 - c * (bs - aas) * (1.0 - d * bs / 5.0) / 3.0 + c * d * aas * aas / 5.0
            )
        if -hk < 100:
            b = np.sqrt(bs)
            sp = np.sqrt(2.0 * np.pi) * ndtr(-b / a)
            bvn -= np.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
        a /= 2.0
        for sign in (-1.0, 1.0):
            xs = (a * (sign * x + 1.0)) ** 2
            rs = np.sqrt(1.0 - xs)
            asr_i = -(bs / xs + hk) / 2.0
            ok = asr_i > -100
            sp = 1.0 + c * xs * (1.0 + d * xs)
            ep = np.exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
            bvn += np.sum(np.where(ok, a * w * np.exp(np.where(ok, asr_i, 0.0)) * (ep - sp), 0.0))
        bvn = -bvn / (2.0 * np.pi)
        if r > 0:
            bvn += ndtr(-max(h, k))
        else:
            bvn = -bvn + max(0.0, ndtr(-h) - ndtr(-k))
    return float(min(1.0, max(0.0, bvn)))


def bivariate_normal_cdf(x: float, y: float, rho: float) -> float:
    """
    P(Z1 <= x, Z2 <= y) for standard normals with correlation ``rho``.

    Uses the Drezner-Wesolowsky reduction with Gauss-Legendre quadrature
    (double-precision variant for |rho| close to 1).

    Example:
        >>> round(bivariate_normal_cdf(0.0, 0.0, 0.5), 6)
        0.333333
    """
    if not -1.0 < rho < 1.0:
        raise ValueError(f"Correlation must lie strictly between -1 and 1, got {rho}")
    if x == -np.inf or y == -np.inf:
        return 0.0
    if x == np.inf:
        return float(ndtr(y))
    if y == np.inf:
        return float(ndtr(x))
    return _upper_bvn(-x, -y, rho)


def tetrachoric(c1: np.ndarray, c2: np.ndarray) -> float:
    """
    Tetrachoric correlation of two pass/fail vectors.

    Thresholds come from the marginal fail rates; the correlation is the
    maximizer of the 2x2 multinomial likelihood on (-0.999, 0.999).
    NaN entries are ignored pairwise.
    """
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    joint = ~(np.isnan(c1) | np.isnan(c2))
    if joint.sum() < config.TETRACHORIC_MIN_JOINT:
        raise DegenerateDataError(
            f"Tetrachoric correlation needs {config.TETRACHORIC_MIN_JOINT} joint observations, "
            f"got {int(joint.sum())}"
        )
    a = c1[joint] >= 0.5
    b = c2[joint] >= 0.5
    if a.all() or (~a).all() or b.all() or (~b).all():
        raise DegenerateDataError("Tetrachoric correlation is undefined for a constant vector")

    n00 = float(np.sum(~a & ~b))
    n01 = float(np.sum(~a & b))
    n10 = float(np.sum(a & ~b))
    n11 = float(np.sum(a & b))
    bound = config.TETRACHORIC_BOUND
    if n01 == 0 and n10 == 0:
        logger.warning("Perfectly concordant table; tetrachoric set to %s", bound)
        return bound
    if n00 == 0 and n11 == 0:
        logger.warning("Perfectly discordant table; tetrachoric set to %s", -bound)
        return -bound

    n = n00 + n01 + n10 + n11
    t1 = ndtri((n00 + n01) / n)
    t2 = ndtri((n00 + n10) / n)
    p1, p2 = ndtr(t1), ndtr(t2)

    def negative_log_likelihood(rho: float) -> float:
        p00 = bivariate_normal_cdf(t1, t2, rho)
        cells = np.array([p00, p1 - p00, p2 - p00, 1.0 - p1 - p2 + p00])
        cells = np.clip(cells, 1e-300, None)
        return -float(np.dot([n00, n01, n10, n11], np.log(cells)))

    result = minimize_scalar(
        negative_log_likelihood,
        bounds=(-bound, bound),
        method="bounded",
        options={"xatol": config.TETRACHORIC_TOL},
    )
    return float(result.x)


def _repair_psd(values: np.ndarray) -> tuple:
    values = (values + values.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(values)
    if eigvals.min() >= -config.PSD_EIGEN_TOL:
        np.fill_diagonal(values, 1.0)
        return values, False
    clipped = (eigvecs * np.clip(eigvals, 0.0, None)) @ eigvecs.T
    scale = 1.0 / np.sqrt(np.clip(np.diag(clipped), 1e-12, None))
    repaired = clipped * scale[:, None] * scale[None, :]
    repaired = (repaired + repaired.T) / 2.0
    np.fill_diagonal(repaired, 1.0)
    return repaired, True


def correlation_matrix(
    m: CourseResponseMatrix, method: Optional[Literal["pearson", "tetrachoric"]] = None
) -> CorrelationMatrix:
    """
    Course correlation matrix of a complete grade matrix.

    Binary matrices use tetrachoric correlations (cells thresholded at
    0.5, so fractional imputed fills are allowed), all others Pearson.
    Matrices with negative eigenvalues are repaired to the nearest
    unit-diagonal PSD matrix by eigenvalue clipping.
    """
    if not m.is_complete:
        raise ValueError("correlation_matrix needs a complete matrix; impute first")
    method = method or ("tetrachoric" if m.scale.kind == "binary" else "pearson")
    values = m.values
    courses = m.course_ids

    if method == "tetrachoric":
        passed = (values >= 0.5).astype(float)
        constant = [courses[j] for j in range(len(courses)) if np.unique(passed[:, j]).size < 2]
    else:
        constant = [courses[j] for j in range(len(courses)) if np.std(values[:, j]) == 0]
    if constant:
        raise DegenerateDataError(f"Constant course column(s): {constant}")

    if method == "pearson":
        corr = np.corrcoef(values, rowvar=False)
    else:
        C = len(courses)
        corr = np.eye(C)
        for i in range(C):
            for j in range(i + 1, C):
                corr[i, j] = corr[j, i] = tetrachoric(passed[:, i], passed[:, j])

    corr, repaired = _repair_psd(np.atleast_2d(corr))
    if repaired:
        logger.info("Correlation matrix repaired to positive semidefinite")
    return CorrelationMatrix(course_ids=courses, values=corr, method=method, repaired=repaired)

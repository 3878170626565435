"""
Differential course functioning (DCF).

For every course a second-stage regression of the course grade on a
group code g in {-1, +1} and the fitted student traits estimates a
group-specific difficulty effect beta_1:

    IRT:  logit P(pass) = b0 + b1 * g + <b2, theta>
    AGM:  grade         = b0 + b1 * g + <b2, theta>

In one dimension b2 is fixed at the course discrimination (an offset).
beta_1 < 0 means group -1 finds the course easier.
"""
import logging
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.stats import chi2, ttest_ind
from statsmodels.stats.multitest import multipletests

import config
from analysis.regression import fit_linear, fit_logistic, has_group_separation
from data.errors import UnknownIdentifierError
from data.schema import CourseResponseMatrix, GroupAssignment
from models.schema import LatentModel

logger = logging.getLogger(__name__)

GROUP = "group"


class DcfResult(BaseModel):
    """Second-stage regression for one course."""
    course_id: str
    beta0: Optional[float] = None
    beta1: Optional[float] = None
    beta2: List[float] = Field(default_factory=list)
    se1: Optional[float] = None
    p_raw: Optional[float] = None
    p_bh: Optional[float] = None
    significant: bool = False
    n_group_minus: int = 0
    n_group_plus: int = 0
    test: str = config.DCF_TEST
    regression: str = "logistic"
    separated: bool = False
    skipped: bool = False
    note: Optional[str] = None
    outcome_diff: Optional[float] = None
    outcome_p: Optional[float] = None
    trait_diff: Optional[float] = None
    trait_p: Optional[float] = None
    case: Optional[str] = None


def _welch(values: np.ndarray, g: np.ndarray) -> Tuple[float, float]:
    """Mean difference (+1 minus -1) and Welch p-value."""
    plus, minus = values[g > 0], values[g < 0]
    diff = float(plus.mean() - minus.mean())
    if plus.std() == 0 and minus.std() == 0:
        return diff, 1.0 if diff == 0 else 0.0
    p = float(ttest_ind(plus, minus, equal_var=False).pvalue)
    return diff, p if np.isfinite(p) else 1.0


def classify_case(trait_p: Optional[float], dcf: bool, alpha: float = config.SIGNIFICANCE_LEVEL) -> str:
    """Decision-tree label from the trait difference and the DCF verdict."""
    trait = trait_p is not None and trait_p < alpha
    if trait and dcf:
        return "trait_and_dcf"
    if trait:
        return "trait_only"
    if dcf:
        return "dcf_only"
    return "null"


def _course_rows(model: LatentModel, m: CourseResponseMatrix, course_id: str, groups: GroupAssignment):
    """Observed grades, group codes, traits and primary traits of grouped students."""
    if course_id not in m.course_ids:
        raise UnknownIdentifierError(f"Unknown course: {course_id}")
    column = m.grades[course_id]
    if m.imputed is not None:
        column = column.mask(m.imputed[course_id].astype(bool))
    grades = column.reindex(model.student_ids).to_numpy(dtype=float)
    g = groups.codes_for(model.student_ids)
    keep = ~np.isnan(grades) & (g != 0)
    return grades[keep], g[keep], model.theta[keep], model.primary_traits()[keep]


def _discrimination(model: LatentModel, course_id: str) -> float:
    if course_id in model.course_ids:
        return float(model.alpha[model.course_index(course_id), 0])
    return 1.0


def _lr_pvalue(full_llf: float, y: np.ndarray, exog: pd.DataFrame, offset, binary: bool) -> float:
    restricted = exog.drop(columns=[GROUP])
    if binary:
        fit = fit_logistic(y, restricted, offset=offset)
    else:
        fit = fit_linear(y, restricted, offset=offset)
    statistic = max(2.0 * (full_llf - fit.llf), 0.0)
    return float(chi2.sf(statistic, df=1))


def dcf_course(
    m: CourseResponseMatrix,
    model: LatentModel,
    course_id: str,
    groups: GroupAssignment,
    test: str = config.DCF_TEST,
    min_group: int = config.DCF_MIN_GROUP,
) -> DcfResult:
    """
    Estimate the DCF effect of one course.

    Args:
        m: Grade matrix the model was fitted on
        model: Stage-1 model providing the traits
        course_id: Course to test
        groups: Student group codes
        test: "wald" or "lr" for the beta_1 p-value
        min_group: Minimum observed students per group

    Returns:
        DcfResult without the multiple-testing fields

    Example:
        >>> result = dcf_course(m, model, "C03", groups)
        >>> result.beta1, result.p_raw
    """
    if test not in ("wald", "lr"):
        raise ValueError(f"Unknown DCF test: {test}")
    y, g, theta, primary = _course_rows(model, m, course_id, groups)
    n_minus, n_plus = int((g < 0).sum()), int((g > 0).sum())
    result = DcfResult(course_id=course_id, n_group_minus=n_minus, n_group_plus=n_plus, test=test)
    if min(n_minus, n_plus) < min_group:
        note = f"fewer than {min_group} observed students in a group"
        logger.info("DCF skipped for %s: %s", course_id, note)
        return result.model_copy(update={"skipped": True, "note": note})

    binary = model.model_class == "irt"
    exog = pd.DataFrame({GROUP: g})
    if model.n_dim == 1:
        beta2 = [_discrimination(model, course_id)]
        offset = theta[:, 0] * beta2[0]
    else:
        for k in range(model.n_dim):
            exog[f"theta_{k + 1}"] = theta[:, k]
        offset = None

    separated = False
    if binary:
        separated = has_group_separation(y, g)
        fit = fit_logistic(y, exog, offset=offset, force_ridge=separated)
        separated = separated or fit.separated
    else:
        fit = fit_linear(y, exog, offset=offset)
    if model.n_dim > 1:
        beta2 = [fit.params[f"theta_{k + 1}"] for k in range(model.n_dim)]

    p_raw = fit.pvalues[GROUP] if test == "wald" else _lr_pvalue(fit.llf, y, exog, offset, binary)
    outcome_diff, outcome_p = _welch(y, g)
    trait_diff, trait_p = _welch(primary, g)
    if separated:
        logger.warning("DCF %s: outcome constant within a group", course_id)
    return result.model_copy(update={
        "beta0": fit.params["const"],
        "beta1": fit.params[GROUP],
        "beta2": beta2,
        "se1": fit.bse[GROUP],
        "p_raw": float(p_raw),
        "regression": "logistic" if binary else "linear",
        "separated": separated,
        "note": "outcome constant within a group; ridge-stabilized fit" if separated else None,
        "outcome_diff": outcome_diff,
        "outcome_p": outcome_p,
        "trait_diff": trait_diff,
        "trait_p": trait_p,
        "case": classify_case(trait_p, p_raw <= config.SIGNIFICANCE_LEVEL),
    })


def bh_correct(p_values, q: float = config.FDR_Q) -> Tuple[np.ndarray, np.ndarray]:
    """
    Benjamini-Hochberg step-up adjustment.

    Returns:
        (adjusted p-values, reject flags) in input order

    Example:
        >>> bh_correct([0.01, 0.03, 0.04, 0.20])[1]
        array([ True, False, False, False])
    """
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return np.array([]), np.array([], dtype=bool)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    reject, adjusted, _, _ = multipletests(p, alpha=q, method="fdr_bh")
    return adjusted, reject


def dcf_all(
    m: CourseResponseMatrix,
    model: LatentModel,
    groups: GroupAssignment,
    q: float = config.FDR_Q,
    test: str = config.DCF_TEST,
    min_group: int = config.DCF_MIN_GROUP,
) -> List[DcfResult]:
    """
    DCF for every course, BH-corrected across the tested courses.

    Results are sorted by |beta_1| (largest first); skipped courses
    follow with their notes.
    """
    results = [dcf_course(m, model, c, groups, test=test, min_group=min_group) for c in m.course_ids]
    tested = [r for r in results if not r.skipped]
    skipped = [r for r in results if r.skipped]
    if not tested:
        logger.warning("No course has enough students in both groups for DCF")
        return skipped

    adjusted, reject = bh_correct([r.p_raw for r in tested], q=q)
    corrected = [
        r.model_copy(update={
            "p_bh": float(p),
            "significant": bool(flag),
            "case": classify_case(r.trait_p, bool(flag)),
        })
        for r, p, flag in zip(tested, adjusted, reject)
    ]
    corrected.sort(key=lambda r: -abs(r.beta1))
    logger.info("DCF: %d of %d courses significant at q=%.2f", int(reject.sum()), len(tested), q)
    return corrected + skipped


def dcf_table(results: List[DcfResult]) -> pd.DataFrame:
    """Course, group sizes, DCF effect and adjusted p-value per course."""
    rows = [{
        "course": r.course_id,
        "n_group_minus": r.n_group_minus,
        "n_group_plus": r.n_group_plus,
        "DCF": r.beta1,
        "p_raw": r.p_raw,
        "p_bh": r.p_bh,
        "significant": r.significant,
        "case": r.case,
        "note": r.note,
    } for r in results]
    columns = ["course", "n_group_minus", "n_group_plus", "DCF", "p_raw", "p_bh", "significant", "case", "note"]
    return pd.DataFrame(rows, columns=columns)

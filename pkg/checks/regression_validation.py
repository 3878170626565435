"""
Second-stage validation: how well fitted parameters predict held-out grades.

Each observed cell becomes a row (student traits, course difficulty,
grade); an OLS fit on a random 70% of rows is scored on the rest.
"""
import logging
from typing import List

import numpy as np
import pandas as pd
import statsmodels.api as sm
from pydantic import BaseModel

import config
from data.schema import CourseResponseMatrix
from models.schema import LatentModel
from models.selection import unidim_difficulty

logger = logging.getLogger(__name__)


class RegressionScore(BaseModel):
    repeat: int
    rmse: float
    r2: float
    n_train: int
    n_test: int


def parameter_rows(model: LatentModel, m: CourseResponseMatrix) -> pd.DataFrame:
    """One row per observed cell with trait columns, difficulty and grade."""
    grades = m.grades.loc[model.student_ids, model.course_ids]
    imputed = pd.DataFrame(m.imputed_mask(), index=m.grades.index, columns=m.grades.columns)
    observed = grades.notna().to_numpy() & ~imputed.loc[model.student_ids, model.course_ids].to_numpy()
    s, c = np.nonzero(observed)
    rows = pd.DataFrame(model.theta[s], columns=[f"theta_{k + 1}" for k in range(model.n_dim)])
    difficulty = unidim_difficulty(model).as_series().reindex(model.course_ids).to_numpy()
    rows["difficulty"] = difficulty[c]
    rows["grade"] = grades.to_numpy(dtype=float)[s, c]
    return rows.dropna()


def regression_validation(
    model: LatentModel,
    m: CourseResponseMatrix,
    repeats: int = config.REGRESSION_REPEATS,
    test_fraction: float = config.REGRESSION_TEST_FRACTION,
    seed: int = config.RANDOM_SEED,
) -> List[RegressionScore]:
    """
    Repeated train/test OLS of grades on fitted parameters.

    Args:
        model: Stage-1 model fitted on ``m``
        m: Grade matrix
        repeats: Number of random splits; split r uses ``default_rng([seed, r])``
        test_fraction: Share of rows held out

    Returns:
        One RegressionScore per split
    """
    rows = parameter_rows(model, m)
    features = [c for c in rows.columns if c != "grade"]
    X = sm.add_constant(rows[features], has_constant="add").to_numpy()
    y = rows["grade"].to_numpy()
    n_test = max(1, int(round(test_fraction * len(rows))))

    scores = []
    for r in range(repeats):
        order = np.random.default_rng([seed, r]).permutation(len(rows))
        test, train = order[:n_test], order[n_test:]
        fit = sm.OLS(y[train], X[train]).fit()
        predicted = fit.predict(X[test])
        residual = y[test] - predicted
        total = np.sum((y[test] - y[test].mean()) ** 2)
        r2 = 1.0 - np.sum(residual ** 2) / total if total > 0 else 0.0
        scores.append(RegressionScore(
            repeat=r,
            rmse=float(np.sqrt(np.mean(residual ** 2))),
            r2=float(r2),
            n_train=len(train),
            n_test=len(test),
        ))
    logger.info(
        "%s regression validation: mean RMSE %.3f, mean R2 %.3f",
        model.model_class, np.mean([s.rmse for s in scores]), np.mean([s.r2 for s in scores]),
    )
    return scores


def summarize_scores(scores: List[RegressionScore]) -> pd.Series:
    frame = pd.DataFrame([s.model_dump() for s in scores])
    return pd.Series({
        "rmse_mean": frame["rmse"].mean(),
        "rmse_std": frame["rmse"].std(ddof=1) if len(frame) > 1 else 0.0,
        "r2_mean": frame["r2"].mean(),
        "r2_std": frame["r2"].std(ddof=1) if len(frame) > 1 else 0.0,
    })

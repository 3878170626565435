"""
Ground-truth grade simulators.

Generates IRT-style binary and continuous grade matrices with known
student traits and course parameters, MAR amputation, term drift
scenarios and course-choice bias. All draws come from
``numpy.random.default_rng([seed, replicate])`` so every dataset is
reproducible from its configuration.
"""
import logging
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from scipy.special import expit

import config
from data.errors import AmputationError
from data.grades import save_matrix
from data.schema import (
    CourseResponseMatrix,
    DriftConfig,
    GradeScaleSpec,
    GroupAssignment,
    SimulationConfig,
)

logger = logging.getLogger(__name__)


class SimulatedData(BaseModel):
    """A simulated matrix together with the parameters that generated it."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    matrix: CourseResponseMatrix
    theta: np.ndarray
    delta: np.ndarray
    alpha: np.ndarray
    pass_prob: np.ndarray


class AmputationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    matrix: CourseResponseMatrix
    missing_rate: float
    attempts: int


class DriftData(BaseModel):
    """Time-stamped simulated matrix with per-term ground truth."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    matrix: CourseResponseMatrix
    scenario: str
    theta_by_term: np.ndarray  # students x terms
    delta_by_term: np.ndarray  # courses x terms
    theta_mean: np.ndarray
    delta_mean: np.ndarray


def student_ids(n: int) -> list:
    return [f"S{i:04d}" for i in range(1, n + 1)]


def course_ids(n: int) -> list:
    return [f"C{j:02d}" for j in range(1, n + 1)]


def _scale_for(kind: str) -> GradeScaleSpec:
    if kind == "binary":
        return GradeScaleSpec(lowest_grade=0, direction="ascending", kind="binary")
    return GradeScaleSpec(lowest_grade=0, direction="ascending", kind="continuous", pass_threshold=50)


def _draw_discriminations(rng: np.random.Generator, n_courses: int, n_dim: int) -> np.ndarray:
    if n_dim == 1:
        return np.ones((n_courses, 1))
    # two balanced clusters of courses, one leaning on each trait
    magnitude = rng.lognormal(mean=0.0, sigma=config.SIM_DISCRIMINATION_SD, size=n_courses)
    cluster = rng.permutation(n_courses) % 2
    angle = np.where(cluster == 0, np.pi / 8, 3 * np.pi / 8) + rng.uniform(
        -config.SIM_ANGLE_JITTER, config.SIM_ANGLE_JITTER, size=n_courses
    )
    return np.column_stack([magnitude * np.cos(angle), magnitude * np.sin(angle)])


def _draw_grades(
    rng: np.random.Generator, eta: np.ndarray, kind: str, noise_sd: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Return (grades, pass probabilities) for a logit table."""
    prob = expit(eta)
    if kind == "binary":
        return (rng.random(eta.shape) < prob).astype(float), prob
    noise = rng.normal(0.0, noise_sd, size=eta.shape)
    return 100.0 * expit(eta + noise), prob


def _frame(values: np.ndarray, n_students: int, n_courses: int) -> pd.DataFrame:
    return pd.DataFrame(values, index=student_ids(n_students), columns=course_ids(n_courses))


def simulate_irt(
    cfg: SimulationConfig,
    replicate: int = 0,
    theta: Optional[np.ndarray] = None,
    delta: Optional[np.ndarray] = None,
    alpha: Optional[np.ndarray] = None,
) -> SimulatedData:
    """
    Simulate grades from a (multidimensional) logistic IRT model.

    Pass probability for student s in course c is
    sigmoid(<alpha_c, theta_s - delta_c>). Binary grades are Bernoulli
    draws; continuous grades are 100 * sigmoid(logit + noise).

    Args:
        cfg: Simulation settings
        replicate: Replicate index mixed into the seed
        theta, delta, alpha: Optional fixed ground truth (students x dim, courses x dim)

    Returns:
        SimulatedData with the matrix and ground truth

    Example:
        >>> data = simulate_irt(SimulationConfig(n_students=500, n_courses=10))
        >>> data.matrix.scale.kind
        'binary'
    """
    rng = np.random.default_rng([cfg.seed, replicate])
    S, C, n = cfg.n_students, cfg.n_courses, cfg.n_dim

    drawn_theta = rng.standard_normal((S, n))
    drawn_delta = rng.standard_normal((C, n))
    drawn_alpha = _draw_discriminations(rng, C, n)
    theta = drawn_theta if theta is None else np.asarray(theta, dtype=float).reshape(S, n)
    delta = drawn_delta if delta is None else np.asarray(delta, dtype=float).reshape(C, n)
    alpha = drawn_alpha if alpha is None else np.asarray(alpha, dtype=float).reshape(C, n)

    eta = theta @ alpha.T - (alpha * delta).sum(axis=1)
    grades, prob = _draw_grades(rng, eta, cfg.grade_kind, cfg.logit_noise_sd)

    matrix = CourseResponseMatrix(grades=_frame(grades, S, C), scale=_scale_for(cfg.grade_kind))
    return SimulatedData(matrix=matrix, theta=theta, delta=delta, alpha=alpha, pass_prob=prob)


def simulate_dcf(
    cfg: SimulationConfig,
    courses: Sequence[int],
    effect: float,
    replicate: int = 0,
) -> Tuple[SimulatedData, GroupAssignment]:
    """
    Simulate 1-dim binary data where selected courses carry a group effect.

    Groups are assigned by fair coin. In the listed courses (0-based
    positions) the pass logit of student s is shifted by ``effect * g_s``,
    so a negative effect makes those courses easier for group -1.
    """
    rng = np.random.default_rng([cfg.seed, replicate, 1])
    S, C = cfg.n_students, cfg.n_courses
    theta = rng.standard_normal((S, 1))
    delta = rng.standard_normal((C, 1))
    codes = rng.choice([-1, 1], size=S)
    while np.unique(codes).size < 2:
        codes = rng.choice([-1, 1], size=S)

    eta = theta - delta.T
    shift = np.zeros((S, C))
    shift[:, list(courses)] = effect * codes[:, None]
    grades, prob = _draw_grades(rng, eta + shift, "binary", 0.0)

    matrix = CourseResponseMatrix(grades=_frame(grades, S, C), scale=_scale_for("binary"))
    groups = GroupAssignment(groups=dict(zip(matrix.student_ids, codes.tolist())))
    data = SimulatedData(matrix=matrix, theta=theta, delta=delta, alpha=np.ones((C, 1)), pass_prob=prob)
    return data, groups


def ampute_mar(
    m: CourseResponseMatrix,
    tau: float,
    alpha: float,
    beta: float = config.AMPUTATION_BASE_RATE,
    seed: int = config.RANDOM_SEED,
) -> AmputationResult:
    """
    Mask grades of weak students and hard courses more often.

    GPA and course pass rate are normalized to [0, 1] by the observed
    grade range. A cell is masked with probability ``alpha`` when the
    student's or the course's normalized mean is below ``tau``, else with
    probability ``beta``. Rows or columns left fully missing are redrawn
    on their own, up to AMPUTATION_MAX_DRAWS times.
    """
    if not m.is_complete:
        raise ValueError("ampute_mar needs a complete matrix")
    if not (0 <= alpha <= 1 and 0 <= beta <= 1):
        raise ValueError("alpha and beta must lie in [0, 1]")

    values = m.values
    low, high = values.min(), values.max()
    scaled = (values - low) / (high - low) if high > low else np.zeros_like(values)
    weak_student = scaled.mean(axis=1) < tau
    hard_course = scaled.mean(axis=0) < tau
    prob = np.where(weak_student[:, None] | hard_course[None, :], alpha, beta)

    rng = np.random.default_rng(seed)
    mask = rng.random(values.shape) < prob
    for attempt in range(1, config.AMPUTATION_MAX_DRAWS + 2):
        empty_rows = np.flatnonzero(mask.all(axis=1))
        empty_cols = np.flatnonzero(mask.all(axis=0))
        if empty_rows.size == 0 and empty_cols.size == 0:
            amputed = m.grades.mask(mask)
            matrix = m.replace(grades=amputed)
            return AmputationResult(matrix=matrix, missing_rate=float(mask.mean()), attempts=attempt)
        if attempt > config.AMPUTATION_MAX_DRAWS:
            break
        logger.debug(
            "Amputation draw %d emptied %d rows and %d columns; redrawing them",
            attempt, empty_rows.size, empty_cols.size,
        )
        for s in empty_rows:
            mask[s] = rng.random(values.shape[1]) < prob[s]
        for c in empty_cols:
            mask[:, c] = rng.random(values.shape[0]) < prob[:, c]

    raise AmputationError(
        f"Amputation (tau={tau}, alpha={alpha}, beta={beta}) left empty rows or columns "
        f"in {config.AMPUTATION_MAX_DRAWS} draws"
    )


def simulate_drift(cfg: SimulationConfig, drift: DriftConfig, replicate: int = 0) -> DriftData:
    """
    Simulate a Rasch-style matrix whose parameters move over terms.

    Every grade gets a random term. Course scenarios give each course a
    linear trend (and optionally a one-term shock); the student scenario
    gives each student a linear trend. Trends are centered on the middle
    term, so the temporal mean of each parameter is its base draw plus
    any shock averaged over terms. With a zero rate and no shock the
    grades equal ``simulate_irt`` for the same seed.
    """
    if cfg.n_dim != 1:
        raise ValueError("Drift scenarios are one-dimensional")
    rng = np.random.default_rng([cfg.seed, replicate])
    S, C, T = cfg.n_students, cfg.n_courses, drift.n_terms

    theta = rng.standard_normal((S, 1))
    delta = rng.standard_normal((C, 1))
    if cfg.grade_kind == "binary":
        draws = rng.random((S, C))
    else:
        draws = rng.normal(0.0, cfg.logit_noise_sd, size=(S, C))
    terms = rng.integers(0, T, size=(S, C))

    offsets = np.arange(T) - (T - 1) / 2.0
    theta_by_term = np.repeat(theta, T, axis=1)
    delta_by_term = np.repeat(delta, T, axis=1)
    if drift.scenario == "student_constant_drift":
        slopes = drift.rate * rng.standard_normal(S)
        theta_by_term = theta_by_term + slopes[:, None] * offsets[None, :]
    else:
        slopes = drift.rate * rng.standard_normal(C)
        delta_by_term = delta_by_term + slopes[:, None] * offsets[None, :]
        if drift.scenario == "course_drift_with_shock":
            delta_by_term[:, drift.shock_term] += rng.normal(0.0, drift.shock_sd, size=C)

    rows = np.arange(S)[:, None]
    cols = np.arange(C)[None, :]
    eta = theta_by_term[rows, terms] - delta_by_term[cols, terms]
    if cfg.grade_kind == "binary":
        grades = (draws < expit(eta)).astype(float)
    else:
        grades = 100.0 * expit(eta + draws)

    frame = _frame(grades, S, C)
    matrix = CourseResponseMatrix(
        grades=frame,
        scale=_scale_for(cfg.grade_kind),
        terms=pd.DataFrame(terms.astype(float), index=frame.index, columns=frame.columns),
    )
    return DriftData(
        matrix=matrix,
        scenario=drift.scenario,
        theta_by_term=theta_by_term,
        delta_by_term=delta_by_term,
        theta_mean=theta_by_term.mean(axis=1),
        delta_mean=delta_by_term.mean(axis=1),
    )


def simulate_choice_bias(
    max_courses: int,
    cfg: SimulationConfig,
    replicate: int = 0,
    p_high: float = config.CHOICE_BIAS_HIGH,
    p_low: float = config.CHOICE_BIAS_LOW,
) -> SimulatedData:
    """
    Simulate enrollment where strong students favour hard courses.

    Above-median students enroll in above-median-difficulty courses with
    probability ``p_high`` and in the others with ``p_low``; below-median
    students mirror this. Enrollments beyond ``max_courses`` are
    subsampled uniformly. Grades come from the generator selected by
    ``cfg.grade_kind``.
    """
    if max_courses < 2:
        raise ValueError("max_courses must be at least 2")
    rng = np.random.default_rng([cfg.seed, replicate])
    S, C = cfg.n_students, cfg.n_courses

    theta = rng.standard_normal((S, 1))
    delta = rng.standard_normal((C, 1))
    strong = theta[:, 0] > np.median(theta)
    hard = delta[:, 0] > np.median(delta)
    prob = np.where(strong[:, None] == hard[None, :], p_high, p_low)

    enrolled = rng.random((S, C)) < prob
    for s in range(S):
        tries = 0
        while not enrolled[s].any() and tries < 100:
            enrolled[s] = rng.random(C) < prob[s]
            tries += 1
        if not enrolled[s].any():
            enrolled[s, rng.integers(C)] = True
        chosen = np.flatnonzero(enrolled[s])
        if chosen.size > max_courses:
            keep = rng.choice(chosen, size=max_courses, replace=False)
            enrolled[s] = False
            enrolled[s, keep] = True

    for c in np.flatnonzero(~enrolled.any(axis=0)):
        room = np.flatnonzero(enrolled.sum(axis=1) < max_courses)
        if room.size == 0:
            room = np.arange(S)
        enrolled[rng.choice(room), c] = True

    eta = theta - delta.T
    grades, prob_pass = _draw_grades(rng, eta, cfg.grade_kind, cfg.logit_noise_sd)
    grades = np.where(enrolled, grades, np.nan)

    matrix = CourseResponseMatrix(grades=_frame(grades, S, C), scale=_scale_for(cfg.grade_kind))
    return SimulatedData(matrix=matrix, theta=theta, delta=delta, alpha=np.ones((C, 1)), pass_prob=prob_pass)


def save_simulation(data: SimulatedData, out_dir: Path) -> None:
    """
    Save a simulated matrix and its ground truth as CSV files.

    Args:
        data: Simulated dataset
        out_dir: Target directory
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    m = data.matrix
    save_matrix(m, out_dir / "grades.csv")
    if m.terms is not None:
        m.terms.to_csv(out_dir / "terms.csv", index_label="student_id", na_rep="")

    dims = [f"dim{k + 1}" for k in range(data.theta.shape[1])]
    pd.DataFrame(data.theta, index=m.grades.index, columns=dims).to_csv(
        out_dir / "truth_students.csv", index_label="student_id"
    )
    courses = pd.DataFrame(data.delta, index=m.grades.columns, columns=[f"delta_{d}" for d in dims])
    for k, d in enumerate(dims):
        courses[f"alpha_{d}"] = data.alpha[:, k]
    courses.to_csv(out_dir / "truth_courses.csv", index_label="course_id")

    print(f"✓ Saved {m.n_students} students x {m.n_courses} courses to {out_dir}")


def save_drift(data: DriftData, out_dir: Path) -> None:
    """Save a drift dataset: grades, terms and per-term true parameters."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    m = data.matrix
    save_matrix(m, out_dir / "grades.csv")
    m.terms.to_csv(out_dir / "terms.csv", index_label="student_id", na_rep="")
    n_terms = data.theta_by_term.shape[1]
    terms = [f"term_{t}" for t in range(n_terms)]
    pd.DataFrame(data.theta_by_term, index=m.grades.index, columns=terms).to_csv(
        out_dir / "truth_students.csv", index_label="student_id"
    )
    pd.DataFrame(data.delta_by_term, index=m.grades.columns, columns=terms).to_csv(
        out_dir / "truth_courses.csv", index_label="course_id"
    )
    print(f"✓ Saved {data.scenario} drift data ({m.n_students} x {m.n_courses}, {n_terms} terms) to {out_dir}")


def save_groups(groups: GroupAssignment, path: Path) -> Path:
    path = Path(path)
    pd.DataFrame(sorted(groups.groups.items()), columns=["student_id", "group"]).to_csv(path, index=False)
    return path


if __name__ == "__main__":
    demo = simulate_irt(SimulationConfig(n_students=500, n_courses=10))
    save_simulation(demo, config.DATA_DIR / "demo")

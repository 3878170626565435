"""
End-to-end course difficulty pipeline.

run_method walks the decision flow: scale normalization, model-class
choice, missingness checks, imputation, dimension bound, BIC selection,
fit, assumption checks and difficulty output. Fatal problems abort with
a PipelineError naming the stage; everything else becomes a flag.
"""
import logging
from contextlib import contextmanager
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from analysis.correlation import correlation_matrix
from analysis.dimensionality import pca_pve
from analysis.imputation import ImputationResult, impute, mean_impute, mipca_impute
from analysis.missingness import (
    classify_missingness,
    little_mcar_test,
    mar_regression_test,
    observed_ratio_report,
)
from checks.local_independence import residual_pca_check, yen_q3
from checks.reliability import concurrent_validity, split_half_correlation
from data.errors import DegenerateDataError, PipelineError, StructuralError
from data.grades import binarize, choose_model_class, count_categories, filter_students, normalize_scale
from data.schema import CourseResponseMatrix, GroupAssignment
from insights.dcf import DcfResult, dcf_all, dcf_course
from models.heuristics import centering_estimates
from models.schema import LatentModel
from models.selection import select_dimension, unidim_difficulty
from models.time_resolved import fit_time_resolved
from pipeline.report import CheckResults, Flag, ImputationSummary, PipelineReport
from pipeline.settings import PipelineConfig

logger = logging.getLogger(__name__)


@contextmanager
def _stage(name: str):
    """Re-raise any failure inside the block as a PipelineError for ``name``."""
    logger.info("Stage: %s", name)
    try:
        yield
    except PipelineError:
        raise
    except (ValueError, ArithmeticError, KeyError) as e:
        raise PipelineError(name, str(e), e) from e


class PreparedMatrix(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    matrix: CourseResponseMatrix
    model_class: str
    binarized: bool = False
    flags: List[Flag] = Field(default_factory=list)


def prepare_matrix(m: CourseResponseMatrix, settings: PipelineConfig) -> PreparedMatrix:
    """
    Canonical scale, student filter and model-class choice.

    Ordinal scales with fewer than five categories are binarized at the
    pass threshold; a forced ``irt`` class binarizes non-binary data.
    """
    flags: List[Flag] = []
    m = filter_students(normalize_scale(m), settings.min_observed)
    model_class, needs_binarization = choose_model_class(m.scale, count_categories(m))
    if settings.model_class is not None and settings.model_class != model_class:
        if settings.model_class == "agm" and m.scale.kind == "binary":
            raise StructuralError("AGM cannot be fitted to pass/fail grades")
        model_class = settings.model_class
        needs_binarization = model_class == "irt" and m.scale.kind != "binary"
    if needs_binarization:
        m = binarize(m)
        flags.append(Flag(check="scale", severity="info", message="grades binarized at the pass threshold"))
    if m.degenerate_courses:
        flags.append(Flag(
            check="degenerate_courses",
            message=f"courses with a single pass/fail outcome: {list(m.degenerate_courses)}",
        ))
    return PreparedMatrix(matrix=m, model_class=model_class, binarized=needs_binarization, flags=flags)


def run_checks(
    m: CourseResponseMatrix,
    model: LatentModel,
    settings: PipelineConfig,
    m_complete: Optional[CourseResponseMatrix] = None,
) -> CheckResults:
    """
    Assumption and measurement checks on a fitted model.

    A check that cannot run is reported as a flag rather than raised.

    Args:
        m: Matrix the model was fitted on (imputed cells allowed)
        model: Fitted model
        settings: Thresholds and seed
        m_complete: Complete matrix for residual PCA; imputed with MIPCA when absent
    """
    results = CheckResults()

    def soft(check: str, error: Exception) -> None:
        logger.warning("Check %s could not run: %s", check, error)
        results.flags.append(Flag(check=check, severity="info", message=f"not run: {error}"))

    try:
        results.q3 = yen_q3(model, m, threshold=settings.q3_threshold, min_joint=settings.q3_min_joint)
        if results.q3.violations:
            pairs = [(v.first, v.second) for v in results.q3.violations]
            results.flags.append(Flag(
                check="local_independence",
                message=f"{len(pairs)} course pairs violate local independence: {pairs[:10]}",
            ))
    except ValueError as e:
        soft("local_independence", e)

    try:
        complete = m_complete
        if complete is None:
            complete = m if m.is_complete else mipca_impute(
                m, tol=settings.mipca_tol, max_iter=settings.mipca_max_iter, seed=settings.seed
            ).matrix
        results.residual_pca = residual_pca_check(model, complete, margin=settings.noise_margin)
        if results.residual_pca.flagged:
            results.flags.append(Flag(
                check="residual_pca",
                message="model residuals retain structure beyond the data's second component",
            ))
    except ValueError as e:
        soft("residual_pca", e)

    modes = ["random"] + (["time"] if m.has_terms else [])
    for mode in modes:
        try:
            report = split_half_correlation(
                m, model.model_class, n_dim=model.n_dim, mode=mode,
                seed=settings.seed, threshold=settings.reliability_threshold,
            )
            results.split_half.append(report)
            if report.flagged:
                results.flags.append(Flag(
                    check=f"split_half_{mode}",
                    message=f"students r={report.student_corr}, courses r={report.course_corr} "
                            f"(threshold {settings.reliability_threshold})",
                ))
        except ValueError as e:
            soft(f"split_half_{mode}", e)

    try:
        results.validity = concurrent_validity(model, m, threshold=settings.reliability_threshold)
        if results.validity.flagged:
            results.flags.append(Flag(
                check="concurrent_validity",
                message=f"|r| students={results.validity.student_r}, courses={results.validity.course_r}",
            ))
    except ValueError as e:
        soft("concurrent_validity", e)
    return results


def _fallback_imputation(m: CourseResponseMatrix, error: Exception, flags: List[Flag]) -> ImputationResult:
    """Mean imputation when MIPCA cannot run; the raw matrix when that fails too."""
    logger.warning("MIPCA not run: %s", error)
    try:
        result = ImputationResult(matrix=mean_impute(m), method="mean", n_iter=1)
        flags.append(Flag(check="imputation", message=f"MIPCA not run, mean imputation used: {error}"))
    except DegenerateDataError as e:
        result = ImputationResult(matrix=m, method="none", n_iter=0, converged=False)
        flags.append(Flag(check="imputation", message=f"imputation not run: {e}"))
    return result


def run_method(m: CourseResponseMatrix, settings: Optional[PipelineConfig] = None) -> PipelineReport:
    """
    Run the full pipeline on a grade matrix.

    Args:
        m: Grade matrix with its scale (terms optional)
        settings: Pipeline settings; defaults from config.py

    Returns:
        PipelineReport with estimates, checks and flags

    Example:
        >>> report = run_method(load_matrix("grades.csv", spec))
        >>> report.model_class, report.n_dim
        ('agm', 1)
    """
    settings = settings or PipelineConfig()
    flags: List[Flag] = []

    with _stage("scale"):
        prepared = prepare_matrix(m, settings)
        m, model_class = prepared.matrix, prepared.model_class
        flags.extend(prepared.flags)

    with _stage("missingness"):
        ratios = observed_ratio_report(m)
        sparse = [c for c, r in ratios.per_course.items() if r < settings.min_course_observed_ratio]
        if sparse:
            flags.append(Flag(check="observed_ratio", message=f"courses with <{settings.min_course_observed_ratio:.0%} observed grades: {sparse}"))
        if ratios.overall < settings.min_overall_observed_ratio:
            flags.append(Flag(
                check="observed_ratio",
                message=f"overall observed ratio {ratios.overall:.2f}; structure may be underestimated",
            ))
        small = [c for c, n in ratios.students_per_course.items() if n < settings.min_offering_size]
        if small and model_class == "irt":
            flags.append(Flag(check="course_size", message=f"courses with few students: {small}"))

        little, mar, verdict = None, [], None
        mechanism = "MCAR"
        if not m.is_complete:
            mar = mar_regression_test(m, cutoff=settings.mar_pseudo_r2_cutoff)
            try:
                little = little_mcar_test(m, shrinkage_start=settings.little_shrinkage_start)
                verdict = classify_missingness(little, mar, alpha=settings.significance_level)
                mechanism = verdict.mechanism
            except ValueError as e:
                mechanism = "MAR"
                flags.append(Flag(check="little_mcar", severity="info", message=f"not run: {e}"))
            if mechanism == "MNAR_SUSPECT":
                flags.append(Flag(check="missingness", message="missingness poorly explained by observed grades"))
            if verdict is not None and verdict.caution_courses:
                flags.append(Flag(
                    check="missingness", severity="info",
                    message=f"caution advised for courses: {verdict.caution_courses}",
                ))

    with _stage("imputation"):
        try:
            imputation = impute(
                m, mechanism, tol=settings.mipca_tol, max_iter=settings.mipca_max_iter, seed=settings.seed
            )
        except DegenerateDataError as e:
            imputation = _fallback_imputation(m, e, flags)
        if imputation.method == "mipca" and not imputation.converged:
            flags.append(Flag(check="imputation", message="MIPCA did not converge"))
        m_complete = imputation.matrix

    pve, bound = None, 1
    with _stage("dimensionality"):
        try:
            pve = pca_pve(correlation_matrix(m_complete), variance_threshold=settings.variance_threshold)
            bound = min(pve.suggested_upper_bound, settings.max_dimensions)
        except ValueError as e:
            flags.append(Flag(check="dimensionality", severity="info", message=f"PCA not run: {e}"))

    with _stage("fit"):
        selection = select_dimension(
            m, model_class, max_dim=bound, likelihood=settings.irt_bic_likelihood,
            **settings.fit_options(model_class),
        )
        model = selection.best
        if not model.converged:
            flags.append(Flag(check="convergence", message=f"{model_class} {model.n_dim}-dim fit did not converge"))
        for message in model.warnings:
            flags.append(Flag(check="fit", severity="info", message=message))

    with _stage("difficulty"):
        counts = dict(zip(m.course_ids, m.observed.sum(axis=0).tolist()))
        difficulty = unidim_difficulty(model, n_students=counts)
        centering = unidim_difficulty(centering_estimates(m), n_students=counts)
        undefined = [r.course_id for r in difficulty.rows if r.flagged]
        if undefined:
            flags.append(Flag(check="difficulty", message=f"zero discrimination: {undefined}"))

    time_resolved = None
    if settings.time_resolved:
        with _stage("time_resolved"):
            if not m.has_terms:
                raise StructuralError("time-resolved fitting needs a term table")
            time_resolved, notes = fit_time_resolved(
                m, model_class, n_dim=1, bootstrap_reps=settings.bootstrap_reps,
                min_size=settings.min_offering_size, ci_level=settings.ci_level, seed=settings.seed,
            )
            flags.extend(Flag(check="time_resolved", severity="info", message=n) for n in notes)

    with _stage("checks"):
        checks = run_checks(m, model, settings, m_complete=m_complete)
        flags.extend(checks.flags)

    report = PipelineReport(
        model_class=model_class,
        n_dim=model.n_dim,
        scale=m.scale,
        settings=settings,
        n_students=m.n_students,
        n_courses=m.n_courses,
        n_observed=m.n_observed,
        binarized=prepared.binarized,
        observed_ratio=ratios,
        little=little,
        mar=mar,
        missingness=verdict,
        imputation=ImputationSummary(
            method=imputation.method, n_components=imputation.n_components,
            n_iter=imputation.n_iter, converged=imputation.converged,
        ),
        pve=pve,
        dim_upper_bound=bound,
        bic=selection.table,
        model=model,
        difficulty=difficulty,
        centering=centering,
        time_resolved=time_resolved,
        q3=checks.q3,
        residual_pca=checks.residual_pca,
        split_half=checks.split_half,
        validity=checks.validity,
        flags=flags,
    )
    logger.info("Pipeline finished: %s %d-dim, %d flags", model_class, model.n_dim, len(flags))
    return report


def dcf_entrypoint(
    m: CourseResponseMatrix,
    model: LatentModel,
    groups: GroupAssignment,
    course_name: Optional[str] = None,
    settings: Optional[PipelineConfig] = None,
) -> List[DcfResult]:
    """
    DCF for one course (no correction) or all courses (BH-corrected).

    Args:
        m: Prepared matrix the model was fitted on
        model: Fitted model, e.g. ``report.model``
        groups: Group codes; ids absent from the matrix are an error
        course_name: Single course to test; all courses when None
    """
    settings = settings or PipelineConfig()
    unmatched = groups.unmatched(m.student_ids)
    if unmatched:
        raise StructuralError(f"Group file lists unknown students: {unmatched[:10]}")
    if course_name is not None:
        return [dcf_course(m, model, course_name, groups, test=settings.dcf_test, min_group=settings.dcf_min_group)]
    return dcf_all(m, model, groups, q=settings.fdr_q, test=settings.dcf_test, min_group=settings.dcf_min_group)


def fitted_matrix(m: CourseResponseMatrix, settings: PipelineConfig) -> Tuple[CourseResponseMatrix, str]:
    """Prepared matrix and model class, as run_method would fit them."""
    prepared = prepare_matrix(m, settings)
    return prepared.matrix, prepared.model_class

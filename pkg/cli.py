#!/usr/bin/env python3
"""
Command-line entry point.

    python cli.py run --data grades.csv --lowest-grade 5 --direction descending --out out/
    python cli.py dcf --data grades.csv --lowest-grade 0 --kind binary --groups groups.csv
    python cli.py simulate --config scenario.cfg --out data/files/sim
    python cli.py check --data grades.csv --lowest-grade 0 --model out/model.json
    python cli.py study baseline --students 500 --replicates 3 --out out/studies

Exit codes: 0 success (flags allowed), 1 data/config/IO error,
2 non-converged fit under --strict.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

import config
from data.errors import CourseDataError, StructuralError
from data.generator import (
    save_drift,
    save_groups,
    save_simulation,
    simulate_choice_bias,
    simulate_dcf,
    simulate_drift,
    simulate_irt,
)
from data.grades import cohort_groups, load_groups, load_matrix, load_terms
from data.schema import CourseResponseMatrix, DriftConfig, GradeScaleSpec, SimulationConfig
from models.schema import LatentModel
from pipeline import studies
from pipeline.report import emit_checks, emit_report, write_dcf
from pipeline.runner import dcf_entrypoint, fitted_matrix, run_checks, run_method
from pipeline.settings import PipelineConfig, load_pipeline_config, load_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
STUDIES = ("baseline", "imputation", "time", "trajectories", "choice")


def _add_data_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", type=Path, required=True, help="Grade matrix (CSV/TSV)")
    parser.add_argument("--lowest-grade", type=float, required=True, help="Worst possible grade")
    parser.add_argument("--direction", choices=["ascending", "descending"], default="ascending")
    parser.add_argument("--kind", choices=["binary", "ordinal", "continuous"], default="continuous")
    parser.add_argument("--pass-threshold", type=float, default=None, help="Passing grade (input units)")
    parser.add_argument("--terms", type=Path, default=None, help="Term table in the grade-file layout")
    parser.add_argument("--min-observed", type=int, default=None, help="Minimum grades per student")


def _add_common_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="Flat key=value settings file")
    parser.add_argument("--seed", type=int, default=None, help="Random seed")
    parser.add_argument("--out", type=Path, default=config.OUTPUT_DIR, help="Output directory")
    parser.add_argument("--strict", action="store_true", help="Exit 2 when a fit does not converge")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="Warnings only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coursegauge",
        description="Course difficulty and student trait estimation",
    )
    verbs = parser.add_subparsers(dest="verb", required=True)

    run = verbs.add_parser("run", help="Full pipeline: checks, fit, difficulty report")
    _add_data_args(run)
    _add_common_args(run)
    run.add_argument("--model", choices=["agm", "irt"], default=None, help="Force a model class")
    run.add_argument("--format", choices=["json", "tables", "all"], default="all")
    run.add_argument("--time-resolved", action="store_true", help="Per-offering difficulty (needs --terms)")
    run.add_argument("--groups", default=None, help="Group file for DCF, or 'cohort'")
    run.add_argument("--q", type=float, default=None, help="FDR level for DCF")

    dcf = verbs.add_parser("dcf", help="Differential course functioning")
    _add_data_args(dcf)
    _add_common_args(dcf)
    dcf.add_argument("--groups", required=True, help="student_id,group file with codes -1/1, or 'cohort'")
    dcf.add_argument("--model", type=Path, default=None, help="model.json from a previous run")
    dcf.add_argument("--course", default=None, help="Test one course (no FDR correction)")
    dcf.add_argument("--q", type=float, default=None, help="FDR level")

    simulate = verbs.add_parser("simulate", help="Generate a ground-truth dataset")
    _add_common_args(simulate)
    simulate.add_argument("--students", type=int, default=None)
    simulate.add_argument("--courses", type=int, default=None)

    check = verbs.add_parser("check", help="Assumption checks on an existing model")
    _add_data_args(check)
    _add_common_args(check)
    check.add_argument("--model", type=Path, required=True, help="model.json from a previous run")

    study = verbs.add_parser("study", help="Simulation study written as CSV")
    study.add_argument("name", choices=STUDIES)
    _add_common_args(study)
    study.add_argument("--students", type=int, default=config.SIM_STUDENTS)
    study.add_argument("--courses", type=int, default=config.SIM_COURSES)
    study.add_argument("--dim", type=int, choices=[1, 2], default=1)
    study.add_argument("--kind", choices=["binary", "continuous"], default="binary")
    study.add_argument("--replicates", type=int, default=config.SIM_REPLICATES)
    study.add_argument("--scenario", default="course_drift_with_shock", help="Drift scenario (trajectories)")
    return parser


def configure_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def _settings(args: argparse.Namespace) -> PipelineConfig:
    overrides = {
        "seed": args.seed,
        "min_observed": getattr(args, "min_observed", None),
        "fdr_q": getattr(args, "q", None),
        "strict": args.strict or None,
    }
    if args.verb == "run":
        overrides["model_class"] = args.model
        overrides["time_resolved"] = args.time_resolved or None
    return load_pipeline_config(args.config, overrides)


def _matrix(args: argparse.Namespace) -> CourseResponseMatrix:
    scale = GradeScaleSpec(
        lowest_grade=args.lowest_grade,
        direction=args.direction,
        kind=args.kind,
        pass_threshold=args.pass_threshold,
    )
    m = load_matrix(args.data, scale)
    if args.terms is not None:
        m = load_terms(args.terms, m)
    return m


def _groups(source: str, m: CourseResponseMatrix):
    if source == "cohort":
        return cohort_groups(m)
    return load_groups(source, m)


def _load_model(path: Path) -> LatentModel:
    try:
        return LatentModel.from_json(Path(path).read_text(encoding="utf-8"))
    except (ValueError, KeyError) as e:
        raise StructuralError(f"Cannot read model file {path}: {e}") from e


def cmd_run(args: argparse.Namespace) -> int:
    settings = _settings(args)
    m = _matrix(args)
    report = run_method(m, settings)
    if args.groups is not None:
        prepared, _ = fitted_matrix(m, settings)
        report.dcf = dcf_entrypoint(prepared, report.model, _groups(args.groups, prepared), settings=settings)
    emit_report(report, args.out, fmt=args.format)

    print(f"✓ {report.model_class.upper()} {report.n_dim}-dim model, {len(report.flags)} flags -> {args.out}")
    for flag in report.flags:
        print(f"  [{flag.severity}] {flag.check}: {flag.message}")
    if settings.strict and report.has_nonconvergence:
        logger.error("Fit did not converge (--strict)")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_dcf(args: argparse.Namespace) -> int:
    settings = _settings(args)
    m = _matrix(args)
    prepared, _ = fitted_matrix(m, settings)
    if args.model is not None:
        model = _load_model(args.model)
    else:
        model = run_method(m, settings).model
    if settings.strict and not model.converged:
        logger.error("Stage-1 model did not converge (--strict)")
        return EXIT_NOT_CONVERGED

    results = dcf_entrypoint(prepared, model, _groups(args.groups, prepared), args.course, settings)
    path = write_dcf(results, args.out)
    significant = [r.course_id for r in results if r.significant]
    print(f"✓ DCF for {len(results)} course(s) -> {path}")
    if args.course is None:
        print(f"  significant at q={settings.fdr_q}: {significant or 'none'}")
    else:
        r = results[0]
        print(f"  {r.course_id}: beta1={r.beta1}, p={r.p_raw}, note={r.note}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.config, {
        "seed": args.seed,
        "n_students": args.students,
        "n_courses": args.courses,
    })
    cfg, out = scenario.simulation, Path(args.out)
    if scenario.generator == "irt":
        save_simulation(simulate_irt(cfg, replicate=scenario.replicate), out)
    elif scenario.generator == "drift":
        save_drift(simulate_drift(cfg, scenario.drift, replicate=scenario.replicate), out)
    elif scenario.generator == "choice_bias":
        data = simulate_choice_bias(scenario.max_courses, cfg, replicate=scenario.replicate)
        save_simulation(data, out)
    else:
        data, groups = simulate_dcf(cfg, scenario.dcf_courses, scenario.dcf_effect, replicate=scenario.replicate)
        save_simulation(data, out)
        save_groups(groups, out / "groups.csv")
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    settings = _settings(args)
    prepared, _ = fitted_matrix(_matrix(args), settings)
    model = _load_model(args.model)
    checks = run_checks(prepared, model, settings)
    emit_checks(checks, args.out)

    print(f"✓ Checks on {model.model_class.upper()} {model.n_dim}-dim model, {len(checks.flags)} flags -> {args.out}")
    for flag in checks.flags:
        print(f"  [{flag.severity}] {flag.check}: {flag.message}")
    if settings.strict and not model.converged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_study(args: argparse.Namespace) -> int:
    cfg = SimulationConfig(
        n_students=args.students,
        n_courses=args.courses,
        n_dim=args.dim,
        grade_kind=args.kind,
        seed=config.RANDOM_SEED if args.seed is None else args.seed,
        replicates=args.replicates,
    )
    if args.name == "baseline":
        frame = studies.baseline_study(cfg)
    elif args.name == "imputation":
        frame = studies.imputation_reliability_study(cfg)
    elif args.name == "time":
        frame = studies.time_invariance_study(cfg)
    elif args.name == "trajectories":
        shock = 6 if args.scenario == "course_drift_with_shock" else None
        frame = studies.drift_trajectories(cfg, DriftConfig(scenario=args.scenario, shock_term=shock))
    else:
        frame = studies.choice_bias_study(cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"study_{args.name}.csv"
    frame.to_csv(path, index=False)
    print(f"✓ {args.name} study ({len(frame)} rows) -> {path}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "dcf": cmd_dcf,
    "simulate": cmd_simulate,
    "check": cmd_check,
    "study": cmd_study,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args)
    try:
        return COMMANDS[args.verb](args)
    except (CourseDataError, ValidationError, OSError) as e:
        logger.debug("Command failed", exc_info=True)
        print(f"✗ Error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

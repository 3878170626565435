#!/usr/bin/env python3
"""
Verification script to exercise the course difficulty pipeline end-to-end.

Each stage prints ✓ or ✗; the exit code is 0 only when every stage runs.
"""
import sys
import tempfile
from pathlib import Path

import numpy as np
from scipy.stats import pearsonr

from data.generator import simulate_irt
from data.schema import SimulationConfig

BINARY = simulate_irt(SimulationConfig(n_students=400, n_courses=10, grade_kind="binary"))
CONTINUOUS = simulate_irt(SimulationConfig(n_students=400, n_courses=10, grade_kind="continuous"))


def check_generation() -> None:
    print(f"✓ Simulated {BINARY.matrix.n_students} students x {BINARY.matrix.n_courses} courses")
    print(f"  - Mean pass rate: {np.nanmean(BINARY.matrix.values):.3f}")
    print(f"  - Mean continuous grade: {np.nanmean(CONTINUOUS.matrix.values):.1f}")


def check_dimensionality() -> None:
    from analysis.correlation import correlation_matrix
    from analysis.dimensionality import dim_upper_bound, pca_pve

    pve = pca_pve(correlation_matrix(CONTINUOUS.matrix))
    print(f"✓ First component explains {pve.pve[0]:.1%} of the variance")
    print(f"  - Dimension upper bound: {dim_upper_bound(pve)}")


def check_models() -> None:
    from models.selection import fit_model, unidim_difficulty

    for name, data in (("agm", CONTINUOUS), ("irt", BINARY), ("centering", CONTINUOUS)):
        model = fit_model(name, data.matrix)
        difficulty = unidim_difficulty(model).as_series()
        r = pearsonr(difficulty.to_numpy(), data.delta[:, 0])[0]
        print(f"✓ {name.upper():<9} difficulty vs truth r = {r:.3f} (converged={model.converged})")


def check_assumptions() -> None:
    from checks.local_independence import yen_q3
    from checks.reliability import concurrent_validity, split_half_correlation
    from models.selection import fit_model

    model = fit_model("irt", BINARY.matrix)
    q3 = yen_q3(model, BINARY.matrix)
    split = split_half_correlation(BINARY.matrix, "irt", seed=0)
    validity = concurrent_validity(model, BINARY.matrix)
    print(f"✓ Q3 violations: {len(q3.violations)}/{q3.n_pairs}")
    print(f"  - Split-half r: students={split.student_corr:.3f}, courses={split.course_corr:.3f}")
    print(f"  - Concurrent validity |r|: courses={validity.course_r:.3f}")


def check_pipeline() -> None:
    from pipeline.report import emit_report
    from pipeline.runner import run_method

    report = run_method(CONTINUOUS.matrix)
    with tempfile.TemporaryDirectory() as tmp:
        written = emit_report(report, Path(tmp))
    print(f"✓ {report.model_class.upper()} {report.n_dim}-dim model, {len(report.flags)} flags")
    print(f"  - {len(written)} report files written")


STAGES = [
    ("Data generation", check_generation),
    ("Correlation & PVE", check_dimensionality),
    ("Model fitting", check_models),
    ("Assumption checks", check_assumptions),
    ("Full pipeline", check_pipeline),
]


def main() -> int:
    print("CourseGauge verification")
    print("=" * 60)
    results = {}
    for name, stage in STAGES:
        print(f"\n{name}\n" + "-" * 60)
        try:
            stage()
            results[name] = True
        except Exception as e:
            print(f"✗ Error: {e}")
            results[name] = False

    print("\n" + "=" * 60)
    for name, ok in results.items():
        print(f"{name:.<40} {'PASS' if ok else 'FAIL'}")
    passed = sum(results.values())
    print(f"\n{passed}/{len(results)} stages passed")
    if passed < len(results):
        return 1
    print("Next: python cli.py run --data <grades.csv> --lowest-grade <g> --out output/")
    return 0


if __name__ == "__main__":
    sys.exit(main())

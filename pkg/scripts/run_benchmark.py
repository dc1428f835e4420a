#!/usr/bin/env python3
"""End-to-end benchmark run: validate, solve, diagnose, cross-check by Monte Carlo.

Usage:
    python scripts/run_benchmark.py [--out OUT_DIR] [--paths N]

Prints a compact summary of the solve (regions, residual), the diagnostics
report, and the Monte Carlo comparison of the extracted policy against the
grid value at the origin.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from jdimpulse import (
    build_stencil,
    estimate_cost,
    extract_policy,
    lipschitz_bound,
    solve_qvi,
    validate_assumptions,
)
from jdimpulse.cli import save_result
from jdimpulse.diagnostics import run_all
from jdimpulse.presets import benchmark_1d


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="out/benchmark")
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--dt", type=float, default=0.005)
    args = ap.parse_args()

    model, grid = benchmark_1d()
    print("validating assumptions ...")
    rep = validate_assumptions(model, sample_count=4000, seed=0, box=(grid.lo, grid.hi))
    print(rep)
    if not rep.passed:
        return 1

    print("\nsolving the QVI ...")
    t0 = time.time()
    result = solve_qvi(model, grid)
    print(f"  done in {time.time() - t0:.1f}s, {result.outer_iterations} outer iterations")
    na, nc = result.region_counts()
    x = grid.nodes[:, 0]
    act = result.action_mask & grid.core_mask
    print(f"  residual: {result.residual_hjb:.3e}")
    print(f"  core action/continuation nodes: {na}/{nc}")
    if act.any():
        cont = ~result.action_mask & grid.core_mask
        print(f"  free boundary near |x| = {np.abs(x[cont]).max():.3f}")
    print(f"  u(0) = {float(result.value.evaluate(np.zeros(1))):.6f} "
          f"(no-intervention {float(result.no_action_value.evaluate(np.zeros(1))):.6f})")
    print(f"  value Lipschitz bound: {lipschitz_bound(model):.3f}")

    out = Path(args.out)
    save_result(result, out)
    print(f"  artifacts: {out}")

    print("\ndiagnostics (with a half-spacing solve for the rates) ...")
    refined = solve_qvi(model, grid.refine())
    report = run_all(result, model, build_stencil(model, grid), refined_result=refined)
    print(report.summary())

    print(f"\nMonte Carlo cross-check ({args.paths} paths) ...")
    policy = extract_policy(result)
    t0 = time.time()
    est = estimate_cost(model, policy, np.zeros(1), args.paths, horizon=40.0,
                        dt=args.dt, delta_cut=0.05, seed=7)
    u0 = float(result.value.evaluate(np.zeros(1)))
    print(f"  J_hat = {est.j_hat:.5f} +- {est.ci_halfwidth:.5f}, u(0) = {u0:.5f} "
          f"({time.time() - t0:.0f}s, {est.impulses_per_path:.1f} impulses/path)")
    print(f"  gap {est.j_hat - u0:+.5f} vs allowance {est.ci_halfwidth + 0.05:.5f}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())

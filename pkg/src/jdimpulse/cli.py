"""Command-line front end: validate | solve | simulate | diagnose.

One config file drives every subcommand; flags override config values.
Exit codes are a stable scripting contract: 0 success, 1 domain failure
(validation, solve or diagnostics fail), 2 usage or I/O error. Every run
that owns a result directory appends a reproducibility stanza (config
hash, seeds, grid, tolerances) to its log.txt.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, load_config
from .diagnostics import run_all
from .grids import ScalarField
from .levy import check_integrability
from .model import DiscountMarginError, validate_assumptions
from .operators import build_stencil
from .simulate import ImpulsePolicy, estimate_cost
from .solver import SolverError, solve_qvi


def _scaled_grid(cfg: Config, factor: int):
    grid = cfg.grid
    if factor <= 1:
        return grid
    from .grids import Grid

    return Grid(grid.lo, grid.hi, tuple((s - 1) * factor + 1 for s in grid.shape),
                grid.core_margin)


def _append_log(out_dir: Path, text: str) -> None:
    with open(out_dir / "log.txt", "a") as fh:
        fh.write(text)


def save_result(result, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    result.value.to_csv(out_dir / "u.csv")
    result.intervention_value.to_csv(out_dir / "mu.csv")
    result.jump_integral.to_csv(out_dir / "iu.csv")
    grid = result.grid
    with open(out_dir / "regions.csv", "w") as fh:
        fh.write(",".join(f"x{k}" for k in range(grid.dim)) + ",action\n")
        for x, a in zip(grid.nodes, result.action_mask):
            fh.write(",".join(repr(float(c)) for c in x) + f",{int(a)}\n")
    with open(out_dir / "policy.csv", "w") as fh:
        cols = [f"x{k}" for k in range(grid.dim)] + [f"xi{k}" for k in range(grid.dim)]
        fh.write(",".join(cols) + "\n")
        for i in np.nonzero(result.action_mask)[0]:
            row = list(grid.nodes[i]) + list(result.policy[i])
            fh.write(",".join(repr(float(c)) for c in row) + "\n")
    na, nc = result.region_counts()
    meta = {
        "residual_hjb": result.residual_hjb,
        "outer_iterations": result.outer_iterations,
        "tol_outer": result.tol_outer,
        "tol_region": result.tol_region,
        "search_radius": result.search_radius,
        "off_box_fraction_core": result.off_box_fraction_core,
        "source_sup": result.source_sup,
        "action_nodes_core": na,
        "continuation_nodes_core": nc,
    }
    with open(out_dir / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=1)
    lines = ["solve log:"]
    for i, d in enumerate(result.outer_history):
        lines.append(f"outer {i + 1}: |u_new - u_old| = {d:.6e}")
    lines.append("penalty schedule (eps, slope_scale, sup_beta, floor_M):")
    for e in result.penalty_log:
        lines.append(f"  {e.eps:.6e} {e.slope_scale:.6e} {e.sup_beta:.6e} {e.obstacle_floor:.6e}")
    lines.append(f"residual_hjb: {result.residual_hjb:.6e}")
    _append_log(out_dir, "\n".join(lines) + "\n")


def load_result_dir(result_dir: Path):
    """(u, mu, iu, action_mask, displacements, meta) from a solve directory."""
    u = ScalarField.from_csv(result_dir / "u.csv")
    mu = ScalarField.from_csv(result_dir / "mu.csv")
    iu = ScalarField.from_csv(result_dir / "iu.csv")
    grid = u.grid
    action = np.zeros(grid.n_nodes, dtype=bool)
    with open(result_dir / "regions.csv") as fh:
        next(fh)
        for i, line in enumerate(fh):
            action[i] = bool(int(line.rsplit(",", 1)[1]))
    xi = np.zeros((grid.n_nodes, grid.dim))
    with open(result_dir / "policy.csv") as fh:
        next(fh)
        for line in fh:
            vals = [float(v) for v in line.split(",")]
            x = np.asarray(vals[: grid.dim])
            idx = int(grid.nearest_index(x[None, :])[0])
            xi[idx] = vals[grid.dim :]
    meta = json.loads((result_dir / "meta.json").read_text())
    return u, mu, iu, action, xi, meta


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    report = validate_assumptions(cfg.model, box=(cfg.grid.lo, cfg.grid.hi))
    cert = check_integrability(cfg.model.levy, cfg.model, cfg.grid.nodes[:: max(1, cfg.grid.n_nodes // 64)])
    if not args.quiet:
        print(report)
        print(cert)
        print(cfg.reproducibility_stanza())
    return 0 if (report.passed and cert.passed) else 1


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    grid = _scaled_grid(cfg, args.grid_scale)
    out = Path(args.out)
    try:
        result = solve_qvi(cfg.model, grid, cfg.solver)
    except (SolverError, DiscountMarginError) as exc:
        out.mkdir(parents=True, exist_ok=True)
        _append_log(out, f"solve failed: {exc}\n" + cfg.reproducibility_stanza())
        print(f"solve failed: {exc}", file=sys.stderr)
        print(f"log: {out / 'log.txt'}", file=sys.stderr)
        return 1
    save_result(result, out)
    _append_log(out, cfg.reproducibility_stanza({"grid_scale": args.grid_scale}))
    na, nc = result.region_counts()
    if not args.quiet:
        print(f"residual_hjb: {result.residual_hjb:.3e}")
        print(f"outer iterations: {result.outer_iterations}")
        print(f"core action/continuation nodes: {na}/{nc}")
        print(f"artifacts: {out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    rdir = Path(args.result_dir)
    if not (rdir / "policy.csv").exists() or not (rdir / "u.csv").exists():
        print(f"no solve artifacts (policy.csv, u.csv) in {rdir}", file=sys.stderr)
        return 2
    u, mu, iu, action, xi, meta = load_result_dir(rdir)
    policy = ImpulsePolicy.from_regions(u.grid, action, xi)
    sim = cfg.simulate
    n_paths = args.paths or sim.n_paths
    dt = args.dt or sim.dt
    horizon = args.horizon or sim.horizon
    seed = sim.seed if args.seed is None else args.seed
    x0 = np.asarray(sim.x0, dtype=float)
    est = estimate_cost(cfg.model, policy, x0, n_paths, horizon, dt, sim.delta_cut, seed)
    u_pde = float(u.evaluate(x0))
    with open(rdir / "mc_summary.csv", "w") as fh:
        fh.write("x0,n_paths,seed,dt,horizon,j_hat,ci_halfwidth,truncation_bias,"
                 "u_pde,impulses_per_path,landing_violations\n")
        fh.write(f"\"{list(x0)}\",{n_paths},{seed},{dt},{horizon},"
                 f"{est.j_hat!r},{est.ci_halfwidth!r},{est.truncation_bias!r},"
                 f"{u_pde!r},{est.impulses_per_path!r},{est.landing_violations}\n")
    _append_log(rdir, cfg.reproducibility_stanza(
        {"mc_seed": seed, "mc_paths": n_paths, "mc_dt": dt, "mc_horizon": horizon}))
    if not args.quiet:
        print(f"J_hat = {est.j_hat:.6f} +- {est.ci_halfwidth:.6f} (95% CI)")
        print(f"u_pde(x0) = {u_pde:.6f}; gap = {est.j_hat - u_pde:+.6f}")
        print(f"truncation bias bound: {est.truncation_bias:.3e}")
        print(f"summary: {rdir / 'mc_summary.csv'}")
    return 0


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config)
    rdir = Path(args.result_dir)
    required = ["u.csv", "mu.csv", "iu.csv", "regions.csv", "meta.json"]
    if not all((rdir / f).exists() for f in required):
        print(f"missing solve artifacts in {rdir} (need {', '.join(required)})", file=sys.stderr)
        return 2
    u, mu, iu, action, xi, meta = load_result_dir(rdir)
    stencil = build_stencil(cfg.model, u.grid, cfg.solver.scheme)

    from .solver import SolveResult

    result = SolveResult(
        value=u, intervention_value=mu, jump_integral=iu, action_mask=action,
        policy=xi, residual_hjb=meta["residual_hjb"],
        outer_iterations=meta["outer_iterations"], penalty_log=[], outer_history=[],
        no_action_value=u, tol_outer=meta["tol_outer"], tol_region=meta["tol_region"],
        search_radius=meta["search_radius"],
        off_box_fraction_core=meta["off_box_fraction_core"],
        source_sup=meta["source_sup"], model=cfg.model, params=cfg.solver,
    )
    refined = None
    if args.refine:
        refined = solve_qvi(cfg.model, u.grid.refine(), cfg.solver)
    report = run_all(result, cfg.model, stencil, cfg.diagnostics, refined_result=refined)
    report.to_csv(rdir / "diagnostics.csv")
    _append_log(rdir, report.summary() + "\n" + cfg.reproducibility_stanza())
    if not args.quiet:
        print(report.summary())
        print(f"report: {rdir / 'diagnostics.csv'}")
    return 0 if report.passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="jdimpulse",
        description="impulse-control QVI solver and verification suite for jump diffusions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, result_dir=False):
        p.add_argument("--config", required=True, help="TOML or JSON config file")
        p.add_argument("--quiet", action="store_true")
        if result_dir:
            p.add_argument("result_dir", help="directory with solve artifacts")

    p = sub.add_parser("validate", help="audit model assumptions and integrability")
    common(p)

    p = sub.add_parser("solve", help="solve the QVI and write result artifacts")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--grid-scale", type=int, default=1,
                   help="resolution multiplier ((N-1)*scale + 1 nodes per axis)")

    p = sub.add_parser("simulate", help="Monte Carlo cost of the solved policy")
    common(p, result_dir=True)
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--horizon", type=float, default=None)

    p = sub.add_parser("diagnose", help="run the verification checks on a solve")
    common(p, result_dir=True)
    p.add_argument("--refine", action="store_true", default=True,
                   help="also solve at half spacing for refinement-rate checks")
    p.add_argument("--no-refine", dest="refine", action="store_false")

    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "solve":
            return cmd_solve(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "diagnose":
            return cmd_diagnose(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 2
    except (SolverError, DiscountMarginError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())

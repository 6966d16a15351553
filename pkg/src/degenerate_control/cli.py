"""Command line harness: validate | solve | carleman | observability | hum | sweep | identity-check.

Every subcommand writes its tables (CSV), a JSON summary and, unless
--no-figures is given, PNG figures into the output directory.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import carleman, hum
from .config import ConfigError, RunConfig, default_config
from .mesh import GridError, l2_norm, read_field_csv, write_field_csv
from .profile import validate_hypotheses
from .reports import write_json, write_table, write_xy
from .solver import (SCHEMES, ZERO_POTENTIAL, StepOperators, energy_report, solve_adjoint,
                     solve_forward)

log = logging.getLogger("degenerate_control")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _figures(args):
    if args.no_figures:
        return None
    from . import plotting
    return plotting


def _outdir(args, cfg) -> Path:
    out = Path(args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_validate(cfg: RunConfig, args) -> int:
    profile = cfg.build_profile()
    report = validate_hypotheses(profile, tuple(cfg.omega), cfg.delta)
    width = max(len(k) for k in report.flags())
    print(f"profile {profile.kind} A={profile.A:g} B={profile.B:g} "
          f"alpha={profile.alpha:g} beta={profile.beta:g}  omega=({cfg.omega[0]:g}, {cfg.omega[1]:g})"
          f"  delta={cfg.delta:g}")
    for name, ok in report.flags().items():
        print(f"  {name:<{width}}  {'pass' if ok else 'FAIL'}")
    print(f"  {'m_delta':<{width}}  {report.m_delta:.6g}")
    for msg in report.messages:
        print(f"  note: {msg}")
    out = _outdir(args, cfg)
    write_json(out / "validate.json", report.to_dict())
    return EXIT_OK if report.all_ok else EXIT_FAIL


def _read_slice(path, grid, name):
    _, values = read_field_csv(path, grid)
    if values.shape[0] != 1:
        raise GridError(f"{name}: expected a single row, got {values.shape[0]}")
    return values[0]


def _read_field(path, grid, name):
    _, values = read_field_csv(path, grid)
    if values.shape != (grid.m + 1, grid.n):
        raise GridError(f"{name}: expected {grid.m + 1} rows, got {values.shape[0]}")
    return values


def cmd_solve(cfg: RunConfig, args) -> int:
    grid = cfg.build_grid()
    problem = cfg.build_problem(grid)
    ops = StepOperators(problem, grid)
    data = _read_slice(args.initial, grid, "--initial") if args.initial else None
    source = _read_field(args.source, grid, "--source") if args.source else None
    out = _outdir(args, cfg)

    if args.mode == "forward":
        u0 = problem.initial(grid) if data is None else data
        problem = problem.with_u0(u0)
        if args.scheme == "crank_nicolson":
            traj = solve_forward(problem, source, grid, scheme=args.scheme)
        else:
            traj = solve_forward(problem, source, grid, ops=ops)
        energy = energy_report(problem, traj, source, grid)
        start, end = traj[0], traj[-1]
        labels = ("u(x, 0)", "u(x, T)")
    else:
        if args.scheme != "implicit":
            raise ConfigError("--scheme", "the adjoint march is implicit Euler only")
        vT = np.zeros(grid.n) if data is None else data
        traj = solve_adjoint(problem, vT, source, grid, ops=ops)
        # the adjoint runs backward: report its energy in reversed time
        energy = energy_report(problem.with_u0(vT), traj[::-1], None if source is None
                               else source[::-1], grid)
        start, end = traj[-1], traj[0]
        labels = ("v(x, T)", "v(x, 0)")

    write_field_csv(out / "trajectory.csv", traj, grid)
    write_json(out / "energy.json", dict(energy.to_dict(), mode=args.mode))
    write_xy(out / "final_profile.csv", "x", "value", grid.x, end)
    print(f"{args.mode} solve: n={grid.n} m={grid.m} T={grid.T:g}  "
          f"|final|={l2_norm(end, grid):.6g}  C_emp={energy.c_emp:.6g}")
    plots = _figures(args)
    if plots:
        plots.plot_profiles(out / "solve.png", grid.x, {labels[0]: start, labels[1]: end},
                            title=f"{args.mode} solve", shade=problem.omega)
    return EXIT_OK


def _seed(cfg, args):
    return cfg.carleman.seed if args.seed is None else args.seed


def cmd_carleman(cfg: RunConfig, args) -> int:
    grid = cfg.build_grid()
    problem = cfg.build_problem(grid)
    seed = _seed(cfg, args)
    c = cfg.carleman
    params = cfg.carleman_params()
    reports = carleman.ratio_study(problem, params, c.s_list, c.lambda_list, c.sample_count,
                                   seed, grid)
    out = _outdir(args, cfg)
    write_table(out / "carleman_study.csv", carleman.CSV_COLUMNS, [r.row() for r in reports])
    maxima = carleman.max_ratios(reports)
    summary = {
        "seed": seed,
        "max_ratio": [{"s": s, "lambda": lam, "ratio": v} for (s, lam), v in sorted(maxima.items())],
        "degenerate_samples": sum(r.degenerate for r in reports),
        "all_finite": all(math.isfinite(r.ratio) for r in reports if not r.degenerate),
        "hip3_bound": carleman.hip3_bound(problem.profile, params, grid),
    }
    write_json(out / "carleman_summary.json", summary)
    table = {}
    for lam in c.lambda_list:
        s_vals = [float(s) for s in c.s_list]
        ratios = [maxima.get((s, float(lam)), math.nan) for s in s_vals]
        write_xy(out / f"max_ratio_lambda_{lam:g}.csv", "s", "max_ratio", s_vals, ratios)
        table[float(lam)] = (s_vals, ratios)
    for row in summary["max_ratio"]:
        print(f"s={row['s']:<6g} lambda={row['lambda']:<6g} max ratio={row['ratio']:.6g}")
    plots = _figures(args)
    if plots:
        plots.plot_ratios(out / "carleman_ratios.png", table, title="Carleman ratio study")
    return EXIT_OK


def cmd_observability(cfg: RunConfig, args) -> int:
    grid = cfg.build_grid()
    problem = cfg.build_problem(grid)
    seed = _seed(cfg, args)
    study = carleman.observability_study(problem, cfg.carleman_params(), cfg.carleman.sample_count,
                                         seed, grid)
    out = _outdir(args, cfg)
    rows = []
    for i, (lq, pq) in enumerate(zip(study.log_quotients, study.plain_quotients)):
        rows.append({"sample_id": i, "log_quotient": lq,
                     "quotient": math.inf if lq > 709 else math.exp(lq), "plain_quotient": pq})
    write_table(out / "observability.csv", ("sample_id", "log_quotient", "quotient",
                                            "plain_quotient"), rows)
    write_json(out / "observability_summary.json", {
        "seed": seed, "s": cfg.carleman.s, "lambda": cfg.carleman.lam,
        "max_log_quotient": study.max_log_quotient,
        "max_plain_quotient": study.max_plain_quotient,
    })
    write_xy(out / "log_quotient.csv", "sample_id", "log_quotient",
             range(len(rows)), study.log_quotients)
    print(f"max log quotient {study.max_log_quotient:.6g}, "
          f"max unweighted quotient {study.max_plain_quotient:.6g}")
    plots = _figures(args)
    if plots:
        plots.plot_samples(out / "observability.png", list(range(len(rows))),
                           study.log_quotients, "log quotient", title="weighted observability")
    return EXIT_OK


def cmd_hum(cfg: RunConfig, args) -> int:
    grid = cfg.build_grid()
    problem = cfg.build_problem(grid)
    h = cfg.hum
    res = hum.hum_solve(problem, h.eps, h.tol, h.max_iter, grid)
    out = _outdir(args, cfg)
    write_field_csv(out / "control.csv", res.f_eps, grid)
    write_field_csv(out / "terminal.csv", res.u_eps[-1], grid)
    write_field_csv(out / "phiT.csv", res.phiT, grid)
    write_xy(out / "terminal_profile.csv", "x", "u_T", grid.x, res.u_eps[-1])
    summary = dict(res.summary(), optimality_gap=hum.optimality_gap(problem, res, grid),
                   u0_norm_sq=l2_norm(problem.initial(grid), grid) ** 2)
    write_json(out / "hum_summary.json", summary)
    print(f"eps={res.eps:g} cost={res.cost:.6g} |u(T)|^2={res.terminal_sq:.6g} "
          f"CG iterations={res.cg_iterations} residual={res.cg_residual:.3g}")
    plots = _figures(args)
    if plots:
        free = solve_forward(problem, None, grid)[-1]
        plots.plot_profiles(out / "terminal.png", grid.x,
                            {"u0": problem.initial(grid), "uncontrolled u(T)": free,
                             "controlled u(T)": res.u_eps[-1]},
                            title=f"penalized HUM, eps={res.eps:g}", shade=problem.omega)
        plots.plot_field(out / "control.png", grid.x, grid.t_nodes, res.f_eps,
                         title="control f_eps", label="f")
    if not res.converged:
        print("warning: CG did not converge", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    grid = cfg.build_grid()
    problem = cfg.build_problem(grid)
    h = cfg.hum
    report = hum.eps_sweep(problem, h.eps_list, h.tol, grid, h.max_iter)
    out = _outdir(args, cfg)
    write_table(out / "sweep.csv", hum.SWEEP_COLUMNS, [r.row() for r in report.rows])
    eps = report.column("eps")
    write_xy(out / "cost_ratio.csv", "eps", "cost_ratio", eps, report.column("cost_ratio"))
    write_xy(out / "terminal_ratio.csv", "eps", "terminal_ratio", eps,
             report.column("terminal_ratio"))
    write_json(out / "sweep_summary.json", {
        "u0_norm_sq": report.u0_norm_sq,
        "unconverged_eps": report.warnings,
        "rows": [dict(r.row(), converged=r.converged) for r in report.rows],
    })
    for r in report.rows:
        print(f"eps={r.eps:<8g} cost/|u0|^2={r.cost_ratio:<12.6g} "
              f"|u(T)|^2/(eps|u0|^2)={r.terminal_ratio:<12.6g} iterations={r.cg_iterations}")
    plots = _figures(args)
    if plots:
        plots.plot_sweep(out / "sweep.png", eps, report.column("cost_ratio"),
                         report.column("terminal_ratio"), title="penalty sweep")
    if report.warnings:
        print(f"warning: CG did not converge for eps in {report.warnings}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_identity(cfg: RunConfig, args) -> int:
    grid = cfg.build_grid()
    # the conjugated identity is stated for c = 0
    problem = replace(cfg.build_problem(grid), potential=ZERO_POTENTIAL)
    ops = StepOperators(problem, grid)
    vT, h = carleman.draw_sample(_seed(cfg, args), 0, grid, ops)
    v = solve_adjoint(problem, vT, h, grid, ops=ops)
    params = cfg.carleman_params()
    rep = carleman.z_transform_report(v, h, params, problem, grid)
    collapsed = carleman.z_transform_identity(v, h, replace(params, s=0.0), problem, grid)
    plain = carleman.plain_pde_residual(v, h, problem.profile, grid)
    out = _outdir(args, cfg)
    write_json(out / "identity.json", {
        "s": params.s, "lambda": params.lam, "residual": rep.residual,
        "energy_gap": rep.energy_gap, "log_norm_sq": rep.log_norm_sq,
        "residual_s0": collapsed, "plain_pde_residual": plain,
    })
    print(f"s={params.s:g} lambda={params.lam:g}: relative residual {rep.residual:.6g}; "
          f"s=0 residual {collapsed:.6g} (plain PDE residual {plain:.6g})")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "carleman": cmd_carleman,
    "observability": cmd_observability,
    "hum": cmd_hum,
    "sweep": cmd_sweep,
    "identity-check": cmd_identity,
}

HELP = {
    "validate": "check the profile, geometry and window hypotheses",
    "solve": "forward or adjoint march with energy report",
    "carleman": "sampled Carleman ratio study over (s, lambda)",
    "observability": "observability quotients for sampled terminal data",
    "hum": "penalized HUM control for one eps",
    "sweep": "eps sweep of penalized controls",
    "identity-check": "conjugated identity residual against the plain equation",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON (default: built-in)")
    common.add_argument("--out", help="output directory (default: config 'output')")
    common.add_argument("--seed", type=int, help="override the study seed")
    common.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="degenerate-control", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=HELP[name])
        if name == "solve":
            p.add_argument("--mode", choices=("forward", "adjoint"), default="forward")
            p.add_argument("--scheme", choices=SCHEMES, default="implicit",
                           help="time stepping of the forward march")
            p.add_argument("--initial", help="slice CSV: u0 (forward) or vT (adjoint)")
            p.add_argument("--source", help="field CSV: f (forward) or h (adjoint)")
    sub.add_parser("print-config", help="print the default configuration")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "print-config":
        print(default_config().to_json())
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else default_config()
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed", "must be nonnegative")
            cfg.carleman.seed = args.seed
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, GridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Closed-form and pinned reference values for each public operation."""

import hashlib
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from degenerate_control import carleman, hum
from degenerate_control.cli import main
from degenerate_control.config import default_config
from degenerate_control.mesh import (GridError, build_grid, h1a_seminorm, l2_norm,
                                     read_field_csv, spacetime_inner)
from degenerate_control.profile import make_constant_profile, make_power_profile
from degenerate_control.solver import (ZERO_POTENTIAL, ControlProblem, StepOperators,
                                       duality_check, energy_check, solve_adjoint,
                                       solve_forward)

OMEGA = (0.3, 0.7)
HEAT = make_constant_profile(1.0)
DEGENERATE = make_power_profile(0.4, 0.6, 2.0, 2.0)

# first-run pins on the default configuration
PIN_TERMINAL_RATIO = 1.1392884843281663
PIN_FORWARD_DIGEST = "2d7012a752da715c3b7c168b9a3404a0cab78351f4e3b2d582ef2554c42b3c7e"


def _heat(T, n=199, m=400, u0=True):
    grid = build_grid(n, m, T)
    problem = ControlProblem(HEAT, OMEGA, T, np.sin(np.pi * grid.x) if u0 else None)
    return grid, problem


# profile

def test_single_point_degeneracy():
    prof = make_power_profile(0.4, 0.4, 3.0, 2.0)
    assert prof(0.4) == 0.0
    assert prof(0.3) == pytest.approx(1e-3)


def test_profile_point_values():
    assert DEGENERATE(0.2) == pytest.approx(0.04)
    assert DEGENERATE(0.2, 1) == pytest.approx(-0.4)
    assert DEGENERATE(0.5, 1) == 0.0
    assert DEGENERATE(0.8, 2) == pytest.approx(2.0)


# grids and norms

def test_grid_steps():
    g = build_grid(3, 4, 1.0)
    assert (g.h, g.dt) == (0.25, 0.25)
    g = build_grid(99, 200, 0.5)
    assert g.h == pytest.approx(0.01) and g.dt == pytest.approx(0.0025)
    with pytest.raises(GridError):
        build_grid(0, 4, 1.0)


def test_slice_norms():
    g = build_grid(199, 4, 1.0)
    assert l2_norm(np.zeros(g.n), g) == 0.0
    assert l2_norm(np.sin(np.pi * g.x), g) == pytest.approx(math.sqrt(0.5), abs=1e-4)
    g99 = build_grid(99, 4, 1.0)
    assert l2_norm(np.ones(g99.n), g99) == pytest.approx(math.sqrt(0.99), rel=1e-12)


def test_weighted_seminorm():
    g = build_grid(199, 4, 1.0)
    assert h1a_seminorm(np.zeros(g.n), HEAT, g) == 0.0
    assert h1a_seminorm(np.sin(np.pi * g.x), HEAT, g) == pytest.approx(math.pi / math.sqrt(2),
                                                                      abs=1e-2)
    bump = np.where(np.abs(g.x - 0.5) <= 0.05, 1.0 + g.x, 0.0)
    assert h1a_seminorm(bump, DEGENERATE, g) == 0.0


def test_spacetime_inner_values():
    g = build_grid(99, 100, 1.0)
    ones = np.ones((g.m + 1, g.n))
    assert spacetime_inner(np.zeros_like(ones), ones, g) == 0.0
    assert spacetime_inner(ones, ones, g) == pytest.approx(0.99, rel=1e-12)
    assert spacetime_inner(ones, ones, g, window=OMEGA) == pytest.approx(0.4, abs=0.011)


# solver

def test_heat_peak_after_decay():
    grid, problem = _heat(0.1)
    u = solve_forward(problem, None, grid)
    exact = math.exp(-math.pi**2 * 0.1)
    assert u[-1].max() == pytest.approx(exact, abs=2e-3)
    assert np.max(np.abs(u[-1] - exact * np.sin(np.pi * grid.x))) < 2e-3


def test_zero_data_gives_zero_trajectories():
    grid, problem = _heat(0.1, n=31, m=20, u0=False)
    assert not np.any(solve_forward(problem, None, grid))
    assert not np.any(solve_adjoint(problem, np.zeros(grid.n), None, grid))
    assert duality_check(problem, np.zeros(grid.n), None, np.zeros(grid.n), grid) == 0.0
    rep = energy_check(problem, None, grid)
    assert rep.sup_sq == 0.0 and rep.h1a_integral == 0.0


def test_degenerate_self_convergence():
    def terminal(n, m):
        grid = build_grid(n, m, 0.5)
        problem = ControlProblem(DEGENERATE, OMEGA, 0.5, np.sin(np.pi * grid.x))
        return solve_forward(problem, None, grid)[-1]

    coarse, fine = terminal(199, 400), terminal(799, 6400)
    # coarse node i/200 is fine node 4i/800
    assert np.max(np.abs(coarse - fine[4 * np.arange(1, 200) - 1])) < 2e-3
    assert coarse[99] == pytest.approx(fine[399], abs=1e-12)


def test_adjoint_heat_decay():
    grid, problem = _heat(0.1)
    v = solve_adjoint(problem, np.sin(np.pi * grid.x), None, grid)
    exact = math.exp(-math.pi**2 * 0.1) * np.sin(np.pi * grid.x)
    assert np.max(np.abs(v[0] - exact)) < 2e-3


def test_energy_sup_attained_at_start():
    grid, problem = _heat(0.5, n=99, m=100)
    rep = energy_check(problem, None, grid)
    assert rep.sup_sq == pytest.approx(0.5, abs=1e-3)
    assert rep.norms_sq.argmax() == 0


def test_empirical_energy_constant_is_uniform():
    grid = build_grid(63, 80, 0.5)
    rng = np.random.default_rng(10)
    consts = []
    for _ in range(10):
        problem = ControlProblem(DEGENERATE, OMEGA, grid.T, rng.standard_normal(grid.n))
        consts.append(energy_check(problem, rng.standard_normal((grid.m + 1, grid.n)), grid).c_emp)
    assert max(consts) < 2.0 and min(consts) > 0.5


# weights and Carleman functionals

def test_weight_profile_values():
    grid = build_grid(199, 400, 1.0)
    tab = carleman.build_weights(carleman.CarlemanParams(1.0, 1.0, 1.0, 0.5, 0.15), grid)
    k = int(np.argmin(np.abs(tab.t - 0.5)))
    assert tab.eta[0] == pytest.approx(-0.125) and tab.eta[100] == 0.0
    assert tab.params.eta_inf == pytest.approx(0.125)
    assert tab.xi[k, 100] == pytest.approx(328.71, abs=5e-3)
    assert tab.sigma[k, 100] == pytest.approx(93.36, abs=5e-3)
    assert tab.log_decay[k, 100] == pytest.approx(-186.72, abs=5e-3)


@pytest.fixture(scope="module")
def coarse_default():
    grid = build_grid(31, 40, 0.5)
    return grid, ControlProblem(DEGENERATE, OMEGA, grid.T)


def test_carleman_sides_vanish_on_zero(coarse_default):
    grid, problem = coarse_default
    params = carleman.CarlemanParams(4.0, 2.0, grid.T, 0.5, 0.15)
    zero = np.zeros((grid.m + 1, grid.n))
    assert carleman.carleman_lhs(zero, problem, params, grid)[0] == 0.0
    assert carleman.carleman_rhs(zero, None, params, grid) == 0.0


def test_observation_outside_window_is_zero(coarse_default, rng):
    grid, problem = coarse_default
    params = carleman.CarlemanParams(4.0, 2.0, grid.T, 0.5, 0.15)
    v = rng.standard_normal((grid.m + 1, grid.n))
    v[:, grid.window_mask(params.window)] = 0.0
    assert carleman.carleman_rhs(v, None, params, grid) == 0.0


def test_vanishing_coefficient_drops_diffusion_terms(rng):
    grid = build_grid(31, 40, 0.5)
    problem = ControlProblem(make_constant_profile(0.0), OMEGA, grid.T)
    params = carleman.CarlemanParams(1e-6, 1.0, grid.T, 0.5, 0.15)
    logs = carleman.carleman_lhs_terms(rng.standard_normal((grid.m + 1, grid.n)), problem,
                                       params, grid)
    assert logs[1] == -math.inf and logs[3] == -math.inf
    assert math.isfinite(logs[0]) and math.isfinite(logs[2])


def test_adjoint_sine_has_finite_positive_lhs():
    cfg = default_config()
    grid = cfg.build_grid()
    problem = cfg.build_problem(grid)
    v = solve_adjoint(problem, np.sin(np.pi * grid.x), None, grid)
    params = replace(cfg.carleman_params(), s=4.0, lam=2.0)
    log_terms = carleman.carleman_lhs_terms(v, problem, params, grid)
    assert all(math.isfinite(t) for t in log_terms)
    rep = carleman.carleman_report(v, None, problem, params, grid)
    assert rep.log_lhs > -math.inf and rep.log_rhs > -math.inf


def test_zero_sample_is_degenerate(coarse_default):
    grid, problem = coarse_default
    params = carleman.CarlemanParams(4.0, 2.0, grid.T, 0.5, 0.15)
    reports = carleman.ratio_study(problem, params, [4], [2], 1, 0, grid,
                                   samples=[(np.zeros(grid.n), None)])
    assert reports[0].degenerate and math.isnan(reports[0].ratio)
    assert carleman.max_ratios(reports) == {}


def test_full_observation_quotient_is_small():
    grid, problem = _heat(0.5, n=63, m=80)
    problem = problem.with_omega((0.0, 1.0))
    rng = np.random.default_rng(3)
    params = carleman.CarlemanParams(2.0, 1.0, grid.T, 0.5, 0.15)
    for _ in range(5):
        vT = carleman.sample_terminal(rng, grid)
        # backward dissipation: ||v(0)|| <= ||v(t)|| so the plain quotient is at most 1/T
        assert carleman.plain_observability_quotient(problem, vT, grid) <= 1 / grid.T + 1e-12
        assert math.isfinite(carleman.log_observability_quotient(problem, vT, params, grid))


def test_identity_residual_drops_under_refinement():
    cfg = default_config()
    params = cfg.carleman_params()
    residuals = []
    for n in (64, 128):
        grid = build_grid(n, 2 * n, cfg.grid.T)
        problem = replace(cfg.build_problem(grid), potential=ZERO_POTENTIAL)
        ops = StepOperators(problem, grid)
        vT, _ = carleman.draw_sample(cfg.carleman.seed, 0, grid, ops)
        v = solve_adjoint(problem, vT, None, grid, ops=ops)
        residuals.append(carleman.z_transform_identity(v, None, params, problem, grid))
    assert residuals[1] < residuals[0]


# HUM

def test_gramian_and_hum_on_zero_data():
    grid, problem = _heat(0.5, n=31, m=40, u0=False)
    assert not np.any(hum.gramian_apply(problem, np.zeros(grid.n), grid))
    res = hum.hum_solve(problem, 1e-3, grid=grid)
    assert not np.any(res.phiT) and not np.any(res.f_eps) and not np.any(res.u_eps)
    assert hum.j_eps_value(problem, None, 1.0, grid) == 0.0
    assert not np.any(hum.j_eps_gradient(problem, None, 1.0, grid))
    rep = hum.eps_sweep(problem, (1e-1, 1e-2), 1e-8, grid)
    assert all(r.cost == 0.0 and r.terminal_sq == 0.0 for r in rep.rows)


def test_large_penalty_leaves_decay_unchanged():
    grid, problem = _heat(0.1)
    res = hum.hum_solve(problem, 1e6, 1e-10, 500, grid)
    u0_norm = l2_norm(problem.initial(grid), grid)
    assert math.sqrt(res.cost) <= 1e-5 * u0_norm
    exact = math.exp(-math.pi**2 * 0.1) * np.sin(np.pi * grid.x)
    assert np.max(np.abs(res.u_eps[-1] - exact)) < 2e-3


def test_uncontrolled_functional_value():
    grid, problem = _heat(0.1)
    assert hum.j_eps_value(problem, None, 1.0, grid) == pytest.approx(
        0.25 * math.exp(-2 * math.pi**2 * 0.1), abs=1e-3)


def test_default_terminal_ratio_is_pinned():
    cfg = default_config()
    grid = cfg.build_grid()
    res = hum.hum_solve(cfg.build_problem(grid), 1e-4, 1e-8, 500, grid)
    u0_sq = l2_norm(cfg.build_problem(grid).initial(grid), grid) ** 2
    assert res.converged
    assert res.terminal_sq / (1e-4 * u0_sq) == pytest.approx(PIN_TERMINAL_RATIO, rel=1e-6)


def test_cost_bounded_by_observability_constant():
    # penalized costs stay below the sampled unweighted observability constant, up to 5x
    cfg = default_config()
    grid = cfg.build_grid()
    problem = cfg.build_problem(grid)
    study = carleman.observability_study(problem, cfg.carleman_params(), 20, 0, grid)
    sweep = hum.eps_sweep(problem, cfg.hum.eps_list, cfg.hum.tol, grid)
    assert sweep.column("cost_ratio").max() <= 5 * study.max_plain_quotient


# command line

def _config(tmp_path, doc):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_cli_forward_heat(tmp_path):
    cfg = _config(tmp_path, {"profile": {"kind": "constant", "value": 1.0},
                             "grid": {"n": 199, "m": 400, "T": 0.1}})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o"), "--no-figures"]) == 0
    grid = build_grid(199, 400, 0.1)
    _, traj = read_field_csv(tmp_path / "o" / "trajectory.csv", grid)
    exact = math.exp(-math.pi**2 * 0.1) * np.sin(np.pi * grid.x)
    assert np.max(np.abs(traj[-1] - exact)) < 2e-3


def test_cli_adjoint_zero(tmp_path):
    assert main(["solve", "--mode", "adjoint", "--out", str(tmp_path), "--no-figures"]) == 0
    _, traj = read_field_csv(tmp_path / "trajectory.csv")
    assert not np.any(traj)


def test_cli_forward_default_checksum(tmp_path):
    for run in ("a", "b"):
        assert main(["solve", "--out", str(tmp_path / run), "--no-figures"]) == 0
    digests = {hashlib.sha256((tmp_path / r / "trajectory.csv").read_bytes()).hexdigest()
               for r in ("a", "b")}
    assert len(digests) == 1
    assert digests.pop() == PIN_FORWARD_DIGEST

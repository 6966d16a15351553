import math

import numpy as np
import pytest

from degenerate_control import hum
from degenerate_control.mesh import build_grid, l2_norm
from degenerate_control.profile import make_constant_profile, make_power_profile
from degenerate_control.solver import ControlProblem, StepOperators, solve_forward

OMEGA = (0.3, 0.7)


@pytest.fixture
def setup():
    grid = build_grid(39, 60, 0.5)
    problem = ControlProblem(make_power_profile(0.4, 0.6, 2.0, 2.0), OMEGA, grid.T,
                             np.sin(np.pi * grid.x))
    return grid, problem


def test_gramian_is_symmetric_psd(setup):
    grid, problem = setup
    G = hum.gramian_matrix(problem, grid)
    assert np.allclose(G, G.T, atol=1e-14)
    eig = np.linalg.eigvalsh(0.5 * (G + G.T))
    assert eig.min() > -1e-13 * eig.max()
    # nodes strictly inside [A, B] are decoupled and only see the control: eigenvalue T
    assert eig.max() == pytest.approx(grid.T, rel=1e-10)


def test_gramian_batch_matches_columns(setup, rng):
    grid, problem = setup
    P = rng.standard_normal((grid.n, 4))
    batch = hum.gramian_apply(problem, P, grid)
    for j in range(4):
        assert np.allclose(batch[:, j], hum.gramian_apply(problem, P[:, j], grid), atol=1e-15)


def test_cg_solves_spd_system(rng):
    n = 30
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = Q @ np.diag(np.logspace(0, 3, n)) @ Q.T
    b = rng.standard_normal(n)
    res = hum.conjugate_gradient(lambda x: A @ x, b, tol=1e-12, max_iter=500)
    assert res.converged
    assert np.allclose(res.x, np.linalg.solve(A, b), rtol=1e-9)
    # the dual functional decreases monotonically along the iterates
    assert np.all(np.diff(res.dual_values) <= 1e-9 * abs(res.dual_values[-1]))


def test_cg_zero_rhs_and_nonconvergence(rng):
    res = hum.conjugate_gradient(lambda x: x, np.zeros(5))
    assert res.converged and res.iterations == 0
    A = np.diag(np.logspace(0, 6, 40))
    res = hum.conjugate_gradient(lambda x: A @ x, np.ones(40), tol=1e-14, max_iter=3, restarts=0)
    assert not res.converged and res.iterations == 3


def test_hum_matches_dense_solve(setup):
    grid, problem = setup
    eps = 1e-3
    G = hum.gramian_matrix(problem, grid)
    b = hum.free_terminal(problem, grid)
    exact = np.linalg.solve(G + eps * np.eye(grid.n), b)
    res = hum.hum_solve(problem, eps, 1e-12, 1000, grid)
    assert res.converged
    assert np.allclose(res.phiT, exact, rtol=1e-8, atol=1e-10)


def test_hum_optimality_and_balance(setup):
    grid, problem = setup
    res = hum.hum_solve(problem, 1e-2, 1e-11, 1000, grid)
    assert hum.optimality_gap(problem, res, grid) < 1e-9
    lhs, rhs = hum.duality_balance(problem, res, grid)
    assert lhs == pytest.approx(rhs, rel=1e-8)
    u = solve_forward(problem, res.f_eps, grid)
    assert l2_norm(u[-1], grid) ** 2 == pytest.approx(res.terminal_sq, rel=1e-12)
    # the control lives in omega and starts at level 1
    outside = ~grid.window_mask(OMEGA)
    assert not np.any(res.f_eps[:, outside]) and not np.any(res.f_eps[0])


def test_hum_minimizes_penalized_functional(setup, rng):
    grid, problem = setup
    eps = 1e-2
    ops = StepOperators(problem, grid)
    res = hum.hum_solve(problem, eps, 1e-11, 1000, grid, ops=ops)
    j_star = hum.j_eps_value(problem, res.f_eps, eps, grid, ops)
    assert j_star == pytest.approx(res.j_eps, rel=1e-12)
    assert j_star < hum.j_eps_value(problem, None, eps, grid, ops)
    for _ in range(3):
        d = 1e-2 * rng.standard_normal(res.f_eps.shape)
        assert hum.j_eps_value(problem, res.f_eps + d, eps, grid, ops) > j_star


def test_gradient_vanishes_at_the_optimum(setup):
    grid, problem = setup
    res = hum.hum_solve(problem, 1e-2, 1e-12, 1000, grid)
    grad = hum.j_eps_gradient(problem, res.f_eps, 1e-2, grid)
    scale = math.sqrt(res.cost)
    assert math.sqrt(hum.control_cost(grad, grid)) < 1e-8 * (1 + scale)


def test_invalid_eps(setup):
    grid, problem = setup
    with pytest.raises(ValueError):
        hum.hum_solve(problem, 0.0, grid=grid)
    with pytest.raises(ValueError):
        hum.j_eps_value(problem, None, -1.0, grid)


def test_sweep_warm_start_matches_cold(setup):
    grid, problem = setup
    eps_list = (1e-1, 1e-2, 1e-3)
    rep = hum.eps_sweep(problem, eps_list, 1e-10, grid)
    assert [r.eps for r in rep.rows] == list(eps_list)
    assert rep.warnings == []
    cold = hum.hum_solve(problem, 1e-3, 1e-10, 500, grid)
    assert rep.rows[-1].cost == pytest.approx(cold.cost, rel=1e-7)
    assert np.all(np.diff(rep.column("terminal_sq")) < 0)
    assert np.all(np.diff(rep.column("cost")) > 0)
    assert rep.u0_norm_sq == pytest.approx(0.5, rel=1e-10)
    assert set(rep.rows[0].row()) == set(hum.SWEEP_COLUMNS)


@pytest.mark.parametrize("profile", [make_constant_profile(1.0),
                                     make_power_profile(0.4, 0.6, 2.0, 2.0)])
def test_cost_saturates_with_wide_control_region(profile):
    # thin uncontrolled strips: the penalized costs settle as eps decreases
    grid = build_grid(49, 100, 0.5)
    problem = ControlProblem(profile, (0.1, 0.9), grid.T, np.sin(np.pi * grid.x))
    rep = hum.eps_sweep(problem, (1e-3, 1e-5), 1e-10, grid)
    assert rep.rows[1].cost_ratio / rep.rows[0].cost_ratio < 1.1
    assert rep.rows[1].terminal_sq < rep.rows[0].terminal_sq

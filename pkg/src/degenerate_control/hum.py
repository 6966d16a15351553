"""Penalized HUM controls.

For eps > 0 the control minimizing

    J_eps(f) = 1/2 sum_{k=1..m} dt ||f^k||^2 + 1/(2 eps) ||u^f(T)||^2

is f^k = -1_omega phi^{k-1}, where phi is the adjoint trajectory issued from
phi_T = u(T)/eps. Writing Lambda for the control Gramian (adjoint march from
phi_T, localize to omega, forward march from zero) and y for the uncontrolled
terminal state, optimality becomes the n x n system

    (Lambda + eps I) phi_T = y,

which is symmetric positive definite and solved by conjugate gradients.
Control rows use the right-endpoint time rule (levels 1..m), matching the
implicit Euler step, so the discrete gradient is exact.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import Grid, l2_norm, slice_inner, spacetime_norm_sq
from .solver import ControlProblem, StepOperators, solve_adjoint, solve_forward

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("eps", "cost", "terminal_sq", "terminal_ratio", "cost_ratio", "cg_iterations")
DEFAULT_EPS = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)


def _ops(problem, grid, ops):
    return ops if ops is not None else StepOperators(problem, grid)


def control_from_adjoint(problem: ControlProblem, phi, grid: Grid) -> np.ndarray:
    """f^k = -1_omega phi^{k-1} for k = 1..m; row 0 is zero."""
    f = np.zeros_like(phi)
    f[1:] = -problem.indicator(grid).reshape((-1,) + (1,) * (phi.ndim - 2)) * phi[:-1]
    return f


def gramian_apply(problem: ControlProblem, phiT, grid: Grid, ops=None) -> np.ndarray:
    """Lambda phi_T: terminal state driven from rest by 1_omega phi.

    Trailing batch axes on ``phiT`` are supported.
    """
    ops = _ops(problem, grid, ops)
    phiT = np.asarray(phiT, dtype=float)
    phi = solve_adjoint(problem, phiT, None, grid, ops=ops)
    src = -control_from_adjoint(problem, phi, grid)
    u = solve_forward(problem, src, grid, u0=np.zeros(phiT.shape), ops=ops)
    return u[-1]


def gramian_matrix(problem: ControlProblem, grid: Grid, ops=None) -> np.ndarray:
    """Dense Gramian, assembled from all unit vectors in one batched pass."""
    return gramian_apply(problem, np.eye(grid.n), grid, ops)


def free_terminal(problem: ControlProblem, grid: Grid, ops=None) -> np.ndarray:
    return solve_forward(problem, None, grid, ops=_ops(problem, grid, ops))[-1]


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    history: list = field(default_factory=list)
    dual_values: list = field(default_factory=list)


def conjugate_gradient(apply, b, x0=None, tol=1e-8, max_iter=500, restarts=3) -> CGResult:
    """CG for a symmetric positive definite operator.

    Stops on ||r_k|| <= tol ||b|| for the recursive residual, then confirms
    with the true residual b - A x and restarts from it if they disagree.
    ``dual_values`` tracks 1/2 <Ax, x> - <b, x> after every iteration.
    """
    b = np.asarray(b, dtype=float)
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0, True, [0.0], [0.0])

    history, duals = [], []
    it = 0
    for _ in range(restarts + 1):
        r = b - apply(x) if np.any(x) else b.copy()
        rel = float(np.linalg.norm(r)) / bnorm
        history.append(rel)
        duals.append(-0.5 * float(np.dot(x, b + r)))
        if rel <= tol:
            return CGResult(x, it, rel, True, history, duals)
        p = r.copy()
        rr = float(np.dot(r, r))
        while it < max_iter:
            Ap = apply(p)
            pAp = float(np.dot(p, Ap))
            if pAp <= 0:
                log.warning("CG met a non-positive curvature %.3g", pAp)
                break
            alpha = rr / pAp
            x = x + alpha * p
            r = r - alpha * Ap
            it += 1
            rr_new = float(np.dot(r, r))
            history.append(math.sqrt(rr_new) / bnorm)
            duals.append(-0.5 * float(np.dot(x, b + r)))
            if history[-1] <= tol:
                break
            p = r + (rr_new / rr) * p
            rr = rr_new
        true_rel = float(np.linalg.norm(b - apply(x))) / bnorm
        if true_rel <= tol:
            return CGResult(x, it, true_rel, True, history, duals)
        if it >= max_iter:
            return CGResult(x, it, true_rel, False, history, duals)
    return CGResult(x, it, true_rel, true_rel <= tol, history, duals)


@dataclass
class HUMResult:
    eps: float
    phiT: np.ndarray
    phi: np.ndarray = field(repr=False)
    f_eps: np.ndarray = field(repr=False)
    u_eps: np.ndarray = field(repr=False)
    cost: float = 0.0
    terminal_sq: float = 0.0
    cg_iterations: int = 0
    cg_residual: float = 0.0
    converged: bool = True
    j_eps: float = 0.0
    rhs_norm: float = 0.0
    cg: CGResult | None = field(default=None, repr=False)

    def summary(self) -> dict:
        return {"eps": self.eps, "cost": self.cost, "terminal_sq": self.terminal_sq,
                "cg_iterations": self.cg_iterations, "cg_residual": self.cg_residual,
                "converged": self.converged, "j_eps": self.j_eps}


def control_cost(f, grid: Grid) -> float:
    return spacetime_norm_sq(f, grid, rule="implicit")


def hum_solve(problem: ControlProblem, eps: float, tol: float = 1e-8, max_iter: int = 500,
              grid: Grid | None = None, phiT0=None, ops=None) -> HUMResult:
    """Penalized HUM control for problem.u0 through the dual Gramian system."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if grid is None:
        raise ValueError("grid is required")
    ops = _ops(problem, grid, ops)
    b = free_terminal(problem, grid, ops)

    def apply(p):
        return gramian_apply(problem, p, grid, ops) + eps * p

    cg = conjugate_gradient(apply, b, phiT0, tol, max_iter)
    if not cg.converged:
        log.warning("CG did not reach tol=%g for eps=%g (residual %.3g after %d iterations)",
                    tol, eps, cg.residual, cg.iterations)
    phiT = cg.x
    phi = solve_adjoint(problem, phiT, None, grid, ops=ops)
    f = control_from_adjoint(problem, phi, grid)
    u = solve_forward(problem, f, grid, ops=ops)
    cost = control_cost(f, grid)
    terminal_sq = l2_norm(u[-1], grid) ** 2
    return HUMResult(
        eps=eps, phiT=phiT, phi=phi, f_eps=f, u_eps=u, cost=cost, terminal_sq=terminal_sq,
        cg_iterations=cg.iterations, cg_residual=cg.residual, converged=cg.converged,
        j_eps=0.5 * cost + terminal_sq / (2 * eps), rhs_norm=float(np.linalg.norm(b)), cg=cg,
    )


def j_eps_value(problem: ControlProblem, f, eps: float, grid: Grid, ops=None) -> float:
    if not eps > 0:
        raise ValueError("eps must be positive")
    u = solve_forward(problem, f, grid, ops=ops)
    cost = 0.0 if f is None else control_cost(f, grid)
    return 0.5 * cost + l2_norm(u[-1], grid) ** 2 / (2 * eps)


def j_eps_gradient(problem: ControlProblem, f, eps: float, grid: Grid, ops=None) -> np.ndarray:
    """Gradient of J_eps in the right-endpoint inner product: f + 1_omega psi,
    psi the adjoint trajectory from u^f(T)/eps, lagged one level."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    ops = _ops(problem, grid, ops)
    f = np.zeros((grid.m + 1, grid.n)) if f is None else np.asarray(f, dtype=float)
    u = solve_forward(problem, f, grid, ops=ops)
    psi = solve_adjoint(problem, u[-1] / eps, None, grid, ops=ops)
    grad = f - control_from_adjoint(problem, psi, grid)
    grad[0] = 0.0
    return grad


@dataclass
class SweepRow:
    eps: float
    cost: float
    terminal_sq: float
    terminal_ratio: float
    cost_ratio: float
    cg_iterations: int
    converged: bool = True

    def row(self) -> dict:
        return {k: getattr(self, k) for k in SWEEP_COLUMNS}


@dataclass
class SweepReport:
    rows: list
    u0_norm_sq: float

    @property
    def warnings(self) -> list:
        return [r.eps for r in self.rows if not r.converged]

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)


def eps_sweep(problem: ControlProblem, eps_list=DEFAULT_EPS, tol: float = 1e-8,
              grid: Grid | None = None, max_iter: int = 500, keep_results: bool = False):
    """hum_solve down a strictly decreasing eps ladder, warm-starting each solve
    from the previous minimizer."""
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list):
        raise ValueError("eps values must be positive")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    ops = StepOperators(problem, grid)
    u0_sq = l2_norm(problem.initial(grid), grid) ** 2
    rows, results = [], []
    phiT = None
    for eps in eps_list:
        res = hum_solve(problem, eps, tol, max_iter, grid, phiT0=phiT, ops=ops)
        phiT = res.phiT
        norm = u0_sq if u0_sq > 0 else 1.0
        rows.append(SweepRow(eps, res.cost, res.terminal_sq,
                             res.terminal_sq / (eps * norm) if u0_sq > 0 else 0.0,
                             res.cost / norm if u0_sq > 0 else 0.0,
                             res.cg_iterations, res.converged))
        if keep_results:
            results.append(res)
    report = SweepReport(rows, u0_sq)
    return (report, results) if keep_results else report


def optimality_gap(problem, result: HUMResult, grid: Grid) -> float:
    """||u_eps(T) - eps phi_T|| in the discrete L2 norm."""
    return l2_norm(result.u_eps[-1] - result.eps * result.phiT, grid)


def duality_balance(problem, result: HUMResult, grid: Grid) -> tuple[float, float]:
    """Both sides of ||u(T)||^2 / eps + cost = <phi(0), u0>."""
    lhs = result.terminal_sq / result.eps + result.cost
    rhs = slice_inner(result.phi[0], problem.initial(grid), grid)
    return lhs, rhs

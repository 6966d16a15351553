"""Implicit Euler solvers for the controlled degenerate equation and its adjoint.

Forward step, k = 1..m:

    (I + dt (-D_a + C_k)) u^k = u^{k-1} + dt (1_omega f)^k

Backward (adjoint) step, k = m-1..0:

    (I + dt (-D_a + C_{k+1})) v^k = v^{k+1} - dt h^k

D_a is the three-point stencil with a sampled at cell midpoints. Each step
matrix is symmetric, so the backward march applies exactly the transposed
forward step and the discrete pairing

    <u^m, v^m> = <u^0, v^0> + sum_k dt <(1_omega f)^k, v^{k-1}>

holds to rounding when h = 0.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.lapack import dpttrs

from .mesh import (Grid, GridError, SpaceSlice, SpaceTimeField, h1a_seminorm,
                   half_node_coefficient, l2_norm, slice_inner, spacetime_norm_sq)
from .profile import DiffusionProfile

log = logging.getLogger(__name__)

POTENTIALS = ("zero", "constant", "wave")


class SingularStepError(RuntimeError):
    def __init__(self, level: int, row: int):
        super().__init__(f"step matrix at time level {level} is singular (zero pivot in row {row})")
        self.level = level
        self.row = row


@dataclass(frozen=True)
class Potential:
    """Zeroth-order coefficient c(x, t) from a fixed registry.

    ``wave`` is c(x, t) = value * sin(2 pi x) cos(2 pi t / T).
    """

    kind: str = "zero"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in POTENTIALS:
            raise ValueError(f"unknown potential {self.kind!r}; expected one of {POTENTIALS}")
        if not math.isfinite(self.value):
            raise ValueError("potential value must be finite")

    @property
    def time_dependent(self) -> bool:
        return self.kind == "wave"

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.value == 0.0

    def __call__(self, x, t, T):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros(np.broadcast(x, np.asarray(t)).shape)
        if self.kind == "constant":
            return np.full(np.broadcast(x, np.asarray(t)).shape, self.value)
        return self.value * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * np.asarray(t) / T)

    def to_dict(self) -> dict:
        if self.kind == "zero":
            return {"kind": "zero"}
        return {"kind": self.kind, "value": self.value}

    @classmethod
    def from_dict(cls, data: dict) -> "Potential":
        data = dict(data)
        kind = data.pop("kind", "zero")
        value = data.pop("value", 1.0 if kind == "wave" else 0.0)
        if data:
            raise ValueError(f"unknown potential keys: {sorted(data)}")
        return cls(kind, float(value))


ZERO_POTENTIAL = Potential()


@dataclass(frozen=True)
class ControlProblem:
    profile: DiffusionProfile
    omega: tuple
    T: float
    u0: SpaceSlice | None = None
    potential: Potential = ZERO_POTENTIAL

    def __post_init__(self):
        lo, hi = float(self.omega[0]), float(self.omega[1])
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError(f"omega must be a subinterval of [0, 1], got ({lo}, {hi})")
        object.__setattr__(self, "omega", (lo, hi))
        if not self.T > 0:
            raise ValueError("horizon must be positive")

    def with_u0(self, u0) -> "ControlProblem":
        return ControlProblem(self.profile, self.omega, self.T, u0, self.potential)

    def with_omega(self, omega) -> "ControlProblem":
        return ControlProblem(self.profile, omega, self.T, self.u0, self.potential)

    def initial(self, grid: Grid) -> np.ndarray:
        if self.u0 is None:
            return np.zeros(grid.n)
        u0 = np.asarray(self.u0, dtype=float)
        if u0.shape[0] != grid.n:
            raise GridError(f"u0 has {u0.shape[0]} values, grid has n={grid.n}")
        return u0

    def indicator(self, grid: Grid) -> np.ndarray:
        return grid.window_mask(self.omega).astype(float)


def _check_grid(problem: ControlProblem, grid: Grid):
    if not math.isclose(problem.T, grid.T, rel_tol=1e-12):
        raise GridError(f"problem horizon {problem.T} differs from grid horizon {grid.T}")


def factor_tridiagonal(diag, off, level: int = 0):
    """LDL^T elimination without pivoting for a symmetric tridiagonal matrix.

    ``diag`` may be (n,) or (levels, n) to factor several matrices at once.
    Returns (d, l) in the layout LAPACK's ?pttrs expects.
    """
    diag = np.asarray(diag, dtype=float)
    off = np.asarray(off, dtype=float)
    d = diag.copy()
    l = np.zeros_like(off)
    n = diag.shape[-1]
    scale = np.max(np.abs(diag), axis=-1)
    for p in range(n):
        if p > 0:
            l[..., p - 1] = off[..., p - 1] / d[..., p - 1]
            d[..., p] = diag[..., p] - l[..., p - 1] * off[..., p - 1]
        bad = np.abs(d[..., p]) <= 1e-14 * scale
        if np.any(bad):
            lev = level if d.ndim == 1 else level + int(np.argmax(bad))
            raise SingularStepError(lev, p)
    return d, l


def thomas_solve(lower, diag, upper, rhs):
    """Plain Thomas recurrence for a general tridiagonal system (reference path)."""
    n = len(diag)
    c = np.zeros(n)
    g = np.zeros(n)
    c[0] = upper[0] / diag[0] if n > 1 else 0.0
    g[0] = rhs[0] / diag[0]
    for i in range(1, n):
        den = diag[i] - lower[i - 1] * c[i - 1]
        if i < n - 1:
            c[i] = upper[i] / den
        g[i] = (rhs[i] - lower[i - 1] * g[i - 1]) / den
    x = np.zeros(n)
    x[-1] = g[-1]
    for i in range(n - 2, -1, -1):
        x[i] = g[i] - c[i] * x[i + 1]
    return x


def apply_diffusion(values, a_half, h):
    """(D_a u)_i for interior values (axis 0) with zero Dirichlet data."""
    u = np.asarray(values, dtype=float)
    pad = [(1, 1)] + [(0, 0)] * (u.ndim - 1)
    up = np.pad(u, pad)
    flux = a_half.reshape((-1,) + (1,) * (u.ndim - 1)) * np.diff(up, axis=0) / h
    return np.diff(flux, axis=0) / h


class StepOperators:
    """Factored step matrices I + theta dt(-D_a + C_k), one per level k = 1..m.

    theta = 1 is implicit Euler; theta = 1/2 gives the Crank-Nicolson
    left-hand side. With a time-independent potential a single
    factorization is shared.
    """

    def __init__(self, problem: ControlProblem, grid: Grid, theta: float = 1.0):
        _check_grid(problem, grid)
        if not 0.0 < theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {theta}")
        self.grid = grid
        self.theta = float(theta)
        self.a_half = half_node_coefficient(problem.profile, grid)
        if np.any(self.a_half < 0) or not np.all(np.isfinite(self.a_half)):
            raise ValueError("diffusion coefficient must be finite and nonnegative")
        h = grid.h
        dt = self.theta * grid.dt
        base = 1.0 + dt * (self.a_half[:-1] + self.a_half[1:]) / h**2
        self.off = -dt * self.a_half[1:-1] / h**2

        pot = problem.potential
        self.c_sup = 0.0
        self.c = None
        if pot.is_zero:
            self.shared = True
            self.factors = factor_tridiagonal(base, self.off)
        else:
            c = np.broadcast_to(pot(grid.x[None, :], grid.t_nodes[:, None], grid.T),
                                 (grid.m + 1, grid.n))
            self.c = c
            self.c_sup = float(np.max(np.abs(c)))
            if dt * self.c_sup > 0.5:
                log.warning("dt * sup|c| = %.3g exceeds 0.5; expect reduced accuracy",
                            dt * self.c_sup)
            if pot.time_dependent:
                self.shared = False
                d, l = factor_tridiagonal(base[None, :] + dt * c[1:], np.broadcast_to(
                    self.off, (grid.m, grid.n - 1)), level=1)
                self.factors = (d, l)
            else:
                self.shared = True
                self.factors = factor_tridiagonal(base + dt * c[0], self.off)

    def solve(self, level: int, rhs):
        if self.shared:
            d, l = self.factors
        else:
            d, l = self.factors[0][level - 1], self.factors[1][level - 1]
        x, info = dpttrs(d, l, rhs)
        if info != 0:
            raise SingularStepError(level, -1)
        return x

    def apply_operator(self, level: int, u) -> np.ndarray:
        """(-D_a + C_level) u for a slice u (trailing batch axes allowed)."""
        u = np.asarray(u, dtype=float)
        out = -apply_diffusion(u, self.a_half, self.grid.h)
        if self.c is not None:
            out = out + self.c[level].reshape((-1,) + (1,) * (u.ndim - 1)) * u
        return out

    def matrix(self, level: int) -> np.ndarray:
        """Dense step matrix (for checks)."""
        if self.shared:
            d, l = self.factors
        else:
            d, l = self.factors[0][level - 1], self.factors[1][level - 1]
        L = np.eye(len(d)) + np.diag(l, -1)
        return L @ np.diag(d) @ L.T


def _source(problem, values, grid, name):
    if values is None:
        return None
    values = np.asarray(values, dtype=float)
    if values.shape[:2] != (grid.m + 1, grid.n):
        raise GridError(f"{name} shape {values.shape} does not match ({grid.m + 1}, {grid.n})")
    return values


SCHEMES = ("implicit", "crank_nicolson")


def solve_forward(problem: ControlProblem, f, grid: Grid, u0=None,
                  ops: StepOperators | None = None,
                  scheme: str = "implicit") -> SpaceTimeField:
    """March the controlled equation forward from u0 (default: problem.u0).

    Row k of ``f`` drives the step that produces level k; row 0 is unused.
    Trailing batch axes on u0 and f are carried through.

    ``scheme="crank_nicolson"`` is second order in time and meant for
    convergence studies only; the adjoint and the control machinery use
    implicit Euler, whose transpose is the discrete adjoint.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if scheme == "crank_nicolson":
        return _solve_forward_cn(problem, f, grid, u0, ops)
    ops = ops or StepOperators(problem, grid)
    f = _source(problem, f, grid, "f")
    u0 = problem.initial(grid) if u0 is None else np.asarray(u0, dtype=float)
    if u0.shape[0] != grid.n:
        raise GridError(f"u0 has {u0.shape[0]} values, grid has n={grid.n}")
    shape = (grid.m + 1,) + u0.shape
    if f is not None:
        shape = np.broadcast_shapes(shape + (1,) * (f.ndim - len(shape)), f.shape)
    u = np.zeros(shape)
    u[0] = u0.reshape(u0.shape + (1,) * (len(shape) - 1 - u0.ndim))
    if f is not None:
        mask = problem.indicator(grid).reshape((-1,) + (1,) * (len(shape) - 2))
        g = grid.dt * mask * f
    for k in range(1, grid.m + 1):
        rhs = u[k - 1] + g[k] if f is not None else u[k - 1]
        u[k] = ops.solve(k, rhs)
    return u


def _solve_forward_cn(problem, f, grid, u0, ops):
    if ops is None or ops.theta != 0.5:
        ops = StepOperators(problem, grid, theta=0.5)
    f = _source(problem, f, grid, "f")
    u0 = problem.initial(grid) if u0 is None else np.asarray(u0, dtype=float)
    if u0.shape[0] != grid.n:
        raise GridError(f"u0 has {u0.shape[0]} values, grid has n={grid.n}")
    shape = (grid.m + 1,) + u0.shape
    if f is not None:
        shape = np.broadcast_shapes(shape + (1,) * (f.ndim - len(shape)), f.shape)
    u = np.zeros(shape)
    u[0] = u0.reshape(u0.shape + (1,) * (len(shape) - 1 - u0.ndim))
    if f is not None:
        mask = problem.indicator(grid).reshape((-1,) + (1,) * (len(shape) - 2))
        g = mask * f
    half = 0.5 * grid.dt
    for k in range(1, grid.m + 1):
        rhs = u[k - 1] - half * ops.apply_operator(k - 1, u[k - 1])
        if f is not None:
            rhs = rhs + half * (g[k] + g[k - 1])
        u[k] = ops.solve(k, rhs)
    return u


def solve_adjoint(problem: ControlProblem, vT, h, grid: Grid,
                  ops: StepOperators | None = None) -> SpaceTimeField:
    """March the adjoint equation backward from v(T) = vT with source h."""
    ops = ops or StepOperators(problem, grid)
    vT = np.asarray(vT, dtype=float)
    if vT.shape[0] != grid.n:
        raise GridError(f"vT has {vT.shape[0]} values, grid has n={grid.n}")
    h = _source(problem, h, grid, "h")
    shape = (grid.m + 1,) + vT.shape
    if h is not None:
        shape = np.broadcast_shapes(shape + (1,) * (h.ndim - len(shape)), h.shape)
    v = np.zeros(shape)
    v[-1] = vT.reshape(vT.shape + (1,) * (len(shape) - 1 - vT.ndim))
    for k in range(grid.m - 1, -1, -1):
        rhs = v[k + 1] - grid.dt * h[k] if h is not None else v[k + 1]
        v[k] = ops.solve(k + 1, rhs)
    return v


def duality_check(problem: ControlProblem, u0, f, vT, grid: Grid,
                  relative: bool = False) -> float:
    """Residual of the discrete pairing between forward and adjoint marches.

    With ``relative`` the residual is divided by the sum of the absolute
    values of the three pairing terms.
    """
    ops = StepOperators(problem, grid)
    u = solve_forward(problem, f, grid, u0=u0, ops=ops)
    v = solve_adjoint(problem, vT, None, grid, ops=ops)
    f = np.zeros((grid.m + 1, grid.n)) if f is None else np.asarray(f, dtype=float)
    g = problem.indicator(grid) * f
    terminal = slice_inner(u[-1], v[-1], grid)
    initial = slice_inner(u[0], v[0], grid)
    source = grid.dt * grid.h * np.einsum("ki,ki->k", g[1:], v[:-1])
    resid = abs(terminal - initial - float(np.sum(source)))
    if not relative:
        return resid
    scale = abs(terminal) + abs(initial) + float(np.sum(np.abs(source)))
    return resid / scale if scale > 0 else 0.0


@dataclass
class EnergyReport:
    sup_sq: float
    h1a_integral: float
    rhs_bound: float
    c_emp: float
    norms_sq: np.ndarray = field(repr=False, default=None)

    @property
    def lhs(self) -> float:
        return self.sup_sq + self.h1a_integral

    def to_dict(self) -> dict:
        return {"sup_sq": self.sup_sq, "h1a_integral": self.h1a_integral,
                "rhs_bound": self.rhs_bound, "c_emp": self.c_emp}


def energy_report(problem: ControlProblem, u: SpaceTimeField, f, grid: Grid) -> EnergyReport:
    norms_sq = np.array([l2_norm(row, grid) ** 2 for row in u])
    semi_sq = np.array([h1a_seminorm(row, problem.profile, grid) ** 2 for row in u])
    w = np.full(grid.m + 1, grid.dt)
    w[0] = w[-1] = 0.5 * grid.dt
    sup_sq = float(np.max(norms_sq))
    h1a_integral = float(np.dot(w, norms_sq + semi_sq))
    data = l2_norm(problem.initial(grid), grid) ** 2
    if f is not None:
        data += spacetime_norm_sq(f, grid)
    lhs = sup_sq + h1a_integral
    c_emp = lhs / data if data > 0 else 0.0
    return EnergyReport(sup_sq, h1a_integral, c_emp * data, c_emp, norms_sq)


def energy_check(problem: ControlProblem, f, grid: Grid) -> EnergyReport:
    """Discrete version of the well-posedness estimate, returning the
    quotient of its left side by ||f||^2 + ||u0||^2."""
    u = solve_forward(problem, f, grid)
    return energy_report(problem, u, f, grid)


def pde_residual_field(v: SpaceTimeField, h, profile, grid: Grid):
    """Centered-difference residual v_t + (a v_x)_x - h on interior levels."""
    a_half = half_node_coefficient(profile, grid)
    vt = (v[2:] - v[:-2]) / (2 * grid.dt)
    avxx = apply_diffusion(v[1:-1].T, a_half, grid.h).T
    hh = np.zeros_like(vt) if h is None else np.asarray(h)[1:-1]
    return vt, avxx, hh

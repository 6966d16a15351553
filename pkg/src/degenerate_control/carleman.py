"""Singular Carleman weights and weighted estimates for adjoint trajectories.

Weights, for a center x0 and horizon T:

    theta(t) = 1 / (t (T - t))**4
    eta(x)   = -(x - x0)**2 / 2,          |eta|_inf = max(x0, 1 - x0)**2 / 2
    xi       = theta * exp(lam (2 |eta|_inf + eta))
    sigma    = theta * exp(4 lam |eta|_inf) - xi

For any realistic (s, lam, T) the factor exp(-2 s sigma) is far below the
smallest double, so every weighted integral is carried as a natural log and
combined with logsumexp. Linear values are derived from the logs and flushed
to zero below LOG_FLOOR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .mesh import Grid, half_node_coefficient, l2_norm, time_weights
from .solver import ControlProblem, StepOperators, apply_diffusion, pde_residual_field, solve_adjoint

LOG_FLOOR = -700.0
SAMPLE_MODES = 10


def _linear(log_value: float) -> float:
    return 0.0 if log_value < LOG_FLOOR else math.exp(log_value)


def _log_sq(values):
    with np.errstate(divide="ignore"):
        return np.log(np.square(values))


@dataclass(frozen=True)
class CarlemanParams:
    s: float
    lam: float
    T: float
    x0: float
    delta: float

    def __post_init__(self):
        if self.s < 0 or not self.lam > 0:
            raise ValueError("need s >= 0 and lam > 0")
        if not 0.0 < self.x0 < 1.0:
            raise ValueError("x0 must lie in (0, 1)")
        if not self.delta > 0 or not self.T > 0:
            raise ValueError("delta and T must be positive")

    @property
    def eta_inf(self) -> float:
        return max(self.x0**2, (1.0 - self.x0) ** 2) / 2.0

    @property
    def window(self) -> tuple:
        return (self.x0 - self.delta, self.x0 + self.delta)

    @classmethod
    def for_profile(cls, profile, T, delta, s=1.0, lam=1.0) -> "CarlemanParams":
        return cls(float(s), float(lam), float(T), profile.x0, float(delta))


@dataclass
class WeightTables:
    """Weights on interior time levels 1..m-1 and all n+2 space nodes."""

    params: CarlemanParams
    t: np.ndarray
    x: np.ndarray
    log_theta: np.ndarray
    eta: np.ndarray
    eta_prime: np.ndarray
    log_xi: np.ndarray
    sigma: np.ndarray
    sigma_t: np.ndarray
    sigma_x: np.ndarray
    log_decay: np.ndarray

    @property
    def theta(self) -> np.ndarray:
        return np.exp(self.log_theta)

    @property
    def xi(self) -> np.ndarray:
        return np.exp(self.log_xi)

    def log_weight(self, xi_power: float) -> np.ndarray:
        """log of exp(-2 s sigma) * xi**xi_power."""
        return self.log_decay + xi_power * self.log_xi

    def weight(self, xi_power: float) -> np.ndarray:
        lw = self.log_weight(xi_power)
        with np.errstate(under="ignore"):
            return np.where(lw < LOG_FLOOR, 0.0, np.exp(np.maximum(lw, LOG_FLOOR)))


def build_weights(params: CarlemanParams, grid: Grid) -> WeightTables:
    if not math.isclose(params.T, grid.T, rel_tol=1e-12):
        raise ValueError("params.T and grid.T differ")
    s, lam, T, x0 = params.s, params.lam, params.T, params.x0
    t = grid.t_nodes[1:-1]
    x = grid.x_nodes
    tt = t * (T - t)
    log_theta = -4.0 * np.log(tt)
    dlog_theta = -4.0 * (T - 2.0 * t) / tt
    eta = -0.5 * (x - x0) ** 2
    eta_prime = -(x - x0)
    ei = params.eta_inf

    log_xi = log_theta[:, None] + lam * (2 * ei + eta)[None, :]
    # theta e^{4 lam ei} - xi, written to avoid cancellation
    gap = -np.expm1(lam * (eta - 2 * ei))
    sigma = np.exp(log_theta[:, None] + 4 * lam * ei) * gap[None, :]
    sigma_t = dlog_theta[:, None] * sigma
    sigma_x = -lam * eta_prime[None, :] * np.exp(log_xi)
    log_decay = -2.0 * s * sigma
    return WeightTables(params, t, x, log_theta, eta, eta_prime, log_xi, sigma,
                        sigma_t, sigma_x, log_decay)


def _log_integral(log_density, grid: Grid, mask=None) -> float:
    """log of h dt sum over interior levels of exp(log_density)."""
    if mask is not None:
        log_density = log_density[:, mask]
    if log_density.size == 0:
        return -math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        total = logsumexp(log_density)
    return float(total + math.log(grid.h * grid.dt))


def _interior(tables: WeightTables, arr):
    # drop the boundary space nodes of a (m-1, n+2) table
    return arr[:, 1:-1]


@dataclass
class CarlemanReport:
    s: float
    lam: float
    sample_id: int
    log_terms: tuple
    log_rhs_source: float
    log_rhs_local: float
    degenerate: bool = False

    @property
    def log_lhs(self) -> float:
        with np.errstate(divide="ignore"):
            return float(logsumexp(self.log_terms))

    @property
    def log_rhs(self) -> float:
        return float(np.logaddexp(self.log_rhs_source, self.log_rhs_local))

    @property
    def terms(self) -> tuple:
        return tuple(_linear(v) for v in self.log_terms)

    @property
    def lhs(self) -> float:
        return _linear(self.log_lhs)

    @property
    def rhs_source(self) -> float:
        return _linear(self.log_rhs_source)

    @property
    def rhs_local(self) -> float:
        return _linear(self.log_rhs_local)

    @property
    def ratio(self) -> float:
        if self.degenerate or self.log_rhs == -math.inf:
            return math.nan
        if self.log_lhs == -math.inf:
            return 0.0
        return math.exp(self.log_lhs - self.log_rhs)

    def row(self) -> dict:
        out = {"s": self.s, "lambda": self.lam, "sample_id": self.sample_id}
        for j, v in enumerate(self.terms, 1):
            out[f"lhs_term{j}"] = v
        out.update(rhs_source=self.rhs_source, rhs_local=self.rhs_local, ratio=self.ratio)
        for j, v in enumerate(self.log_terms, 1):
            out[f"log_lhs_term{j}"] = v
        out.update(log_rhs_source=self.log_rhs_source, log_rhs_local=self.log_rhs_local)
        return out


CSV_COLUMNS = ("s", "lambda", "sample_id", "lhs_term1", "lhs_term2", "lhs_term3", "lhs_term4",
               "rhs_source", "rhs_local", "ratio", "log_lhs_term1", "log_lhs_term2",
               "log_lhs_term3", "log_lhs_term4", "log_rhs_source", "log_rhs_local")


def carleman_lhs_terms(v, problem: ControlProblem, params: CarlemanParams, grid: Grid,
                       tables: WeightTables | None = None) -> tuple:
    """Logs of the four weighted integrals on the left of the Carleman estimate:
    time derivative, divergence term, zeroth order, gradient."""
    tables = tables or build_weights(params, grid)
    s, lam = params.s, params.lam
    v = np.asarray(v, dtype=float)
    a_half = half_node_coefficient(problem.profile, grid)
    a_node = np.asarray(problem.profile(grid.x), dtype=float)

    vt = (v[2:] - v[:-2]) / (2 * grid.dt)
    avxx = apply_diffusion(v[1:-1].T, a_half, grid.h).T
    vp = np.pad(v[1:-1], ((0, 0), (1, 1)))
    vx = (vp[:, 2:] - vp[:, :-2]) / (2 * grid.h)
    vv = v[1:-1]

    decay = _interior(tables, tables.log_decay)
    lxi = _interior(tables, tables.log_xi)
    with np.errstate(divide="ignore"):
        c1 = -math.log(s) - math.log(lam) if s > 0 else math.inf
        c3 = 3 * math.log(s) + 4 * math.log(lam) if s > 0 else -math.inf
        c4 = math.log(s) + 2 * math.log(lam) if s > 0 else -math.inf
        log_a = np.log(a_node)
    terms = (
        _log_integral(decay - lxi + c1 + _log_sq(vt), grid),
        _log_integral(decay - lxi + c1 + _log_sq(avxx), grid),
        _log_integral(decay + 3 * lxi + c3 + _log_sq(vv), grid),
        _log_integral(decay + lxi + c4 + log_a[None, :] + _log_sq(vx), grid),
    )
    return terms


def carleman_lhs(v, problem, params, grid, tables=None) -> tuple[float, tuple]:
    """Left side value and its four-term breakdown (linear, flushed)."""
    terms = carleman_lhs_terms(v, problem, params, grid, tables)
    with np.errstate(divide="ignore"):
        total = float(logsumexp(terms))
    return _linear(total), tuple(_linear(t) for t in terms)


def carleman_rhs_logs(v, h, params: CarlemanParams, grid: Grid,
                      tables: WeightTables | None = None) -> tuple[float, float]:
    """Logs of ||exp(-s sigma) h||^2 and of the localized observation term."""
    tables = tables or build_weights(params, grid)
    s, lam = params.s, params.lam
    decay = _interior(tables, tables.log_decay)
    if h is None:
        log_src = -math.inf
    else:
        log_src = _log_integral(decay + _log_sq(np.asarray(h)[1:-1]), grid)
    mask = grid.window_mask(params.window)
    with np.errstate(divide="ignore"):
        c3 = 3 * math.log(s) + 4 * math.log(lam) if s > 0 else -math.inf
    lxi = _interior(tables, tables.log_xi)
    log_loc = _log_integral(decay + 3 * lxi + c3 + _log_sq(np.asarray(v)[1:-1]), grid, mask)
    return log_src, log_loc


def carleman_rhs(v, h, params, grid, tables=None) -> float:
    src, loc = carleman_rhs_logs(v, h, params, grid, tables)
    return _linear(float(np.logaddexp(src, loc)))


def carleman_report(v, h, problem, params, grid, tables=None, sample_id=0) -> CarlemanReport:
    tables = tables or build_weights(params, grid)
    terms = carleman_lhs_terms(v, problem, params, grid, tables)
    src, loc = carleman_rhs_logs(v, h, params, grid, tables)
    degenerate = src == -math.inf and loc == -math.inf
    return CarlemanReport(params.s, params.lam, sample_id, terms, src, loc, degenerate)


def sample_terminal(rng: np.random.Generator, grid: Grid) -> np.ndarray:
    """Random sine sum over the first SAMPLE_MODES modes, coefficients in [-1, 1]."""
    coeffs = rng.uniform(-1.0, 1.0, SAMPLE_MODES)
    modes = np.sin(np.pi * np.outer(np.arange(1, SAMPLE_MODES + 1), grid.x))
    return coeffs @ modes


def sample_source(rng: np.random.Generator, grid: Grid, ops: StepOperators) -> np.ndarray:
    """Random sine sums per time level, each smoothed by one implicit diffusion step."""
    coeffs = rng.uniform(-1.0, 1.0, (grid.m + 1, SAMPLE_MODES))
    modes = np.sin(np.pi * np.outer(np.arange(1, SAMPLE_MODES + 1), grid.x))
    raw = coeffs @ modes
    if ops.shared:
        return ops.solve(1, raw.T).T
    return np.array([ops.solve(min(max(k, 1), grid.m), raw[k]) for k in range(grid.m + 1)])


def draw_sample(seed: int, sample_id: int, grid: Grid, ops: StepOperators):
    """(vT, h) for one study sample; independent stream per (seed, sample_id)."""
    rng = np.random.default_rng([int(seed), int(sample_id)])
    vT = sample_terminal(rng, grid)
    h = sample_source(rng, grid, ops)
    return vT, h


def ratio_study(problem: ControlProblem, params_base: CarlemanParams, s_list, lambda_list,
                sample_count: int, seed: int, grid: Grid, samples=None) -> list[CarlemanReport]:
    """Carleman reports for every (s, lam) and every sample.

    ``samples`` overrides the random draw with explicit (vT, h) pairs.
    Samples whose right side vanishes are flagged degenerate.
    """
    if samples is None and sample_count < 1:
        raise ValueError("sample_count must be at least 1")
    ops = StepOperators(problem, grid)
    if samples is None:
        samples = [draw_sample(seed, i, grid, ops) for i in range(sample_count)]
    trajectories = [solve_adjoint(problem, vT, h, grid, ops=ops) for vT, h in samples]
    reports = []
    for s in s_list:
        for lam in lambda_list:
            params = replace(params_base, s=float(s), lam=float(lam))
            tables = build_weights(params, grid)
            for i, ((vT, h), v) in enumerate(zip(samples, trajectories)):
                reports.append(carleman_report(v, h, problem, params, grid, tables, i))
    return reports


def max_ratios(reports) -> dict:
    """Largest non-degenerate ratio per (s, lam)."""
    out = {}
    for r in reports:
        if r.degenerate:
            continue
        key = (r.s, r.lam)
        out[key] = max(out.get(key, -math.inf), r.ratio)
    return out


def log_observability_quotient(problem: ControlProblem, vT, params: CarlemanParams,
                               grid: Grid, tables=None, ops=None) -> float:
    """log of ||v(0)||^2 / int_{omega x (0,T)} exp(-2 s sigma) xi^3 |v|^2 for h = 0."""
    vT = np.asarray(vT, dtype=float)
    if not np.any(vT):
        raise ValueError("terminal datum must be nonzero")
    tables = tables or build_weights(params, grid)
    v = solve_adjoint(problem, vT, None, grid, ops=ops)
    num = l2_norm(v[0], grid) ** 2
    mask = problem.indicator(grid).astype(bool)
    decay = _interior(tables, tables.log_decay)
    lxi = _interior(tables, tables.log_xi)
    log_den = _log_integral(decay + 3 * lxi + _log_sq(v[1:-1]), grid, mask)
    if num == 0.0:
        return -math.inf
    if log_den == -math.inf:
        return math.inf
    return math.log(num) - log_den


def observability_quotient(problem, vT, params, grid, tables=None, ops=None) -> float:
    """The weighted observability quotient; inf when it exceeds the double range
    or the observation vanishes."""
    lq = log_observability_quotient(problem, vT, params, grid, tables, ops)
    if lq > 709.0:
        return math.inf
    return math.exp(lq)


def plain_observability_quotient(problem: ControlProblem, vT, grid: Grid, ops=None) -> float:
    """||v(0)||^2 / sum_{k<m} dt <1_omega v^k, v^k>, the unweighted constant
    that bounds the penalized control cost."""
    v = solve_adjoint(problem, vT, None, grid, ops=ops)
    mask = problem.indicator(grid)
    den = grid.dt * grid.h * float(np.sum(mask * v[:-1] ** 2))
    num = l2_norm(v[0], grid) ** 2
    return num / den if den > 0 else math.inf


@dataclass
class ObservabilityStudy:
    log_quotients: list
    plain_quotients: list
    seed: int

    @property
    def max_log_quotient(self) -> float:
        return max(self.log_quotients)

    @property
    def max_plain_quotient(self) -> float:
        return max(self.plain_quotients)


def observability_study(problem, params, sample_count: int, seed: int, grid: Grid) -> ObservabilityStudy:
    ops = StepOperators(problem, grid)
    tables = build_weights(params, grid)
    logs, plain = [], []
    for i in range(sample_count):
        rng = np.random.default_rng([int(seed), int(i)])
        vT = sample_terminal(rng, grid)
        logs.append(log_observability_quotient(problem, vT, params, grid, tables, ops))
        plain.append(plain_observability_quotient(problem, vT, grid, ops))
    return ObservabilityStudy(logs, plain, seed)


def hip3_bound(profile, params: CarlemanParams, grid: Grid) -> float:
    """min of |eta'(x)| a(x) over grid nodes outside omega_delta."""
    x = grid.x_nodes
    lo, hi = params.window
    out = (x <= lo) | (x >= hi)
    vals = np.abs(x[out] - params.x0) * np.asarray(profile(x[out]), dtype=float)
    return float(vals.min()) if vals.size else math.inf


@dataclass
class IdentityReport:
    residual: float
    log_norm_sq: dict = field(default_factory=dict)

    @property
    def energy_gap(self) -> float:
        """| ||P+ z + P- z||^2 / ||G||^2 - 1 |, the defect in the expanded-square identity."""
        a = self.log_norm_sq["sum"]
        b = self.log_norm_sq["G"]
        if b == -math.inf:
            return 0.0 if a == -math.inf else math.inf
        return math.inf if a - b > 700 else abs(math.expm1(a - b))


def _log_norm_sq(scale, mant, grid):
    with np.errstate(divide="ignore"):
        dens = 2 * scale + _log_sq(mant)
    return _log_integral(dens, grid)


def _relative(log_r, log_parts):
    finite = [p for p in log_parts if p > -math.inf]
    if log_r == -math.inf:
        return 0.0
    if not finite:
        return math.inf
    log_den = float(logsumexp([0.5 * p for p in finite]))
    return math.exp(0.5 * log_r - log_den)


def z_transform_report(v, h, params: CarlemanParams, problem: ControlProblem,
                       grid: Grid, tables: WeightTables | None = None) -> IdentityReport:
    """Consistency of the conjugated equation for z = exp(-s sigma) v.

    Every node carries its own scale: the largest exp(-s sigma) over its
    five-point stencil. Difference quotients of z are formed from mantissas
    relative to that scale and the norms are reassembled in the log domain.
    """
    tables = tables or build_weights(params, grid)
    s = params.s
    m, n = grid.m, grid.n
    v = np.asarray(v, dtype=float)
    vp = np.pad(v, ((0, 0), (1, 1)))

    lw = np.empty((m + 1, n + 2))
    lw[1:-1] = 0.5 * tables.log_decay
    lw[0] = lw[-1] = 0.0 if s == 0 else -math.inf

    c = lw[1:-1, 1:-1]
    left, right = lw[1:-1, :-2], lw[1:-1, 2:]
    up, down = lw[2:, 1:-1], lw[:-2, 1:-1]
    S = np.maximum.reduce([c, left, right, up, down])

    zc = vp[1:-1, 1:-1] * np.exp(c - S)
    zl = vp[1:-1, :-2] * np.exp(left - S)
    zr = vp[1:-1, 2:] * np.exp(right - S)
    zu = vp[2:, 1:-1] * np.exp(up - S)
    zd = vp[:-2, 1:-1] * np.exp(down - S)

    a_half = half_node_coefficient(problem.profile, grid)
    a = np.asarray(problem.profile(grid.x), dtype=float)[None, :]
    da = np.asarray(problem.profile(grid.x, 1), dtype=float)[None, :]
    xi = np.exp(tables.log_xi[:, 1:-1])
    ep = tables.eta_prime[None, 1:-1]
    sx = tables.sigma_x[:, 1:-1]
    st = tables.sigma_t[:, 1:-1]
    lam = params.lam
    # (sigma_x a)_x with eta'' = -1
    sxa_x = -lam * xi * (-a + lam * ep**2 * a + ep * da)

    zt = (zu - zd) / (2 * grid.dt)
    zx = (zr - zl) / (2 * grid.h)
    azxx = (a_half[None, 1:] * (zr - zc) - a_half[None, :-1] * (zc - zl)) / grid.h**2

    p_minus = 2 * s * sxa_x * zc + 2 * s * sx * a * zx + zt
    p_plus = s**2 * sx**2 * a * zc + azxx + s * st * zc
    hh = np.zeros_like(zc) if h is None else np.asarray(h, dtype=float)[1:-1]
    g = np.exp(c - S) * hh + s * sxa_x * zc
    r = p_plus + p_minus - g

    logs = {
        "P+": _log_norm_sq(S, p_plus, grid),
        "P-": _log_norm_sq(S, p_minus, grid),
        "G": _log_norm_sq(S, g, grid),
        "R": _log_norm_sq(S, r, grid),
        "sum": _log_norm_sq(S, p_plus + p_minus, grid),
    }
    resid = _relative(logs["R"], [logs["G"], logs["P+"], logs["P-"]])
    return IdentityReport(resid, logs)


def z_transform_identity(v, h, params, problem, grid, tables=None) -> float:
    """Relative residual ||P+ z + P- z - G|| / (||G|| + ||P+ z|| + ||P- z||)."""
    return z_transform_report(v, h, params, problem, grid, tables).residual


def plain_pde_residual(v, h, profile, grid: Grid) -> float:
    """||v_t + (a v_x)_x - h|| / (||h|| + ||(a v_x)_x|| + ||v_t||) with the same
    centered stencils as the conjugated check."""
    vt, avxx, hh = pde_residual_field(np.asarray(v, dtype=float), h, profile, grid)
    w = grid.h * grid.dt
    norm = lambda q: math.sqrt(w * float(np.sum(q * q)))  # noqa: E731
    den = norm(hh) + norm(avxx) + norm(vt)
    num = norm(vt + avxx - hh)
    return num / den if den > 0 else 0.0

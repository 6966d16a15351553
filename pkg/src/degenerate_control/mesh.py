"""Uniform space-time grids on (0,1) x (0,T) and the discrete norms built on them.

Space slices are arrays of the n interior values (Dirichlet boundary values
are implicitly zero); space-time fields are (m+1, n) arrays, row k holding
time level t_k.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property

import numpy as np

SpaceSlice = np.ndarray
SpaceTimeField = np.ndarray

# time quadratures over levels 0..m
TIME_RULES = ("trapezoid", "interior", "implicit")


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    n: int
    m: int
    T: float

    def __post_init__(self):
        if int(self.n) != self.n or int(self.m) != self.m:
            raise GridError("n and m must be integers")
        if self.n < 3 or self.m < 3:
            raise GridError(f"need n >= 3 and m >= 3, got n={self.n}, m={self.m}")
        if not self.T > 0:
            raise GridError(f"horizon must be positive, got T={self.T}")

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def dt(self) -> float:
        return self.T / self.m

    @cached_property
    def x_nodes(self) -> np.ndarray:
        """All n+2 nodes including the boundary."""
        return np.arange(self.n + 2) * self.h

    @property
    def x(self) -> np.ndarray:
        """Interior nodes x_1..x_n."""
        return self.x_nodes[1:-1]

    @cached_property
    def x_half(self) -> np.ndarray:
        """Cell midpoints x_{i+1/2}, i = 0..n."""
        return (np.arange(self.n + 1) + 0.5) * self.h

    @cached_property
    def t_nodes(self) -> np.ndarray:
        t = np.arange(self.m + 1) * self.dt
        t[-1] = self.T
        return t

    def zeros(self) -> SpaceTimeField:
        return np.zeros((self.m + 1, self.n))

    def sample(self, func) -> SpaceSlice:
        return np.asarray(func(self.x), dtype=float) * np.ones(self.n)

    def sample_field(self, func) -> SpaceTimeField:
        """Evaluate func(x, t) on interior nodes at every time level."""
        X, Tt = np.meshgrid(self.x, self.t_nodes)
        return np.asarray(func(X, Tt), dtype=float) * np.ones((self.m + 1, self.n))

    def window_mask(self, window) -> np.ndarray:
        lo, hi = _check_window(window)
        # nodes on an endpoint are excluded whatever the rounding of i * h
        tol = 1e-9 * self.h
        return (self.x > lo + tol) & (self.x < hi - tol)


def build_grid(n: int, m: int, T: float) -> Grid:
    return Grid(n, m, float(T))


def _check_window(window):
    try:
        lo, hi = float(window[0]), float(window[1])
    except (TypeError, IndexError, ValueError):
        raise GridError(f"malformed window {window!r}") from None
    if not lo < hi:
        raise GridError(f"window must satisfy lo < hi, got ({lo}, {hi})")
    return lo, hi


def _check_slice(values, grid):
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.n:
        raise GridError(f"slice has {values.shape[0]} values, grid has n={grid.n}")
    return values


def _check_field(values, grid):
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.m + 1, grid.n):
        raise GridError(f"field shape {values.shape} does not match ({grid.m + 1}, {grid.n})")
    return values


def slice_inner(a: SpaceSlice, b: SpaceSlice, grid: Grid) -> float:
    return float(grid.h * np.dot(_check_slice(a, grid), _check_slice(b, grid)))


def l2_norm(values: SpaceSlice, grid: Grid) -> float:
    values = _check_slice(values, grid)
    return float(np.sqrt(grid.h * np.dot(values, values)))


def half_node_coefficient(profile, grid: Grid) -> np.ndarray:
    """a sampled at the n+1 cell midpoints."""
    return np.asarray(profile(grid.x_half), dtype=float)


def h1a_seminorm(values: SpaceSlice, profile, grid: Grid) -> float:
    """sqrt(h * sum_i a(x_{i+1/2}) ((u_{i+1} - u_i)/h)^2) with zero boundary values."""
    u = np.concatenate([[0.0], _check_slice(values, grid), [0.0]])
    grad = np.diff(u) / grid.h
    a_half = half_node_coefficient(profile, grid)
    return float(np.sqrt(grid.h * np.sum(a_half * grad**2)))


def time_weights(grid: Grid, rule: str = "trapezoid") -> np.ndarray:
    """Quadrature weights for the m+1 time levels.

    ``interior`` uses levels 1..m-1 only (for integrands singular at 0 and T);
    ``implicit`` uses levels 1..m, the right-endpoint rule matching one
    implicit Euler step per interval.
    """
    w = np.full(grid.m + 1, grid.dt)
    if rule == "trapezoid":
        w[0] = w[-1] = 0.5 * grid.dt
    elif rule == "interior":
        w[0] = w[-1] = 0.0
    elif rule == "implicit":
        w[0] = 0.0
    else:
        raise ValueError(f"unknown time rule {rule!r}; expected one of {TIME_RULES}")
    return w


def spacetime_inner(field_a: SpaceTimeField, field_b: SpaceTimeField, grid: Grid,
                    window=None, rule: str = "trapezoid") -> float:
    fa = _check_field(field_a, grid)
    fb = _check_field(field_b, grid)
    prod = fa * fb
    if window is not None:
        prod = prod[:, grid.window_mask(window)]
    return float(grid.h * np.dot(time_weights(grid, rule), prod.sum(axis=1)))


def spacetime_norm_sq(values: SpaceTimeField, grid: Grid, window=None,
                      rule: str = "trapezoid") -> float:
    return spacetime_inner(values, values, grid, window, rule)


# CSV: header row of x positions, one row per time level (or a single row for a slice)

def _fmt(v: float) -> str:
    return repr(float(v))


def field_to_csv(values, grid: Grid) -> str:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[1] != grid.n:
        raise GridError("field does not conform to grid")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([_fmt(x) for x in grid.x])
    for row in values:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_field_csv(path, values, grid: Grid) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(field_to_csv(values, grid))


def read_field_csv(path, grid: Grid | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return (x positions, values) with values of shape (rows, n)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise GridError(f"{path}: expected a header and at least one data row")
    xs = np.array([float(v) for v in rows[0]])
    values = np.array([[float(v) for v in r] for r in rows[1:]])
    if values.shape[1] != xs.size:
        raise GridError(f"{path}: ragged rows")
    if grid is not None:
        if xs.size != grid.n or not np.allclose(xs, grid.x, atol=1e-12):
            raise GridError(f"{path}: x positions do not match grid with n={grid.n}")
    return xs, values

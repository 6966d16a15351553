"""Run configuration: a versioned JSON document, validated before any solve."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .carleman import CarlemanParams
from .mesh import Grid, GridError, build_grid
from .profile import DiffusionProfile, ProfileError
from .solver import ControlProblem, Potential

SCHEMA_VERSION = 1
INITIAL_KINDS = ("sine", "zero")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _strict(data, cls, path):
    if not isinstance(data, dict):
        raise ConfigError(path, "expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")
    return cls(**data)


@dataclass
class GridConfig:
    n: int = 199
    m: int = 400
    T: float = 0.5


@dataclass
class InitialConfig:
    kind: str = "sine"
    mode: int = 1


@dataclass
class CarlemanConfig:
    s_list: list = field(default_factory=lambda: [4.0, 8.0, 16.0])
    lambda_list: list = field(default_factory=lambda: [2.0, 4.0])
    sample_count: int = 20
    seed: int = 0
    s: float = 2.0
    lam: float = 1.0


@dataclass
class HumConfig:
    eps: float = 1e-4
    eps_list: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4, 1e-5])
    tol: float = 1e-8
    max_iter: int = 500


@dataclass
class RunConfig:
    profile: dict = field(default_factory=lambda: {"kind": "power_law", "A": 0.4, "B": 0.6,
                                                   "alpha": 2.0, "beta": 2.0})
    omega: list = field(default_factory=lambda: [0.3, 0.7])
    delta: float = 0.15
    potential: dict = field(default_factory=lambda: {"kind": "zero"})
    initial: InitialConfig = field(default_factory=InitialConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    carleman: CarlemanConfig = field(default_factory=CarlemanConfig)
    hum: HumConfig = field(default_factory=HumConfig)
    output: str = "runs/default"
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("<root>", "expected an object")
        data = dict(data)
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"unsupported version {version!r}")
        nested = {"initial": InitialConfig, "grid": GridConfig,
                  "carleman": CarlemanConfig, "hum": HumConfig}
        for key, sub in nested.items():
            if key in data:
                try:
                    data[key] = _strict(data[key], sub, key)
                except TypeError as exc:
                    raise ConfigError(key, str(exc)) from None
        cfg = _strict(data, cls, "")
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    # validation and builders

    def validate(self) -> None:
        self.build_profile()
        g = self.grid
        for name in ("n", "m"):
            val = getattr(g, name)
            if not isinstance(val, int) or isinstance(val, bool) or val < 3:
                raise ConfigError(f"grid.{name}", "must be an integer >= 3")
        if not _number(g.T) or g.T <= 0:
            raise ConfigError("grid.T", "must be positive")
        if (not isinstance(self.omega, (list, tuple)) or len(self.omega) != 2
                or not all(_number(v) for v in self.omega)
                or not 0.0 <= self.omega[0] < self.omega[1] <= 1.0):
            raise ConfigError("omega", "must be [lo, hi] with 0 <= lo < hi <= 1")
        if not _number(self.delta) or self.delta <= 0:
            raise ConfigError("delta", "must be positive")
        try:
            Potential.from_dict(self.potential)
        except (ValueError, TypeError) as exc:
            raise ConfigError("potential", str(exc)) from None
        if self.initial.kind not in INITIAL_KINDS:
            raise ConfigError("initial.kind", f"must be one of {INITIAL_KINDS}")
        if not isinstance(self.initial.mode, int) or self.initial.mode < 1:
            raise ConfigError("initial.mode", "must be a positive integer")
        c = self.carleman
        for name in ("s_list", "lambda_list"):
            vals = getattr(c, name)
            if not isinstance(vals, list) or not vals or not all(_number(v) and v > 0 for v in vals):
                raise ConfigError(f"carleman.{name}", "must be a nonempty list of positive numbers")
        if not isinstance(c.sample_count, int) or c.sample_count < 1:
            raise ConfigError("carleman.sample_count", "must be an integer >= 1")
        if not isinstance(c.seed, int) or c.seed < 0:
            raise ConfigError("carleman.seed", "must be a nonnegative integer")
        if not _number(c.s) or c.s < 0:
            raise ConfigError("carleman.s", "must be nonnegative")
        if not _number(c.lam) or c.lam <= 0:
            raise ConfigError("carleman.lam", "must be positive")
        hm = self.hum
        if not _number(hm.eps) or hm.eps <= 0:
            raise ConfigError("hum.eps", "must be positive")
        if (not isinstance(hm.eps_list, list) or not hm.eps_list
                or not all(_number(v) and v > 0 for v in hm.eps_list)
                or any(b >= a for a, b in zip(hm.eps_list, hm.eps_list[1:]))):
            raise ConfigError("hum.eps_list", "must be a strictly decreasing list of positive numbers")
        if not _number(hm.tol) or hm.tol <= 0:
            raise ConfigError("hum.tol", "must be positive")
        if not isinstance(hm.max_iter, int) or hm.max_iter < 1:
            raise ConfigError("hum.max_iter", "must be a positive integer")
        if not isinstance(self.output, str) or not self.output:
            raise ConfigError("output", "must be a nonempty path")

    def build_profile(self) -> DiffusionProfile:
        try:
            return DiffusionProfile.from_dict(self.profile)
        except (ProfileError, KeyError, TypeError) as exc:
            raise ConfigError("profile", str(exc)) from None

    def build_grid(self) -> Grid:
        try:
            return build_grid(self.grid.n, self.grid.m, self.grid.T)
        except GridError as exc:
            raise ConfigError("grid", str(exc)) from None

    def initial_datum(self, grid: Grid) -> np.ndarray:
        if self.initial.kind == "zero":
            return np.zeros(grid.n)
        return np.sin(self.initial.mode * np.pi * grid.x)

    def build_problem(self, grid: Grid | None = None) -> ControlProblem:
        grid = grid or self.build_grid()
        return ControlProblem(self.build_profile(), tuple(self.omega), float(self.grid.T),
                              self.initial_datum(grid), Potential.from_dict(self.potential))

    def carleman_params(self, s=None, lam=None) -> CarlemanParams:
        profile = self.build_profile()
        return CarlemanParams(float(self.carleman.s if s is None else s),
                              float(self.carleman.lam if lam is None else lam),
                              float(self.grid.T), profile.x0, float(self.delta))


def _number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def default_config() -> RunConfig:
    cfg = RunConfig()
    cfg.validate()
    return cfg

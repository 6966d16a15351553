"""Diffusion coefficients that vanish on an interval, and checks of the
structural hypotheses a control run relies on."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

KINDS = ("power_law", "constant", "tabulated")

# refinement ladder for the divergence test of 1/a on tabulated profiles
_QUAD_LEVELS = tuple(2**k for k in range(8, 23, 2))
_DIVERGENCE_THRESHOLD = 1.0e6


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class DiffusionProfile:
    """Coefficient a(x) on [0, 1] that is zero on [A, B].

    ``power_law``: (A - x)**alpha left of A, (x - B)**beta right of B.
    ``constant``: a(x) = value everywhere (non-degenerate reference case).
    ``tabulated``: monotone cubic interpolation through (table_x, table_a).
    """

    A: float
    B: float
    alpha: float = 2.0
    beta: float = 2.0
    kind: str = "power_law"
    value: float = 1.0
    table_x: tuple = ()
    table_a: tuple = ()
    _interp: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ProfileError(f"unknown profile kind {self.kind!r}")
        if self.kind == "tabulated":
            xs = np.asarray(self.table_x, dtype=float)
            ys = np.asarray(self.table_a, dtype=float)
            if xs.ndim != 1 or xs.size < 2 or xs.size != ys.size:
                raise ProfileError("table_x and table_a must be 1-D of equal length >= 2")
            if xs[0] != 0.0 or xs[-1] != 1.0 or np.any(np.diff(xs) <= 0):
                raise ProfileError("table_x must increase strictly from 0 to 1")
            if np.any(ys < 0):
                raise ProfileError("tabulated coefficient must be nonnegative")
            object.__setattr__(self, "_interp", PchipInterpolator(xs, ys))

    def __call__(self, x, order: int = 0):
        return evaluate(self, x, order)

    @property
    def x0(self) -> float:
        return 0.5 * (self.A + self.B)

    @property
    def degenerate(self) -> bool:
        return self.kind != "constant" or self.value == 0.0

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "A": self.A, "B": self.B,
               "alpha": self.alpha, "beta": self.beta}
        if self.kind == "constant":
            out["value"] = self.value
        if self.kind == "tabulated":
            out["table_x"] = list(self.table_x)
            out["table_a"] = list(self.table_a)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DiffusionProfile":
        data = dict(data)
        kind = data.pop("kind", "power_law")
        allowed = {"A", "B", "alpha", "beta", "value", "table_x", "table_a"}
        unknown = set(data) - allowed
        if unknown:
            raise ProfileError(f"unknown profile keys: {sorted(unknown)}")
        if kind == "power_law":
            return make_power_profile(data["A"], data["B"], data["alpha"], data["beta"])
        if kind == "constant":
            return make_constant_profile(data.get("value", 1.0))
        return make_tabulated_profile(data["table_x"], data["table_a"],
                                      data.get("A"), data.get("B"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DiffusionProfile":
        return cls.from_dict(json.loads(text))


def make_power_profile(A: float, B: float, alpha: float, beta: float) -> DiffusionProfile:
    A, B, alpha, beta = float(A), float(B), float(alpha), float(beta)
    if not 0.0 < A:
        raise ProfileError(f"A must be positive, got {A}")
    if not B < 1.0:
        raise ProfileError(f"B must be below 1, got {B}")
    if B < A:
        raise ProfileError(f"B={B} is below A={A}")
    if alpha < 0 or beta < 0:
        raise ProfileError("exponents must be nonnegative")
    return DiffusionProfile(A=A, B=B, alpha=alpha, beta=beta, kind="power_law")


def make_constant_profile(value: float = 1.0) -> DiffusionProfile:
    if value < 0:
        raise ProfileError("constant coefficient must be nonnegative")
    # A, B are placeholders; there is no degeneracy set
    return DiffusionProfile(A=0.5, B=0.5, alpha=0.0, beta=0.0, kind="constant",
                            value=float(value))


def make_tabulated_profile(table_x: Sequence[float], table_a: Sequence[float],
                           A: float | None = None, B: float | None = None) -> DiffusionProfile:
    """Tabulated coefficient. A and B default to the extent of the zero run."""
    xs = np.asarray(table_x, dtype=float)
    ys = np.asarray(table_a, dtype=float)
    zeros = xs[ys == 0.0]
    if A is None or B is None:
        if zeros.size == 0:
            raise ProfileError("tabulated profile has no zero nodes; pass A and B")
        A, B = float(zeros.min()), float(zeros.max())
    if not 0.0 < A <= B < 1.0:
        raise ProfileError(f"need 0 < A <= B < 1, got A={A}, B={B}")
    return DiffusionProfile(A=float(A), B=float(B), alpha=0.0, beta=0.0, kind="tabulated",
                            table_x=tuple(xs.tolist()), table_a=tuple(ys.tolist()))


def _power_branch(d, p, order):
    # d**p and its derivatives in d, with 0**0 = 1 and vanishing terms kept at 0
    with np.errstate(divide="ignore", invalid="ignore"):
        if order == 0:
            out = np.power(d, p)
        elif order == 1:
            out = p * np.power(d, p - 1) if p != 0 else np.zeros_like(d)
        else:
            out = p * (p - 1) * np.power(d, p - 2) if p not in (0, 1) else np.zeros_like(d)
    return out


def evaluate(profile: DiffusionProfile, x, order: int = 0):
    """a(x), a'(x) or a''(x). Scalars in, scalars out.

    Derivatives at A and B are one-sided from the degenerate side, so they are
    0 there; power branches with exponent below the derivative order blow up
    near the endpoint and return inf.
    """
    if order not in (0, 1, 2):
        raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")
    scalar = np.ndim(x) == 0
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xa < 0.0) or np.any(xa > 1.0) or np.any(np.isnan(xa)):
        raise ValueError("x must lie in [0, 1]")

    if profile.kind == "constant":
        out = np.full_like(xa, profile.value if order == 0 else 0.0)
    elif profile.kind == "tabulated":
        out = profile._interp(xa, nu=order)
        out[(xa >= profile.A) & (xa <= profile.B)] = 0.0
        if order == 0:
            out = np.maximum(out, 0.0)
    else:
        A, B = profile.A, profile.B
        out = np.zeros_like(xa)
        left = xa < A
        right = xa > B
        if np.any(left):
            val = _power_branch(A - xa[left], profile.alpha, order)
            out[left] = -val if order == 1 else val
        if np.any(right):
            out[right] = _power_branch(xa[right] - B, profile.beta, order)
    return float(out[0]) if scalar else out


@dataclass
class HypothesisReport:
    degeneracy_ok: bool
    non_integrable_inverse_ok: bool
    regularity_ok: bool
    geometry_ok: bool
    window_ok: bool
    m_delta: float
    super_strong: bool
    messages: list = field(default_factory=list)

    @property
    def all_ok(self) -> bool:
        return (self.degeneracy_ok and self.non_integrable_inverse_ok and self.regularity_ok
                and self.geometry_ok and self.window_ok)

    def flags(self) -> dict:
        return {
            "degeneracy_ok": self.degeneracy_ok,
            "non_integrable_inverse_ok": self.non_integrable_inverse_ok,
            "regularity_ok": self.regularity_ok,
            "geometry_ok": self.geometry_ok,
            "window_ok": self.window_ok,
        }

    def to_dict(self) -> dict:
        out = self.flags()
        out.update(m_delta=self.m_delta, super_strong=self.super_strong,
                   all_ok=self.all_ok, messages=list(self.messages))
        return out


def _midpoint_inverse_integral(profile, lo, hi, cells):
    if hi <= lo:
        return 0.0
    edges = np.linspace(lo, hi, cells + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    vals = evaluate(profile, mids)
    with np.errstate(divide="ignore"):
        inv = np.where(vals > 0, 1.0 / np.where(vals > 0, vals, 1.0), np.inf)
    return float(np.sum(inv) * (hi - lo) / cells)


def inverse_diverges(profile: DiffusionProfile) -> bool:
    """Whether 1/a fails to be integrable on [0, A) u (B, 1].

    Power laws are decided from the exponents. Otherwise a refining midpoint
    rule must exceed the threshold on two successive levels.
    """
    if profile.kind == "power_law":
        return profile.alpha >= 1.0 and profile.beta >= 1.0
    if profile.kind == "constant":
        return profile.value == 0.0
    above = 0
    for cells in _QUAD_LEVELS:
        total = (_midpoint_inverse_integral(profile, 0.0, profile.A, cells)
                 + _midpoint_inverse_integral(profile, profile.B, 1.0, cells))
        above = above + 1 if total > _DIVERGENCE_THRESHOLD else 0
        if above >= 2:
            return True
    return False


def _regularity(profile: DiffusionProfile, messages: list) -> bool:
    if profile.kind == "power_law":
        ok = profile.alpha >= 2.0 and profile.beta >= 2.0
        if not ok:
            messages.append("exponents below 2: a is not W^{2,inf} near the degeneracy set")
        return ok
    if profile.kind == "constant":
        return True
    # heuristic: (a a'')' stays bounded under refinement
    maxima = []
    for pts in (2001, 8001):
        xs = np.linspace(0.0, 1.0, pts)
        prod = evaluate(profile, xs) * evaluate(profile, xs, 2)
        maxima.append(np.max(np.abs(np.diff(prod) / np.diff(xs))))
    ok = bool(np.isfinite(maxima[1]) and maxima[1] <= 2.0 * maxima[0] + 1e-12)
    messages.append("regularity of tabulated profile checked by finite differences (advisory)")
    return ok


def validate_hypotheses(profile: DiffusionProfile, omega: tuple, delta: float,
                        samples: int = 10001) -> HypothesisReport:
    """Check degeneracy, non-integrability of 1/a, regularity, and the
    covering conditions [A, B] in omega_delta = (x0-delta, x0+delta) in omega.

    Never raises; failures are reported through the flags and messages.
    """
    messages = []
    lo, hi = float(omega[0]), float(omega[1])
    x0 = profile.x0

    if profile.kind == "constant":
        degeneracy_ok = profile.value == 0.0
        if not degeneracy_ok:
            messages.append("constant coefficient does not vanish anywhere")
    else:
        xs = np.linspace(0.0, 1.0, samples)
        vals = evaluate(profile, xs)
        inside = (xs >= profile.A) & (xs <= profile.B)
        zero_in = bool(np.all(vals[inside] == 0.0)) and evaluate(profile, profile.A) == 0.0 \
            and evaluate(profile, profile.B) == 0.0
        pos_out = bool(np.all(vals[~inside] > 0.0))
        degeneracy_ok = zero_in and pos_out
        if not zero_in:
            messages.append("a does not vanish identically on [A, B]")
        if not pos_out:
            messages.append("a is not positive off [A, B]")

    non_integrable = inverse_diverges(profile)
    if not non_integrable:
        messages.append("1/a is integrable near the degeneracy set")
    regularity_ok = _regularity(profile, messages)

    geometry_ok = 0.0 < lo < profile.A and profile.B < hi < 1.0
    if not geometry_ok:
        messages.append(f"[A, B] = [{profile.A}, {profile.B}] is not inside omega = ({lo}, {hi})")

    wlo, whi = x0 - delta, x0 + delta
    window_ok = delta > 0 and lo <= wlo < profile.A and profile.B < whi <= hi
    if not window_ok:
        messages.append(f"need [A, B] inside omega_delta = ({wlo:g}, {whi:g}) inside omega")

    xs = np.linspace(0.0, 1.0, samples)
    outside = xs[(xs <= wlo) | (xs >= whi)]
    outside = np.concatenate([outside, [p for p in (wlo, whi) if 0.0 <= p <= 1.0]])
    m_delta = float(np.min(evaluate(profile, outside))) if outside.size else float("nan")

    super_strong = profile.kind == "power_law" and profile.alpha >= 2 and profile.beta >= 2
    return HypothesisReport(
        degeneracy_ok=bool(degeneracy_ok),
        non_integrable_inverse_ok=bool(non_integrable),
        regularity_ok=bool(regularity_ok),
        geometry_ok=bool(geometry_ok),
        window_ok=bool(window_ok),
        m_delta=m_delta,
        super_strong=bool(super_strong),
        messages=messages,
    )


DEFAULT_PROFILE = make_power_profile(0.4, 0.6, 2.0, 2.0)

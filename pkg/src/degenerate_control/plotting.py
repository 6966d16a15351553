"""Figures for the CLI reports. Rendered off-screen to PNG next to the CSV data."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated renders byte-stable
_META = {"Software": None}


def _style(ax, xlabel, ylabel, title=None):
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title, fontsize=10)
    ax.grid(True, alpha=0.3, lw=0.5)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def plot_profiles(path, x, curves: dict, title=None, xlabel="x", ylabel="value",
                  shade=None):
    """Line plot of several slices over x; ``shade`` marks an interval such as omega."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    if shade is not None:
        ax.axvspan(shade[0], shade[1], color="0.9", zorder=0)
    for label, y in curves.items():
        ax.plot(x, y, lw=1.4, label=label)
    _style(ax, xlabel, ylabel, title)
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def plot_field(path, x, t, values, title=None, label="value"):
    fig, ax = plt.subplots(figsize=(6, 3.8))
    vmax = float(np.max(np.abs(values))) or 1.0
    mesh = ax.pcolormesh(x, t, values, shading="auto", cmap="RdBu_r", vmin=-vmax, vmax=vmax)
    fig.colorbar(mesh, ax=ax, label=label)
    _style(ax, "x", "t", title)
    _save(fig, path)


def plot_sweep(path, eps, cost_ratio, terminal_ratio, title=None):
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.loglog(eps, cost_ratio, "o-", lw=1.4, label=r"$\|f_\varepsilon\|^2 / \|u_0\|^2$")
    ax.loglog(eps, terminal_ratio, "s--", lw=1.4,
              label=r"$\|u_\varepsilon(T)\|^2 / (\varepsilon \|u_0\|^2)$")
    ax.invert_xaxis()
    _style(ax, r"$\varepsilon$", "normalized value", title)
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def plot_ratios(path, table: dict, title=None):
    """``table`` maps lambda to (s values, max ratios)."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    for lam, (s_vals, ratios) in sorted(table.items()):
        ax.semilogx(s_vals, ratios, "o-", lw=1.4, label=rf"$\lambda={lam:g}$")
    _style(ax, "s", "max ratio", title)
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def plot_samples(path, ids, values, ylabel, title=None):
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.plot(ids, values, "o", ms=4)
    _style(ax, "sample", ylabel, title)
    _save(fig, path)

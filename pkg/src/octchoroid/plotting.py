"""Correlation and Bland-Altman figures, written as deterministic SVG."""

from __future__ import annotations

import numpy as np
from matplotlib import rc_context
from matplotlib.figure import Figure

from .stats import bland_altman_points

SVG_METADATA = {"Date": None, "Creator": "octchoroid"}

STYLE = {
    # fixed element ids and text kept as text, so reruns are byte-identical
    "svg.hashsalt": "octchoroid",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
}


def _figure(width=4.0, height=3.6):
    fig = Figure(figsize=(width, height))
    ax = fig.add_subplot(1, 1, 1)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_METADATA)


def correlation_plot(xs, ys, fit, path, label="", units="", x_name="A", y_name="B"):
    """Scatter of paired values with the identity line and the OLS fit."""
    with rc_context(STYLE):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        fig, ax = _figure()
        lo = float(min(xs.min(), ys.min()))
        hi = float(max(xs.max(), ys.max()))
        pad = 0.05 * (hi - lo or 1.0)
        line = np.array([lo - pad, hi + pad])
        ax.plot(line, line, color="0.5", linestyle="--", linewidth=1, label="identity")
        if fit is not None:
            ax.plot(line, fit.intercept + fit.slope * line, color="tab:red", linewidth=1.2,
                    label=f"fit: y = {fit.slope:.3f}x {fit.intercept:+.3g}")
        ax.scatter(xs, ys, s=14, color="tab:blue", edgecolor="none", alpha=0.8)
        unit = f" ({units})" if units else ""
        ax.set_xlabel(f"{label} {x_name}{unit}".strip())
        ax.set_ylabel(f"{label} {y_name}{unit}".strip())
        ax.set_xlim(line)
        ax.set_ylim(line)
        ax.set_aspect("equal")
        ax.legend(loc="upper left", frameon=False)
        _save(fig, path)


def bland_altman_plot(xs, ys, ba, path, label="", units=""):
    """Differences against means with the mean difference and limits of agreement."""
    with rc_context(STYLE):
        means, diffs = bland_altman_points(xs, ys)
        fig, ax = _figure(4.4, 3.2)
        ax.scatter(means, diffs, s=14, color="tab:blue", edgecolor="none", alpha=0.8)
        ax.axhline(ba.mean_diff, color="k", linewidth=1, label=f"mean {ba.mean_diff:+.3g}")
        for y, name in ((ba.loa_low, "lower"), (ba.loa_high, "upper")):
            ax.axhline(y, color="tab:red", linestyle="--", linewidth=1,
                       label=f"{name} LoA {y:+.3g}")
        unit = f" ({units})" if units else ""
        ax.set_xlabel(f"mean {label}{unit}".strip())
        ax.set_ylabel(f"difference{unit}")
        ax.legend(loc="best", frameon=False)
        _save(fig, path)

"""Static figures for experiment reports.

Figures are written with the Agg backend and without timestamps, so SVG
output is byte-identical between runs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "font.size": 10,
    "axes.labelsize": 11,
    "axes.titlesize": 11,
    "legend.fontsize": 9,
    "lines.linewidth": 1.4,
    "lines.markersize": 5,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "jumptrunc",
    "svg.fonttype": "none",
}


def _save(fig, path):
    fig.savefig(path, metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)


def plot_convergence(table, fit, path, theory_rate=None, title=""):
    """Log-log plot of the raw moment and the norm error against the step size."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.5, 4.2))
        d = table.deltas
        raw = table.raw_moments
        se = np.array([row.std_error for row in table.rows])
        norm = np.array([row.norm_error for row in table.rows])
        ax.errorbar(d, raw, yerr=se, fmt="o-", capsize=3, label=f"raw moment E|e|^r, r={table.r:.4g}")
        ax.loglog(d, norm, "s--", label="norm (E|e|^r)^(1/r)")
        ax.loglog(d, np.exp(fit.intercept) * d**fit.slope, "k:", label=f"fit slope {fit.slope:.3f}")
        if theory_rate is not None:
            anchor = raw[-1] * (d / d[-1]) ** theory_rate
            ax.loglog(d, anchor, "r-.", label=f"reference slope {theory_rate:.4g}")
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("step size")
        ax.set_ylabel("strong error")
        if title:
            ax.set_title(title)
        ax.legend()
        _save(fig, path)


def plot_mean_square(series, path, sample=None, log_scale=True, reference=None, title=""):
    """Sample path (optional, left) and the Monte Carlo ``E|X|^2`` series (right).

    ``reference`` is a ``(label, values)`` pair drawn on the series panel.
    """
    with plt.rc_context(_RC):
        ncols = 2 if sample is not None else 1
        fig, axes = plt.subplots(1, ncols, figsize=(5.0 * ncols, 4.0), squeeze=False)
        axes = axes[0]
        if sample is not None:
            t, x = sample
            axes[0].plot(t, x, lw=0.8)
            axes[0].set_xlabel("t")
            axes[0].set_ylabel("X(t)")
            axes[0].set_title("one sample path")
        ax = axes[-1]
        ax.plot(series.times, series.mean, label="E|X|^2")
        lo = np.maximum(series.mean - 3 * series.std_error, 0)
        ax.fill_between(series.times, lo, series.mean + 3 * series.std_error, alpha=0.25, label="+-3 s.e.")
        if reference is not None:
            label, values = reference
            ax.plot(series.times, values, "r--", label=label)
        if log_scale:
            ax.set_yscale("log")
        ax.set_xlabel("t")
        ax.set_ylabel("mean square")
        ax.set_title(title or f"{series.n_paths} paths, step {series.delta:g}")
        ax.legend()
        _save(fig, path)

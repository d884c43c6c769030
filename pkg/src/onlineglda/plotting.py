"""Report figures.  Rendering uses the Agg backend and strips the software tag so
the same inputs produce byte-identical PNG files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 100,
}

_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)


def plot_pattern_matrix(pm, path, title="component proportions"):
    """Gray-scale image of a pattern matrix: black is probability 0, white is 1."""
    with plt.rc_context(RC):
        K, T = pm.values.shape
        fig, ax = plt.subplots(figsize=(max(4.0, min(12.0, T / 10.0)), 1.0 + 0.25 * K))
        ax.imshow(pm.values, cmap="gray", vmin=0.0, vmax=1.0, aspect="auto",
                  interpolation="nearest")
        ax.set_xlabel("pattern window")
        ax.set_ylabel("component")
        ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)


def plot_energy(times, computed, estimated, path):
    with plt.rc_context(RC):
        fig, axes = plt.subplots(2, 1, figsize=(7.0, 4.0), sharex=True)
        axes[0].plot(times, computed, color="k", lw=0.8)
        axes[0].set_ylabel("computed [J]")
        axes[1].plot(times, estimated, color="tab:blue", lw=0.8)
        axes[1].set_ylabel("estimated [J]")
        axes[1].set_xlabel("window start [s]")
        fig.tight_layout()
        _save(fig, path)


def plot_trace(ts, values, path, ylabel="ELBO estimate"):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6.0, 3.0))
        ax.plot(ts, values, lw=0.6, color="k")
        ax.set_xlabel("iteration")
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        _save(fig, path)


def plot_sweep(rows, path):
    """Held-out perplexity per (kappa, tau0) setting, one line per batch size."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6.0, 3.0))
        settings = sorted({(r[0], r[1]) for r in rows})
        labels = [f"{k:g}/{t:g}" for k, t in settings]
        for bs in sorted({r[2] for r in rows}):
            ys = [next((r[3] for r in rows if (r[0], r[1], r[2]) == (k, t, bs)), np.nan)
                  for k, t in settings]
            ax.plot(range(len(settings)), ys, marker="o", lw=0.8, label=f"BS={bs}")
        ax.set_xticks(range(len(settings)))
        ax.set_xticklabels(labels, rotation=45, ha="right")
        ax.set_xlabel("kappa / tau0")
        ax.set_ylabel("held-out perplexity")
        ax.legend()
        fig.tight_layout()
        _save(fig, path)

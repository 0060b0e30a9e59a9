"""Figure rendering for the CLI report paths (written alongside the CSVs)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import rmt


def plot_accuracy(curves: dict, path, ylabel: str = "alignment |<est, truth>|"):
    """Accuracy-vs-iteration curves, one line per method.

    ``curves`` maps a method label to (iterations, mean values, sd values).
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (ts, mean, sd) in curves.items():
        ts = np.asarray(ts, dtype=float)
        mean = np.asarray(mean, dtype=float)
        if len(ts) == 1:
            ax.errorbar(ts, mean, yerr=sd, fmt="o", capsize=3, label=label)
        else:
            ax.plot(ts, mean, marker="o", ms=3, label=label)
            if sd is not None:
                sd = np.asarray(sd, dtype=float)
                ax.fill_between(ts, mean - sd, mean + sd, alpha=0.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_spectrum(singvals: np.ndarray, gamma: float, n_outliers: int, path):
    """Scree plot plus bulk histogram with the Marcenko-Pastur overlay."""
    singvals = np.sort(np.asarray(singvals, dtype=float))[::-1]
    lo, hi = rmt.bulk_edges(gamma)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    m = min(len(singvals), 100)
    ax1.plot(np.arange(1, m + 1), singvals[:m], "o", ms=3)
    ax1.axhline(hi, color="red", ls="--", lw=1, label=r"bulk edge")
    ax1.set_xlabel("index")
    ax1.set_ylabel("singular value")
    ax1.set_title(f"scree (top {m}); {n_outliers} outlier(s)")
    ax1.legend(frameon=False)

    bulk = singvals[n_outliers:]
    ax2.hist(bulk, bins=60, density=True, alpha=0.6, label="bulk")
    xs = np.linspace(max(lo, 1e-9), hi, 400)
    ax2.plot(xs, rmt.mp_singular_density(xs, gamma), "r-", lw=1.5, label="MP prediction")
    ax2.set_xlabel("singular value")
    ax2.set_ylabel("density")
    ax2.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_pc_scatter(V: np.ndarray, path, title: str = "denoised PC entries"):
    """Scatter of the first two PC coordinates (histogram when k = 1)."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    fig, ax = plt.subplots(figsize=(5, 4.5))
    if V.shape[1] >= 2:
        ax.scatter(V[:, 0], V[:, 1], s=4, alpha=0.4)
        ax.set_xlabel("PC 1")
        ax.set_ylabel("PC 2")
    else:
        ax.hist(V[:, 0], bins=80, density=True, alpha=0.7)
        ax.set_xlabel("PC 1 entries")
        ax.set_ylabel("density")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

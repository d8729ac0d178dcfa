"""Report figures rendered to files next to the delimited output."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def correlation_heatmap(corr, path, mask_below=0.0, labels=None):
    """Correlation matrix as a heatmap; weak entries can be grayed out."""
    corr = np.asarray(corr, dtype=float)
    shown = np.ma.masked_where(np.abs(corr) < mask_below, corr)
    fig, ax = plt.subplots(figsize=(6, 5))
    cmap = plt.get_cmap("RdBu_r").copy()
    cmap.set_bad(color="0.85")
    image = ax.imshow(shown, vmin=-1.0, vmax=1.0, cmap=cmap)
    fig.colorbar(image, ax=ax, shrink=0.8)
    if labels is not None and len(labels) <= 40:
        ax.set_xticks(range(len(labels)), labels, rotation=90, fontsize=6)
        ax.set_yticks(range(len(labels)), labels, fontsize=6)
    ax.set_title("correlation" + (f" (|r| < {mask_below:g} grayed)"
                                  if mask_below > 0 else ""))
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def loading_heatmap(lam, path, title="loadings"):
    """Loading matrix with a diverging scale centered at zero."""
    lam = np.asarray(lam, dtype=float)
    span = np.max(np.abs(lam)) or 1.0
    fig, ax = plt.subplots(figsize=(4, 6))
    image = ax.imshow(lam, vmin=-span, vmax=span, cmap="RdBu_r",
                      aspect="auto")
    fig.colorbar(image, ax=ax, shrink=0.8)
    ax.set_xlabel("factor")
    ax.set_ylabel("feature")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def timing_plot(multipliers, seconds_per_iteration, path):
    """Per-iteration cost against the sample-size multiplier."""
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(multipliers, seconds_per_iteration, marker="o")
    ax.set_xlabel("sample-size multiplier")
    ax.set_ylabel("seconds per iteration")
    ax.set_ylim(bottom=0.0)
    ax.set_title("iteration cost vs sample size")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)

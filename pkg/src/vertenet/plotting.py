"""Report figures written straight to PNG files (Agg backend, no timestamps)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_sweep(rows, path) -> None:
    """Accuracy and error counts against the crop factor."""
    factors = [r.factor for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(factors, [r.accuracy for r in rows], "o-", color="k", label="accuracy (%)")
    ax.set_xlabel("factor")
    ax.set_ylabel("accuracy (%)")
    ax2 = ax.twinx()
    width = 0.02
    ax2.bar(np.array(factors) - width / 2, [r.FP for r in rows], width, color="tab:red", label="FP")
    ax2.bar(np.array(factors) + width / 2, [r.FN for r in rows], width, color="tab:blue", label="FN")
    ax2.set_ylabel("count")
    handles = ax.get_legend_handles_labels()[0] + ax2.get_legend_handles_labels()[0]
    ax.legend(handles, [h.get_label() for h in handles], loc="lower center", fontsize=8)
    _save(fig, path)


def plot_loss_curve(losses, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(np.arange(len(losses)), losses, lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("total loss")
    _save(fig, path)


def plot_agreement(pairs: dict, path) -> None:
    """Reader-vs-reader scatter per region; ``pairs`` maps region -> (scores_a, scores_b)."""
    regions = list(pairs)
    fig, axes = plt.subplots(1, len(regions), figsize=(2.6 * len(regions), 2.8), squeeze=False)
    for ax, region in zip(axes[0], regions):
        a, b = pairs[region]
        pts, counts = np.unique(np.column_stack([a, b]), axis=0, return_counts=True)
        ax.scatter(pts[:, 0], pts[:, 1], s=20 * counts, alpha=0.7)
        ax.plot([0, 6], [0, 6], color="grey", lw=0.6)
        ax.set_xlim(-0.5, 6.5)
        ax.set_ylim(-0.5, 6.5)
        ax.set_title(region)
        ax.set_xlabel("reader A")
    axes[0][0].set_ylabel("reader B")
    _save(fig, path)

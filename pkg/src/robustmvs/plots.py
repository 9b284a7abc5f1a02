"""Matplotlib figure rendering for the CLI report paths.

Every report-producing subcommand saves figures next to its delimited
output: depth/confidence colormaps, selection-frequency histograms,
ablation bar charts, and precision/recall curves.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_depth_figure(depth: np.ndarray, path: str | Path, title: str = "depth") -> None:
    masked = np.ma.masked_where(depth <= 0, depth)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    im = ax.imshow(masked, cmap="viridis")
    ax.set_title(title)
    ax.set_axis_off()
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.savefig(Path(path), dpi=110, bbox_inches="tight")
    plt.close(fig)


def save_confidence_figure(conf: np.ndarray, path: str | Path, threshold: float) -> None:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    im = ax.imshow(conf, cmap="magma", vmin=0.0, vmax=1.0)
    ax.set_title(f"confidence (threshold {threshold:g})")
    ax.set_axis_off()
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.savefig(Path(path), dpi=110, bbox_inches="tight")
    plt.close(fig)


def save_selection_frequency_figure(
    counts: np.ndarray, path: str | Path, title: str = "top-K selection frequency"
) -> None:
    ranks = np.arange(1, len(counts) + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(ranks, counts, color="#3b73b9")
    ax.set_xlabel("view rank (1 = best)")
    ax.set_ylabel("selections")
    ax.set_title(title)
    ax.set_xticks(ranks)
    fig.savefig(Path(path), dpi=110, bbox_inches="tight")
    plt.close(fig)


def save_support_histogram(support: np.ndarray, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    if support.size:
        lo, hi = int(support.min()), int(support.max())
        bins = np.arange(lo - 0.5, hi + 1.5)
        ax.hist(support, bins=bins, color="#4a9b6e")
    ax.set_xlabel("supporting views per fused point")
    ax.set_ylabel("points")
    ax.set_title("fusion support")
    fig.savefig(Path(path), dpi=110, bbox_inches="tight")
    plt.close(fig)


def save_precision_recall_figure(
    thresholds: Sequence[float],
    precision: Sequence[float],
    recall: Sequence[float],
    f_score: Sequence[float],
    path: str | Path,
) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(thresholds, precision, "o-", label="precision")
    ax.plot(thresholds, recall, "s-", label="recall")
    ax.plot(thresholds, f_score, "^-", label="f-score")
    ax.set_xlabel("distance threshold (scene units)")
    ax.set_ylabel("percent")
    ax.set_ylim(0, 105)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.savefig(Path(path), dpi=110, bbox_inches="tight")
    plt.close(fig)


def save_ablation_figure(
    rows: Sequence[dict], metric: str, path: str | Path
) -> None:
    """Grouped bars of one validation metric over the ablation grid rows."""
    labels = [f"{r['cost']}\nK={r['K']}\n{r['aggregation']}" for r in rows]
    values = [r[metric] for r in rows]
    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(rows)), 4))
    ax.bar(np.arange(len(rows)), values, color="#b9743b")
    ax.set_xticks(np.arange(len(rows)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel(metric)
    ax.set_title(f"ablation: {metric}")
    fig.savefig(Path(path), dpi=110, bbox_inches="tight")
    plt.close(fig)

"""Matplotlib figure rendering for CLI report paths.

Each eval/report command saves a PNG next to its delimited output.  The Agg
backend is forced so rendering works headless.
"""

from __future__ import annotations

from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

__all__ = [
    "bar_figure",
    "paired_bar_figure",
    "loss_curve_figure",
    "rank_histogram_figure",
]

_FIGSIZE = (8.0, 4.5)


def _finish(fig, ax, title: str, ylabel: str, path) -> None:
    ax.set_title(title)
    ax.set_ylabel(ylabel)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def bar_figure(path, labels: Sequence[str], values: Sequence[float], title: str, ylabel: str) -> None:
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.bar(range(len(labels)), values, color="#4878cf")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    _finish(fig, ax, title, ylabel, path)


def paired_bar_figure(
    path,
    labels: Sequence[str],
    series: Dict[str, Sequence[float]],
    title: str,
    ylabel: str,
) -> None:
    """Grouped bars, one group per label, one bar per series."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    n_series = len(series)
    width = 0.8 / max(n_series, 1)
    for k, (name, values) in enumerate(series.items()):
        offsets = [i + (k - (n_series - 1) / 2.0) * width for i in range(len(labels))]
        ax.bar(offsets, values, width=width, label=name)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.legend()
    _finish(fig, ax, title, ylabel, path)


def loss_curve_figure(path, steps: Sequence[int], losses: Sequence[float]) -> None:
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(steps, losses, lw=1.0, color="#4878cf")
    ax.set_xlabel("step")
    _finish(fig, ax, "training loss", "loss", path)


def rank_histogram_figure(path, ranks: Sequence[int], title: str) -> None:
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    upper = max(ranks) if ranks else 1
    ax.hist(ranks, bins=min(50, upper), color="#4878cf")
    ax.set_xlabel("rank of the normal report")
    _finish(fig, ax, title, "images", path)

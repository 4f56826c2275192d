"""Matplotlib figures for training and evaluation reports.

Every function writes a PNG and returns its path. The Agg backend is forced
and PNG metadata is pinned so identical inputs give identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .evaluation import MetricsReport  # noqa: E402

STYLE = {
    "figure.figsize": (7.0, 4.0),
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "axes.grid": True,
    "grid.alpha": 0.25,
    "grid.linestyle": "-",
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.framealpha": 0,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "font.size": 10,
}

COLORS = {"structure": "#1b9e77", "variable": "#d95f02", "api": "#7570b3", "ensemble": "#e7298a"}
_FALLBACK = ["#66a61e", "#e6ab02", "#a6761d", "#666666"]

PNG_METADATA = {"Software": None}


def _color(name: str, i: int) -> str:
    return COLORS.get(name, _FALLBACK[i % len(_FALLBACK)])


def _metric_order(metric: str):
    # S@k columns by k, then anything else (MRR)
    return (0, int(metric[2:])) if metric.startswith("S@") else (1, metric)


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", metadata=PNG_METADATA)
    plt.close(fig)
    return path


def plot_metric_comparison(table: Mapping[str, Mapping[str, float]], path: str | Path,
                           title: str = "Members vs ensemble") -> Path:
    """Grouped bars: one group per metric (S@k..., MRR), one bar per model."""
    names = sorted(table, key=lambda n: n == "ensemble")
    metrics = sorted(next(iter(table.values())), key=_metric_order)
    x = np.arange(len(metrics))
    width = 0.8 / max(1, len(names))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, name in enumerate(names):
            values = [table[name][m] for m in metrics]
            bars = ax.bar(x + (i - (len(names) - 1) / 2) * width, values, width, label=name, color=_color(name, i))
            ax.bar_label(bars, fmt="%.2f", fontsize=7, padding=1)
        ax.set_xticks(x, metrics)
        ax.set_ylim(0, 1.22)
        ax.set_ylabel("score")
        ax.set_title(title)
        ax.legend(loc="upper center", ncols=len(names))
        fig.tight_layout()
        return _save(fig, path)


def plot_loss_curves(curves: Mapping[str, Sequence[float]], path: str | Path, title: str = "Training loss") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, (name, curve) in enumerate(curves.items()):
            ax.plot(np.arange(1, len(curve) + 1), curve, marker="o", markersize=3, label=name, color=_color(name, i))
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy")
        ax.set_title(title)
        ax.legend(loc="upper right")
        fig.tight_layout()
        return _save(fig, path)


def plot_frank_histogram(report: MetricsReport, path: str | Path, name: str = "model") -> Path:
    """Distribution of first-hit ranks, one bin per rank position."""
    franks = np.array([r.frank for r in report.results])
    bins = np.arange(1, report.distractors + 3) - 0.5
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.hist(franks, bins=bins, color=_color(name, 0), edgecolor="white", linewidth=0.3)
        ax.set_xlabel("FRank")
        ax.set_ylabel("queries")
        ax.set_title(f"{name}: MRR {report.mrr:.3f} over {report.n_queries} queries")
        fig.tight_layout()
        return _save(fig, path)

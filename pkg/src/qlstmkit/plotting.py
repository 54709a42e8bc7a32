"""Figures for sweep reports, rendered off-screen to image files."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.5, 3.6),
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "savefig.dpi": 150,
}

AXIS_LABELS = {"qubits": "qubits", "noise": "bit-flip probability", "lr": "learning rate"}


def plot_axis_summary(path, axis: str, series: Mapping[str, Sequence[tuple[float, float, float]]]) -> Path:
    """Mean validation accuracy against the swept value, one line per column.

    ``series`` maps a column label to ``(value, mean, std)`` points; failed
    legs are simply absent from their line.
    """
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, points in series.items():
            if not points:
                continue
            points = sorted(points)
            xs, ys, es = zip(*points)
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=label)
        if axis == "lr":
            ax.set_xscale("log")
        ax.set_xlabel(AXIS_LABELS.get(axis, axis))
        ax.set_ylabel("validation accuracy")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_curves(path, curves: Mapping[str, Mapping[str, Sequence[float]]], ylabel: str) -> Path:
    """Per-epoch curves, one panel per column and one line per sweep value."""
    path = Path(path)
    panels = [k for k, v in curves.items() if v]
    n = max(len(panels), 1)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, n, figsize=(4.0 * n, 3.2), squeeze=False, sharey=True)
        for ax, panel in zip(axes[0], panels):
            for label, ys in curves[panel].items():
                ax.plot(range(1, len(ys) + 1), ys, label=label)
            ax.set_title(panel)
            ax.set_xlabel("epoch")
            ax.legend(fontsize=7)
        axes[0][0].set_ylabel(ylabel)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path

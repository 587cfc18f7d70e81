"""Matplotlib figure rendering for CLI report paths.

Figures land next to the delimited outputs they illustrate; the metric
code itself stays plot-free.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import EvalReport

__all__ = ["save_training_curve", "save_label_breakdown"]


def save_training_curve(records: Sequence[dict], path: str | Path) -> None:
    """Per-episode training loss with validation checkpoints overlaid."""
    episodes = [r["episode"] for r in records]
    losses = [r["loss"] for r in records]
    val_points = [
        (r["episode"], r["validation_loss"])
        for r in records
        if "validation_loss" in r
    ]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(episodes, losses, lw=0.9, color="#3465a4", label="training loss")
    if val_points:
        vx, vy = zip(*val_points)
        ax.plot(vx, vy, "o-", ms=4, color="#cc0000", label="validation loss")
    ax.set_xlabel("episode")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_label_breakdown(report: EvalReport, path: str | Path) -> None:
    """Grouped precision/recall/F1 bars per label, micro scores last."""
    from .evaluation import _prf

    labels = sorted(report.per_label)
    rows = []
    for label in labels:
        c = report.per_label[label]
        rows.append((label, *_prf(c.tp, c.fp, c.fn)))
    rows.append(("micro", report.precision, report.recall, report.f1))
    names = [r[0] for r in rows]
    width = 0.27
    xs = range(len(rows))
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(rows)), 4))
    for k, (metric, color) in enumerate(
        [("precision", "#4e9a06"), ("recall", "#3465a4"), ("F1", "#cc0000")]
    ):
        ax.bar(
            [x + (k - 1) * width for x in xs],
            [r[k + 1] for r in rows],
            width=width,
            label=metric,
            color=color,
        )
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

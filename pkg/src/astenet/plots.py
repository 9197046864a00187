"""Report figures, written to files with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .corpus import TABLE_LABELS  # noqa: E402
from .evaluate import ScoreReport  # noqa: E402

LABEL_COLOURS = ("#f2f2f2", "#4c9a5f", "#c4553b", "#d9a441")


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def bucket_chart(report: ScoreReport, path, title: str = "") -> Path:
    """F1 per gold-triplet-count bucket, with sentence counts over the bars."""
    names = list(report.buckets)
    f1 = [100 * report.buckets[n].f1 for n in names]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    bars = ax.bar(names, f1, color="#4a72b0")
    for bar, n in zip(bars, names):
        ax.annotate(f"n={report.bucket_sizes[n]}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=8)
    ax.axhline(100 * report.f1, color="black", lw=0.8, ls="--", label=f"all: {100 * report.f1:.1f}")
    ax.set_xlabel("gold triplets per sentence")
    ax.set_ylabel("F1 (%)")
    ax.set_ylim(0, 105)
    ax.legend(loc="upper right", fontsize=8)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def label_grid_figure(tokens: Sequence[str], table_logits: np.ndarray, path) -> Path:
    """Argmax table label per cell, one colour per label."""
    grid = np.argmax(table_logits, axis=-1)
    n = len(tokens)
    cmap = matplotlib.colors.ListedColormap(LABEL_COLOURS)
    size = max(3.0, 0.35 * n + 1.5)
    fig, ax = plt.subplots(figsize=(size + 1.2, size))
    im = ax.imshow(grid, cmap=cmap, vmin=-0.5, vmax=len(TABLE_LABELS) - 0.5)
    ax.set_xticks(range(n), tokens, rotation=60, ha="right", fontsize=8)
    ax.set_yticks(range(n), tokens, fontsize=8)
    bar = fig.colorbar(im, ax=ax, ticks=range(len(TABLE_LABELS)), fraction=0.046)
    bar.ax.set_yticklabels(TABLE_LABELS)
    return _save(fig, path)


def training_curve(log: Sequence[dict], path) -> Path:
    """Training loss and dev F1 against the step count."""
    train = [(int(e["step"]), float(e["loss"])) for e in log if e["event"] == "train"]
    evals = [(int(e["step"]), 100 * float(e["f1"])) for e in log if e["event"] == "eval"]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    if train:
        ax.plot(*zip(*train), color="#4a72b0", lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("training loss", color="#4a72b0")
    right = ax.twinx()
    if evals:
        right.plot(*zip(*evals), color="#c4553b", marker="o", ms=3)
    right.set_ylabel("dev F1 (%)", color="#c4553b")
    right.set_ylim(0, 105)
    return _save(fig, path)

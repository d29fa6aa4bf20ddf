"""Figures written next to the JSON/CSV reports (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_sweep(report, path) -> Path:
    """ROUGE-1/2/L (and TSLMScore on a twin axis) against the sweep axis."""
    rows = report.rows
    x = [r.value for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, label in (("rouge1", "R-1"), ("rouge2", "R-2"), ("rougeL", "R-L")):
        ax.plot(x, [getattr(r, key) for r in rows], marker="o", label=label)
    ax.set_xlabel({"temperature": "temperature", "fraction": "% denoised generated data"}.get(report.sweep, "run"))
    ax.set_ylabel("ROUGE F (x100)")
    ax.set_ylim(0, 100)
    scores = [r.tslm_score for r in rows]
    if all(s is not None for s in scores):
        twin = ax.twinx()
        twin.plot(x, scores, marker="s", linestyle="--", color="black", label="TSLMScore")
        twin.set_ylabel("TSLMScore")
        twin.legend(loc="lower right")
    ax.legend(loc="upper left")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_score_histogram(scores: Sequence[float], threshold: float, stats, path, bins: int = 40) -> Path:
    """Denoiser score distribution with the threshold and the suggested interval."""
    scores = np.asarray(scores, dtype=float)
    lo, hi = stats.suggested_interval
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(scores, bins=bins, color="tab:blue", alpha=0.7)
    ax.axvspan(lo, hi, color="tab:orange", alpha=0.2, label="[mean-2sd, mean-sd]")
    ax.axvline(threshold, color="tab:red", linestyle="--", label=f"threshold {threshold:.2f}")
    ax.set_xlabel("similarity score")
    ax.set_ylabel("pairs")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_losses(losses: Sequence[float], path, title: str = "training loss") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(1, len(losses) + 1), losses)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)

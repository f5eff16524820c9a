"""Matplotlib figures rendered next to the delimited outputs.

All rendering uses the Agg backend so it works headless; matplotlib is
imported lazily so the core library does not pay for it.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

__all__ = ["score_timeline_figure", "roc_figure"]


def _save(fig, path) -> None:
    tmp = Path(str(path) + ".tmp")
    fig.savefig(tmp, dpi=120, format="png")
    os.replace(tmp, path)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def score_timeline_figure(
    video_id: str,
    raw: np.ndarray,
    smoothed: np.ndarray,
    normalized: np.ndarray,
    path: str | Path,
    labels: np.ndarray | None = None,
) -> None:
    """Per-video score timeline; anomalous frames shaded when labels given."""
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(9, 5), sharex=True)
    t = np.arange(len(raw))
    ax1.plot(t, raw, lw=0.8, color="#999999", label="raw")
    ax1.plot(t, smoothed, lw=1.4, color="#1f77b4", label="smoothed")
    ax1.set_ylabel("score")
    ax1.legend(loc="upper right", fontsize=8)
    ax2.plot(t, normalized, lw=1.4, color="#d62728", label="normalized")
    ax2.set_ylim(-0.05, 1.05)
    ax2.set_ylabel("normalized")
    ax2.set_xlabel("frame")
    ax2.legend(loc="upper right", fontsize=8)
    if labels is not None:
        for ax in (ax1, ax2):
            ax.fill_between(t, 0, 1, where=np.asarray(labels) > 0,
                            transform=ax.get_xaxis_transform(),
                            color="#ffcc00", alpha=0.25, linewidth=0)
    fig.suptitle(f"anomaly scores: {video_id}")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def roc_figure(points: list[tuple[float, float]], auc: float | None, path: str | Path) -> None:
    """Pooled ROC curve with the AUC in the title."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5))
    if points:
        fpr = [p[0] for p in points]
        tpr = [p[1] for p in points]
        ax.plot(fpr, tpr, lw=1.6, color="#1f77b4")
    ax.plot([0, 1], [0, 1], lw=0.8, ls="--", color="#999999")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title("ROC" if auc is None else f"ROC (AUC = {auc:.4f})")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)

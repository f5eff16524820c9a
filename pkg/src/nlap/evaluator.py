"""Frame-level ROC-AUC evaluation of score series against 0/1 labels."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, EvalMismatchError, IngestError
from .scorer import FrameScoreSeries, normalize

__all__ = [
    "GroundTruth",
    "EvalReport",
    "load_labels",
    "roc_auc",
    "roc_curve",
    "evaluate",
    "write_report",
    "read_report",
]

NORMALIZE_MODES = ("per_video", "global", "none")
POOLINGS = ("pooled", "per_video_mean")


@dataclass(frozen=True)
class GroundTruth:
    video_id: str
    labels: np.ndarray  # one 0/1 per frame

    def __post_init__(self):
        arr = np.asarray(self.labels, dtype=np.int64)
        if arr.ndim != 1:
            raise ConfigError(f"labels for {self.video_id!r} must be 1-D")
        if not np.isin(arr, (0, 1)).all():
            raise ConfigError(f"labels for {self.video_id!r} must be 0 or 1")
        object.__setattr__(self, "labels", arr)


@dataclass
class EvalReport:
    pooled_auc: float | None
    per_video_auc: dict[str, float | None]
    per_video_mean_auc: float | None
    n_positive: int
    n_negative: int
    n_videos: int
    pooling: str
    normalize_mode: str
    roc_points: list[tuple[float, float]]
    timing: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def headline_auc(self) -> float | None:
        return self.per_video_mean_auc if self.pooling == "per_video_mean" else self.pooled_auc


def load_labels(path: str | Path, video_id: str | None = None) -> GroundTruth:
    """Read a labels file: one 0/1 per line, one line per frame."""
    p = Path(path)
    vid = video_id or p.stem
    try:
        lines = p.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise IngestError(f"cannot read labels {p}: {e}") from e
    values = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        if line not in ("0", "1"):
            raise IngestError(f"{p}: line {lineno}: expected 0 or 1, got {line!r}")
        values.append(int(line))
    if not values:
        raise IngestError(f"{p}: empty labels file")
    return GroundTruth(vid, np.array(values, dtype=np.int64))


def _ranks_average(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    sorted_v = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j + 2) / 2.0  # average of 1-based i+1 .. j+1
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """Frame-level AUC by the rank statistic; ties count one half.

    Equals the probability that a random positive outscores a random
    negative, with ties worth 0.5.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise ConfigError("scores and labels must be 1-D and equal length")
    if not np.isfinite(s).all():
        raise ConfigError("scores must be finite")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("undefined AUC: labels contain a single class")
    ranks = _ranks_average(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """ROC points (fpr, tpr) from (0,0) to (1,1), one per distinct score."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("undefined AUC: labels contain a single class")
    order = np.argsort(-s, kind="mergesort")
    sorted_s = s[order]
    tp = np.cumsum(y[order] == 1)
    fp = np.cumsum(y[order] == 0)
    distinct = np.nonzero(np.diff(sorted_s, append=-np.inf))[0]
    points = [(0.0, 0.0)]
    points.extend((float(fp[i]) / n_neg, float(tp[i]) / n_pos) for i in distinct)
    return points


def _prepare(series: list[FrameScoreSeries], normalize_mode: str) -> list[FrameScoreSeries]:
    if normalize_mode == "none":
        return series
    if normalize_mode == "per_video":
        return [s if s.stage == "normalized" else normalize(s) for s in series]
    # global: one min-max across all videos jointly
    lo = min(float(s.scores.min()) for s in series)
    hi = max(float(s.scores.max()) for s in series)
    span = hi - lo
    out = []
    for s in series:
        vals = np.zeros_like(s.scores) if span == 0 else (s.scores - lo) / span
        out.append(FrameScoreSeries(s.video_id, vals, "normalized"))
    return out


def evaluate(
    series: list[FrameScoreSeries],
    truths: list[GroundTruth],
    pooling: str = "pooled",
    normalize_mode: str = "per_video",
) -> EvalReport:
    """Match series to labels by video id and compute pooled/per-video AUC.

    Pooled AUC concatenates the per-video normalized series into one ranking.
    Videos whose labels are single-class still contribute frames to the pooled
    ranking but get no per-video AUC; a fully single-class pool yields
    pooled_auc None with an explanatory note instead of an error.
    """
    t0 = time.perf_counter()
    if pooling not in POOLINGS:
        raise ConfigError(f"pooling must be one of {POOLINGS}, got {pooling!r}")
    if normalize_mode not in NORMALIZE_MODES:
        raise ConfigError(f"normalize_mode must be one of {NORMALIZE_MODES}, got {normalize_mode!r}")
    if not series:
        raise EvalMismatchError("no score series to evaluate")

    by_id: dict[str, FrameScoreSeries] = {}
    for s in series:
        if s.video_id in by_id:
            raise EvalMismatchError(f"duplicate score series for video {s.video_id!r}")
        by_id[s.video_id] = s
    gt_by_id: dict[str, GroundTruth] = {}
    for g in truths:
        if g.video_id in gt_by_id:
            raise EvalMismatchError(f"duplicate labels for video {g.video_id!r}")
        gt_by_id[g.video_id] = g
    missing = sorted(set(by_id) - set(gt_by_id))
    extra = sorted(set(gt_by_id) - set(by_id))
    if missing or extra:
        raise EvalMismatchError(
            f"video id mismatch: scores without labels {missing}, labels without scores {extra}"
        )
    for vid, s in by_id.items():
        if len(s.scores) != len(gt_by_id[vid].labels):
            raise EvalMismatchError(
                f"video {vid!r}: {len(s.scores)} scores vs {len(gt_by_id[vid].labels)} labels"
            )

    notes: list[str] = []
    vids = sorted(by_id)
    prepared = dict(zip(vids, _prepare([by_id[v] for v in vids], normalize_mode)))

    per_video: dict[str, float | None] = {}
    for vid in vids:
        y = gt_by_id[vid].labels
        if y.min() == y.max():
            per_video[vid] = None
            notes.append(f"video {vid!r}: single-class labels, no per-video AUC")
        else:
            per_video[vid] = roc_auc(prepared[vid].scores, y)
    defined = [a for a in per_video.values() if a is not None]
    mean_auc = float(np.mean(defined)) if defined else None

    pooled_scores = np.concatenate([prepared[v].scores for v in vids])
    pooled_labels = np.concatenate([gt_by_id[v].labels for v in vids])
    n_pos = int((pooled_labels == 1).sum())
    n_neg = int((pooled_labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        pooled_auc = None
        points: list[tuple[float, float]] = []
        notes.append("pooled labels are single-class, pooled AUC undefined")
    else:
        pooled_auc = roc_auc(pooled_scores, pooled_labels)
        points = roc_curve(pooled_scores, pooled_labels)

    return EvalReport(
        pooled_auc=pooled_auc,
        per_video_auc=per_video,
        per_video_mean_auc=mean_auc,
        n_positive=n_pos,
        n_negative=n_neg,
        n_videos=len(vids),
        pooling=pooling,
        normalize_mode=normalize_mode,
        roc_points=points,
        timing={"evaluate_seconds": time.perf_counter() - t0},
        notes=notes,
    )


def write_report(report: EvalReport, path: str | Path) -> None:
    """Serialize an EvalReport to JSON (atomic write)."""
    payload = {
        "pooled_auc": report.pooled_auc,
        "per_video_auc": report.per_video_auc,
        "per_video_mean_auc": report.per_video_mean_auc,
        "n_positive": report.n_positive,
        "n_negative": report.n_negative,
        "n_videos": report.n_videos,
        "pooling": report.pooling,
        "normalize_mode": report.normalize_mode,
        "roc_points": [[fpr, tpr] for fpr, tpr in report.roc_points],
        "timing": report.timing,
        "notes": report.notes,
    }
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def read_report(path: str | Path) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return EvalReport(
        pooled_auc=d["pooled_auc"],
        per_video_auc=d["per_video_auc"],
        per_video_mean_auc=d["per_video_mean_auc"],
        n_positive=d["n_positive"],
        n_negative=d["n_negative"],
        n_videos=d["n_videos"],
        pooling=d["pooling"],
        normalize_mode=d["normalize_mode"],
        roc_points=[(p[0], p[1]) for p in d["roc_points"]],
        timing=d["timing"],
        notes=d["notes"],
    )

"""From trained generator to per-frame anomaly scores.

Pipeline per video: every triplet gets a region score (its reconstruction
loss), each frame takes the max over its regions (default 0.0 when a frame
has none), the series is Gaussian-smoothed over time, then min-max
normalized per video.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .errors import ConfigError
from .metrics import SsimConfig
from .model import Generator
from .triplet import AppearanceTriplet

__all__ = [
    "RegionScore",
    "FrameScoreSeries",
    "SmoothConfig",
    "VideoScores",
    "region_score",
    "region_scores",
    "aggregate_frame",
    "frame_series",
    "gaussian_kernel",
    "gaussian_smooth",
    "normalize",
    "score_video",
    "write_score_csv",
    "read_score_csv",
]

STAGES = ("raw", "smoothed", "normalized")


@dataclass(frozen=True)
class RegionScore:
    """Reconstruction loss of one object at one frame; in [0, 1]."""

    video_id: str
    frame_index_t: int
    detection_ref: int
    score: float


@dataclass(frozen=True)
class FrameScoreSeries:
    video_id: str
    scores: np.ndarray  # one float per frame, 0..N-1
    stage: str = "raw"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"unknown score stage {self.stage!r}")
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))


@dataclass(frozen=True)
class SmoothConfig:
    sigma_frames: float = 2.0
    truncation_radius: int | None = None  # default: ceil(4 * sigma)

    def validate(self) -> None:
        if self.sigma_frames < 0:
            raise ConfigError(f"sigma_frames must be >= 0, got {self.sigma_frames}")
        if self.truncation_radius is not None and self.truncation_radius < 1:
            raise ConfigError(f"truncation_radius must be >= 1, got {self.truncation_radius}")

    @property
    def radius(self) -> int:
        if self.truncation_radius is not None:
            return self.truncation_radius
        return max(1, math.ceil(4.0 * self.sigma_frames))


@dataclass(frozen=True)
class VideoScores:
    """All scoring stages of one video, plus the underlying region scores."""

    video_id: str
    region: list[RegionScore]
    raw: FrameScoreSeries
    smoothed: FrameScoreSeries
    normalized: FrameScoreSeries


def region_score(
    g: Generator,
    triplet: AppearanceTriplet,
    ssim_cfg: SsimConfig = SsimConfig(),
) -> RegionScore:
    """Score one region: loss_g(next, G(past, current))."""
    return region_scores(g, [triplet], ssim_cfg)[0]


def region_scores(
    g: Generator,
    triplets: list[AppearanceTriplet],
    ssim_cfg: SsimConfig = SsimConfig(),
    batch_size: int = 64,
) -> list[RegionScore]:
    """Batched scoring of many triplets; order preserved."""
    out: list[RegionScore] = []
    with torch.no_grad():
        for lo in range(0, len(triplets), batch_size):
            chunk = triplets[lo : lo + batch_size]
            past = torch.from_numpy(np.stack([t.past for t in chunk])).unsqueeze(1)
            current = torch.from_numpy(np.stack([t.current for t in chunk])).unsqueeze(1)
            next_ = torch.from_numpy(np.stack([t.next for t in chunk])).unsqueeze(1)
            pred = g(past.float(), current.float())
            losses = metrics.loss_g_batched(next_.float(), pred, ssim_cfg)
            for t, v in zip(chunk, losses):
                out.append(RegionScore(t.video_id, t.frame_index_t, t.detection_ref, float(v)))
    return out


def aggregate_frame(scores: list, default_score: float = 0.0) -> float:
    """Max region score of a frame; empty input maps to default_score."""
    values = [s.score if isinstance(s, RegionScore) else float(s) for s in scores]
    return max(values) if values else default_score


def frame_series(
    video_id: str,
    n_frames: int,
    region: list[RegionScore],
    default_score: float = 0.0,
) -> FrameScoreSeries:
    """Assemble the raw per-frame series from region scores."""
    per_frame: dict[int, list[RegionScore]] = {}
    for r in region:
        if r.video_id != video_id:
            raise ConfigError(f"region score for {r.video_id!r} mixed into {video_id!r}")
        if not 0 <= r.frame_index_t < n_frames:
            raise ConfigError(f"region score at frame {r.frame_index_t} outside 0..{n_frames - 1}")
        per_frame.setdefault(r.frame_index_t, []).append(r)
    scores = np.array(
        [aggregate_frame(per_frame.get(t, []), default_score) for t in range(n_frames)],
        dtype=np.float64,
    )
    return FrameScoreSeries(video_id, scores, "raw")


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """Discretized Gaussian tap weights on [-radius, radius], summing to ~1."""
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def gaussian_smooth(series: FrameScoreSeries, cfg: SmoothConfig = SmoothConfig()) -> FrameScoreSeries:
    """Temporal Gaussian filter with reflect padding; sigma 0 is the identity.

    Computed in the centered form s[t] + sum_k w_k (s[t+k] - s[t]), which is
    algebraically the plain convolution but keeps a constant series exactly
    constant regardless of the kernel's floating-point weight sum.
    """
    cfg.validate()
    if series.stage != "raw":
        raise ConfigError(f"gaussian_smooth expects a raw series, got {series.stage!r}")
    s = series.scores
    if cfg.sigma_frames == 0 or len(s) == 1:
        return replace(series, stage="smoothed")
    radius = cfg.radius
    kernel = gaussian_kernel(cfg.sigma_frames, radius)
    padded = np.pad(s, radius, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * radius + 1)
    out = s + (windows - s[:, None]) @ kernel
    return FrameScoreSeries(series.video_id, out, "smoothed")


def normalize(series: FrameScoreSeries) -> FrameScoreSeries:
    """Min-max to [0, 1] per video; a constant series maps to all zeros."""
    if series.stage == "normalized":
        raise ConfigError("series is already normalized")
    s = series.scores
    lo, hi = float(s.min()), float(s.max())
    out = np.zeros_like(s) if hi == lo else (s - lo) / (hi - lo)
    return FrameScoreSeries(series.video_id, out, "normalized")


def score_video(
    g: Generator,
    video_id: str,
    n_frames: int,
    triplets: list[AppearanceTriplet],
    ssim_cfg: SsimConfig = SsimConfig(),
    smooth_cfg: SmoothConfig = SmoothConfig(),
    default_score: float = 0.0,
    batch_size: int = 64,
) -> VideoScores:
    """Run the full raw -> smoothed -> normalized pipeline for one video."""
    region = region_scores(g, triplets, ssim_cfg, batch_size=batch_size)
    raw = frame_series(video_id, n_frames, region, default_score)
    smoothed = gaussian_smooth(raw, smooth_cfg)
    return VideoScores(video_id, region, raw, smoothed, normalize(smoothed))


def write_score_csv(scores: VideoScores, path: str | Path) -> None:
    """Per-video CSV: frame_index,raw,smoothed,normalized (atomic write)."""
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("frame_index,raw,smoothed,normalized\n")
        for i, (r, sm, nm) in enumerate(
            zip(scores.raw.scores, scores.smoothed.scores, scores.normalized.scores)
        ):
            fh.write(f"{i},{float(r)!r},{float(sm)!r},{float(nm)!r}\n")
    os.replace(tmp, path)


def read_score_csv(path: str | Path, video_id: str | None = None) -> dict[str, FrameScoreSeries]:
    """Read back a score CSV into its three stages."""
    p = Path(path)
    vid = video_id or p.stem
    rows = p.read_text(encoding="utf-8").strip().splitlines()
    if not rows or rows[0] != "frame_index,raw,smoothed,normalized":
        raise ConfigError(f"{p}: not a score CSV (bad header)")
    cols = ([], [], [])
    for lineno, line in enumerate(rows[1:], start=2):
        parts = line.split(",")
        if len(parts) != 4:
            raise ConfigError(f"{p}: malformed line {lineno}")
        if int(parts[0]) != lineno - 2:
            raise ConfigError(f"{p}: frame index gap at line {lineno}")
        for c, v in zip(cols, parts[1:]):
            c.append(float(v))
    return {
        stage: FrameScoreSeries(vid, np.array(col, dtype=np.float64), stage)
        for stage, col in zip(STAGES, cols)
    }

"""Sliding appearance triplets: the unit of training and scoring.

For every detection at frame t (with a full frame gap on both sides), the
frame-t box is used to crop frames t-T, t, and t+T.  There is no tracking
on purpose: the model predicts how the *same image region* will look, so a
fast-moving object simply leaves its own box, which is exactly the signal
the scorer exploits.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyCropError, ConfigError
from .ingest import DetectionSet, Frame, VideoClip

__all__ = [
    "TripletConfig",
    "AppearanceTriplet",
    "crop_resize",
    "build_triplets",
    "write_triplet_cache",
    "read_triplet_cache",
]

log = logging.getLogger(__name__)

_CACHE_MAGIC = b"NLAPTRIP"
_CACHE_VERSION = 1


@dataclass(frozen=True)
class TripletConfig:
    frame_gap_T: int = 3
    patch_size_S: int = 64
    min_box_side: int = 8

    def validate(self) -> None:
        if self.frame_gap_T < 1:
            raise ConfigError(f"frame_gap_T must be >= 1, got {self.frame_gap_T}")
        s = self.patch_size_S
        if s < 16 or (s & (s - 1)) != 0:
            raise ConfigError(f"patch_size_S must be a power of two >= 16, got {s}")
        if self.min_box_side < 1:
            raise ConfigError(f"min_box_side must be >= 1, got {self.min_box_side}")


@dataclass(frozen=True)
class AppearanceTriplet:
    """Three S x S gray patches of one object, cut with the frame-t box."""

    past: np.ndarray
    current: np.ndarray
    next: np.ndarray
    video_id: str
    frame_index_t: int
    detection_ref: int  # index into the originating DetectionSet.detections


def crop_resize(frame: Frame | np.ndarray, bbox: tuple[float, float, float, float], s: int) -> np.ndarray:
    """Clamp bbox to the frame, crop, and bilinearly resample to S x S.

    Coordinates are pixel edges with origin top-left, so bbox (0, 0, W, H)
    is the full frame.  Sampling uses half-pixel centers and is anisotropic
    (no aspect-preserving padding).  Raises EmptyCropError when the clamped
    box has a side below one pixel.
    """
    pixels = frame.pixels if isinstance(frame, Frame) else frame
    h, w = pixels.shape
    x1, y1, x2, y2 = bbox
    x1c, x2c = max(0.0, float(x1)), min(float(w), float(x2))
    y1c, y2c = max(0.0, float(y1)), min(float(h), float(y2))
    if x2c - x1c < 1.0 or y2c - y1c < 1.0:
        raise EmptyCropError(f"empty crop: bbox {bbox} clamps to less than 1px in a {w}x{h} frame")

    dtype = pixels.dtype if pixels.dtype in (np.float32, np.float64) else np.float32
    pix = pixels.astype(dtype, copy=False)

    def axis_samples(lo: float, hi: float, size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        # Half-pixel centers of the S output cells, mapped into source
        # pixel-center coordinates and clamped to the frame interior.
        edges = lo + (np.arange(s, dtype=np.float64) + 0.5) * ((hi - lo) / s)
        centers = np.clip(edges - 0.5, 0.0, size - 1.0)
        i0 = np.floor(centers).astype(np.int64)
        i0 = np.minimum(i0, size - 1)
        i1 = np.minimum(i0 + 1, size - 1)
        frac = (centers - i0).astype(dtype)
        return i0, i1, frac

    cx0, cx1, fx = axis_samples(x1c, x2c, w)
    cy0, cy1, fy = axis_samples(y1c, y2c, h)

    top = pix[cy0][:, cx0] * (1 - fx) + pix[cy0][:, cx1] * fx
    bot = pix[cy1][:, cx0] * (1 - fx) + pix[cy1][:, cx1] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return np.clip(out, 0.0, 1.0)


def build_triplets(clip: VideoClip, dets: DetectionSet, cfg: TripletConfig) -> list[AppearanceTriplet]:
    """One triplet per detection with both temporal neighbors in range.

    Detections are skipped (and counted in a log line) when t-T or t+T
    falls outside the clip, a raw box side is below cfg.min_box_side, or
    the box clamps to an empty crop.  Output preserves the detection-set
    order (the loader already sorts by frame).
    """
    cfg.validate()
    if dets.video_id != clip.id:
        raise ConfigError(f"clip {clip.id!r} and detections {dets.video_id!r} disagree on video id")
    t_gap, s = cfg.frame_gap_T, cfg.patch_size_S
    n = len(clip)
    out: list[AppearanceTriplet] = []
    skipped_range = skipped_small = skipped_empty = 0
    for ref, det in enumerate(dets.detections):
        t = det.frame_index
        if t - t_gap < 0 or t + t_gap > n - 1:
            skipped_range += 1
            continue
        x1, y1, x2, y2 = det.bbox
        if x2 - x1 < cfg.min_box_side or y2 - y1 < cfg.min_box_side:
            skipped_small += 1
            continue
        try:
            patches = [
                crop_resize(clip.frames[t - t_gap], det.bbox, s),
                crop_resize(clip.frames[t], det.bbox, s),
                crop_resize(clip.frames[t + t_gap], det.bbox, s),
            ]
        except EmptyCropError:
            skipped_empty += 1
            continue
        out.append(
            AppearanceTriplet(
                past=patches[0],
                current=patches[1],
                next=patches[2],
                video_id=clip.id,
                frame_index_t=t,
                detection_ref=ref,
            )
        )
    skipped = skipped_range + skipped_small + skipped_empty
    if skipped:
        log.info(
            "%s: skipped %d of %d detections (%d out of temporal range, %d below min side, %d empty crop)",
            clip.id, skipped, len(dets.detections), skipped_range, skipped_small, skipped_empty,
        )
    return out


def write_triplet_cache(triplets: list[AppearanceTriplet], path: str | Path, s: int) -> None:
    """Binary cache: 16-byte magic/version header, then one record per triplet."""
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC + struct.pack("<II", _CACHE_VERSION, s))
        for t in triplets:
            vid = t.video_id.encode("utf-8")
            fh.write(struct.pack("<HII", len(vid), t.frame_index_t, t.detection_ref))
            fh.write(vid)
            for patch in (t.past, t.current, t.next):
                fh.write(np.ascontiguousarray(patch, dtype="<f4").tobytes())


def read_triplet_cache(path: str | Path) -> list[AppearanceTriplet]:
    """Read back a cache written by write_triplet_cache (bit-exact patches)."""
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:8] != _CACHE_MAGIC:
            raise ConfigError(f"{path}: not a triplet cache (bad magic)")
        version, s = struct.unpack("<II", head[8:])
        if version != _CACHE_VERSION:
            raise ConfigError(f"{path}: unsupported triplet cache version {version}")
        patch_bytes = s * s * 4
        out: list[AppearanceTriplet] = []
        while True:
            rec = fh.read(10)
            if not rec:
                return out
            if len(rec) != 10:
                raise ConfigError(f"{path}: truncated record header")
            vid_len, t_idx, det_ref = struct.unpack("<HII", rec)
            vid = fh.read(vid_len).decode("utf-8")
            patches = []
            for _ in range(3):
                raw = fh.read(patch_bytes)
                if len(raw) != patch_bytes:
                    raise ConfigError(f"{path}: truncated patch data")
                patches.append(np.frombuffer(raw, dtype="<f4").reshape(s, s).copy())
            out.append(AppearanceTriplet(patches[0], patches[1], patches[2], vid, t_idx, det_ref))

"""Load frame directories and detection files into canonical in-memory forms.

Frames arrive as `frame_%06d.png` sequences (8-bit gray or RGB); detections
arrive as JSON Lines produced by an external detector.  Everything here is
strict: gaps, dimension drift, or malformed records abort with an error
naming the offending file or line, because silently patched inputs would
poison every stage downstream.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import IngestError

__all__ = [
    "Frame",
    "VideoClip",
    "Detection",
    "DetectionSet",
    "load_video",
    "load_detections",
    "save_detections",
    "to_gray",
]

_FRAME_RE = re.compile(r"^frame_(\d{6})\.png$")

# BT.601 luma; fixed so gray conversion is bit-reproducible.
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass(frozen=True)
class Frame:
    """One gray-scale frame; pixel intensities in [0, 1]."""

    index: int
    pixels: np.ndarray  # H x W float32

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class VideoClip:
    id: str
    frames: list[Frame]

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.frames[0].shape


@dataclass(frozen=True)
class Detection:
    frame_index: int
    bbox: tuple[float, float, float, float]  # x1, y1, x2, y2 pixel coords
    confidence: float
    class_id: int


@dataclass(frozen=True)
class DetectionSet:
    """Detections of one video, stably ordered by (frame_index, file order)."""

    video_id: str
    detections: list[Detection] = field(default_factory=list)

    def by_frame(self) -> dict[int, list[tuple[int, Detection]]]:
        """Map frame index -> [(index into .detections, detection), ...]."""
        out: dict[int, list[tuple[int, Detection]]] = {}
        for i, det in enumerate(self.detections):
            out.setdefault(det.frame_index, []).append((i, det))
        return out


def to_gray(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma of an H x W x 3 array in [0, 1]; idempotent on 2-D input."""
    if rgb.ndim == 2:
        return rgb.astype(np.float32, copy=False)
    return rgb.astype(np.float32, copy=False) @ _LUMA


def _decode_frame(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in ("L", "I;16", "I"):
                arr = np.asarray(img.convert("L"), dtype=np.float32)
                return arr / np.float32(255.0)
            arr = np.asarray(img.convert("RGB"), dtype=np.float32) / np.float32(255.0)
            return to_gray(arr)
    except IngestError:
        raise
    except Exception as exc:
        raise IngestError(f"undecodable image {path}: {exc}") from exc


def load_video(video_dir: str | Path, video_id: str | None = None) -> VideoClip:
    """Read a gapless `frame_%06d.png` sequence starting at 000000.

    Raises IngestError naming the offending file for a missing directory,
    numbering gap, undecodable image, or dimension mismatch.
    """
    d = Path(video_dir)
    if not d.is_dir():
        raise IngestError(f"missing video directory {d}")
    indices: dict[int, Path] = {}
    for p in d.iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            indices[int(m.group(1))] = p
    if not indices:
        raise IngestError(f"no frame_%06d.png files in {d}")
    count = max(indices) + 1
    for i in range(count):
        if i not in indices:
            raise IngestError(f"gap at index {i} in {d} (missing frame_{i:06d}.png)")

    frames: list[Frame] = []
    shape: tuple[int, int] | None = None
    for i in range(count):
        pixels = _decode_frame(indices[i])
        if pixels.shape[0] < 16 or pixels.shape[1] < 16:
            raise IngestError(f"frame {indices[i]} smaller than 16x16: {pixels.shape}")
        if shape is None:
            shape = pixels.shape
        elif pixels.shape != shape:
            raise IngestError(
                f"inconsistent dimensions in {indices[i]}: {pixels.shape} vs {shape}"
            )
        frames.append(Frame(index=i, pixels=pixels))
    return VideoClip(id=video_id or d.name, frames=frames)


def load_detections(
    path: str | Path,
    video_id: str | None = None,
    conf_threshold: float = 0.5,
) -> DetectionSet:
    """Parse a JSONL detection file, dropping records below conf_threshold.

    Each line: {"frame": int, "bbox": [x1,y1,x2,y2], "conf": float, "class": int}.
    Degenerate boxes (x1 >= x2 or y1 >= y2) and malformed lines raise
    IngestError with the line number.
    """
    p = Path(path)
    if not p.is_file():
        raise IngestError(f"missing detections file {p}")
    dets: list[Detection] = []
    with open(p, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                frame = int(rec["frame"])
                x1, y1, x2, y2 = (float(v) for v in rec["bbox"])
                conf = float(rec["conf"])
                class_id = int(rec["class"])
            except (KeyError, TypeError, ValueError) as exc:
                raise IngestError(f"malformed detection line {lineno} in {p}: {exc}") from exc
            if x1 >= x2 or y1 >= y2:
                raise IngestError(f"degenerate bbox, line {lineno} in {p}: {[x1, y1, x2, y2]}")
            if frame < 0:
                raise IngestError(f"negative frame index, line {lineno} in {p}")
            if conf < conf_threshold:
                continue
            dets.append(Detection(frame, (x1, y1, x2, y2), conf, class_id))
    dets.sort(key=lambda det: det.frame_index)  # stable: keeps file order per frame
    return DetectionSet(video_id=video_id or p.stem, detections=dets)


def save_detections(dets: DetectionSet, path: str | Path) -> None:
    """Write the JSONL form; load_detections(save_detections(x)) == x."""
    with open(path, "w", encoding="utf-8") as fh:
        for det in dets.detections:
            rec = {
                "frame": det.frame_index,
                "bbox": list(det.bbox),
                "conf": det.confidence,
                "class": det.class_id,
            }
            fh.write(json.dumps(rec) + "\n")

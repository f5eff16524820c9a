"""Deterministic synthetic benchmark: moving sprites over textured background.

Each video is driven entirely by one integer seed. Sprites (squares and
discs) carry a rigid per-sprite texture, drift with constant velocity, and
reflect off the canvas edges; test videos inject per-sprite anomalies
(speedup, shape morph, direction jitter) over an inclusive frame interval.
Both the sprites and the background need structure at the scale of the
similarity windows: on locally flat surfaces the structural term of the
score saturates and an object vanishing from its own box costs almost
nothing, so anomalies become invisible to the scorer. Videos are emitted in
the same layout the ingest module reads: numbered PNG frames, a detections
JSONL, and a labels file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError
from .ingest import Detection, DetectionSet, Frame, VideoClip, save_detections

__all__ = [
    "SceneSpec",
    "AnomalySpec",
    "SynthVideo",
    "ANOMALY_KINDS",
    "generate_normal",
    "generate_test",
    "write_synth_video",
    "derive_seed",
    "make_benchmark",
]

ANOMALY_KINDS = ("speedup", "shape_morph", "direction_jitter")
_SHAPES = ("square", "disc")
_MORPH_TARGET = {"square": "disc", "disc": "square"}
_SUBSAMPLES = 8  # per-axis subpixel samples for disc coverage
_COVERAGE_EPS = 1e-9
# Octaves (lattice cells, weight) of the background noise. Most of the power
# sits in the finest octaves: crops get upsampled ~4x before scoring and the
# scoring window's Gaussian taper (sigma 1.5) only passes wavelengths of a
# few pixels at crop scale, so canvas-scale detail coarser than ~2 px
# carries no local variance a window can latch onto.
_BG_OCTAVES = ((8, 0.15), (16, 0.15), (32, 0.2), (64, 0.25), (128, 0.25))
# Sprite texture spans [_TEX_LO, _TEX_LO + _TEX_SPAN]; the floor stays above
# the 0.5 background ceiling so sprites remain strictly brighter than bg.
_TEX_LO = 0.65
_TEX_SPAN = 0.3


@dataclass(frozen=True)
class SceneSpec:
    """Static description of the scene every video of a benchmark shares."""

    canvas_h: int = 128
    canvas_w: int = 128
    sprite_count: int = 3
    sprite_shapes: tuple[str, ...] = ("square", "disc")
    sprite_side: int = 16
    normal_speed_range: tuple[float, float] = (1.0, 2.0)
    background_texture_seed: int = 7
    frames_per_video: int = 300
    sensor_noise_sigma: float = 0.01

    def validate(self) -> None:
        if self.canvas_h < 32 or self.canvas_w < 32:
            raise ConfigError(f"canvas must be at least 32x32, got {self.canvas_h}x{self.canvas_w}")
        if self.sprite_count < 1:
            raise ConfigError(f"sprite_count must be >= 1, got {self.sprite_count}")
        if not self.sprite_shapes:
            raise ConfigError("sprite_shapes must be non-empty")
        for s in self.sprite_shapes:
            if s not in _SHAPES:
                raise ConfigError(f"unknown sprite shape {s!r}, expected one of {_SHAPES}")
        if not 4 <= self.sprite_side <= min(self.canvas_h, self.canvas_w) // 2:
            raise ConfigError(f"sprite_side {self.sprite_side} does not fit the canvas")
        vmin, vmax = self.normal_speed_range
        if not 0 < vmin <= vmax:
            raise ConfigError(f"normal_speed_range must satisfy 0 < vmin <= vmax, got {self.normal_speed_range}")
        if self.frames_per_video < 1:
            raise ConfigError(f"frames_per_video must be >= 1, got {self.frames_per_video}")
        if self.sensor_noise_sigma < 0:
            raise ConfigError(f"sensor_noise_sigma must be >= 0, got {self.sensor_noise_sigma}")

    def shape_of(self, sprite_index: int) -> str:
        return self.sprite_shapes[sprite_index % len(self.sprite_shapes)]


@dataclass(frozen=True)
class AnomalySpec:
    """One sprite behaving abnormally over an inclusive frame interval.

    Magnitude meaning depends on kind: speedup multiplies speed (>= 3),
    shape_morph blends toward the other shape (0 < m <= 1), direction_jitter
    perturbs the heading each frame by N(0, sigma) with sigma in degrees.
    """

    kind: str
    magnitude: float
    t_start: int
    t_end: int
    sprite_index: int = 0

    def validate(self, spec: SceneSpec) -> None:
        if self.kind not in ANOMALY_KINDS:
            raise ConfigError(f"unknown anomaly kind {self.kind!r}, expected one of {ANOMALY_KINDS}")
        if not 0 <= self.sprite_index < spec.sprite_count:
            raise ConfigError(f"sprite_index {self.sprite_index} outside 0..{spec.sprite_count - 1}")
        if not 0 <= self.t_start <= self.t_end <= spec.frames_per_video - 1:
            raise ConfigError(
                f"anomaly interval [{self.t_start}, {self.t_end}] outside video of "
                f"{spec.frames_per_video} frames"
            )
        if self.kind == "speedup" and self.magnitude < 3:
            raise ConfigError(f"speedup magnitude must be >= 3, got {self.magnitude}")
        if self.kind == "shape_morph" and not 0 < self.magnitude <= 1:
            raise ConfigError(f"shape_morph magnitude must be in (0, 1], got {self.magnitude}")
        if self.kind == "direction_jitter" and self.magnitude <= 0:
            raise ConfigError(f"direction_jitter magnitude must be > 0, got {self.magnitude}")

    def covers(self, t: int) -> bool:
        return self.t_start <= t <= self.t_end


@dataclass(frozen=True)
class SynthVideo:
    """A generated video with its detections, labels, and sprite trajectory."""

    clip: VideoClip
    detections: DetectionSet
    labels: np.ndarray  # one 0/1 per frame
    positions: np.ndarray  # (frames, sprites, 2) float sprite centers (x, y)


def _value_noise(h: int, w: int, cells: int, rng: np.random.Generator) -> np.ndarray:
    """Bilinear interpolation of a random lattice; smooth blotchy texture."""
    lattice = rng.random((cells + 1, cells + 1))
    gy = (np.arange(h) + 0.5) / h * cells
    gx = (np.arange(w) + 0.5) / w * cells
    y0 = np.minimum(gy.astype(np.int64), cells - 1)
    x0 = np.minimum(gx.astype(np.int64), cells - 1)
    fy = (gy - y0)[:, None]
    fx = (gx - x0)[None, :]
    tl = lattice[np.ix_(y0, x0)]
    tr = lattice[np.ix_(y0, x0 + 1)]
    bl = lattice[np.ix_(y0 + 1, x0)]
    br = lattice[np.ix_(y0 + 1, x0 + 1)]
    return tl * (1 - fy) * (1 - fx) + tr * (1 - fy) * fx + bl * fy * (1 - fx) + br * fy * fx


def _background(spec: SceneSpec) -> np.ndarray:
    """Low-contrast texture in [0.3, 0.5], fixed per texture seed."""
    rng = np.random.Generator(np.random.PCG64(spec.background_texture_seed))
    h, w = spec.canvas_h, spec.canvas_w
    n = np.zeros((h, w))
    for cells, weight in _BG_OCTAVES:
        n += weight * _value_noise(h, w, cells, rng)
    n = (n - n.min()) / (n.max() - n.min())
    return 0.3 + 0.2 * n


def _sprite_texture_values(lattice: np.ndarray, px: float, py: float, side: int,
                           x0: int, x1: int, y0: int, y1: int) -> np.ndarray:
    """Bilinear sample of a sprite's texture lattice over a canvas window.

    Sampling happens in sprite-local coordinates, so the pattern translates
    rigidly with the sprite: the same surface detail appears under every
    subpixel offset, which is what makes the next appearance predictable.
    """
    cells = lattice.shape[0] - 1
    u = np.clip((np.arange(x0, x1) + 0.5 - px) / side * cells, 0.0, cells)
    v = np.clip((np.arange(y0, y1) + 0.5 - py) / side * cells, 0.0, cells)
    u0 = np.minimum(u.astype(np.int64), cells - 1)
    v0 = np.minimum(v.astype(np.int64), cells - 1)
    fu = (u - u0)[None, :]
    fv = (v - v0)[:, None]
    tl = lattice[np.ix_(v0, u0)]
    tr = lattice[np.ix_(v0, u0 + 1)]
    bl = lattice[np.ix_(v0 + 1, u0)]
    br = lattice[np.ix_(v0 + 1, u0 + 1)]
    n = tl * (1 - fv) * (1 - fu) + tr * (1 - fv) * fu + bl * fv * (1 - fu) + br * fv * fu
    return _TEX_LO + _TEX_SPAN * n


def _square_coverage(px: float, py: float, side: int, x0: int, x1: int, y0: int, y1: int) -> np.ndarray:
    """Exact per-pixel area overlap of an axis-aligned square."""
    cols = np.arange(x0, x1, dtype=np.float64)
    rows = np.arange(y0, y1, dtype=np.float64)
    ox = np.clip(np.minimum(px + side, cols + 1) - np.maximum(px, cols), 0.0, 1.0)
    oy = np.clip(np.minimum(py + side, rows + 1) - np.maximum(py, rows), 0.0, 1.0)
    return np.outer(oy, ox)


def _disc_coverage(px: float, py: float, side: int, x0: int, x1: int, y0: int, y1: int) -> np.ndarray:
    """Per-pixel coverage of the inscribed disc via subpixel sampling."""
    r = side / 2.0
    cx, cy = px + r, py + r
    m = _SUBSAMPLES
    xs = x0 + (np.arange((x1 - x0) * m) + 0.5) / m - cx
    ys = y0 + (np.arange((y1 - y0) * m) + 0.5) / m - cy
    inside = (ys[:, None] ** 2 + xs[None, :] ** 2) <= r * r
    return inside.reshape(y1 - y0, m, x1 - x0, m).mean(axis=(1, 3))


def _coverage(shape: str, morph: float, px: float, py: float, side: int,
              x0: int, x1: int, y0: int, y1: int) -> np.ndarray:
    fns = {"square": _square_coverage, "disc": _disc_coverage}
    cov = fns[shape](px, py, side, x0, x1, y0, y1)
    if morph > 0:
        other = fns[_MORPH_TARGET[shape]](px, py, side, x0, x1, y0, y1)
        cov = (1.0 - morph) * cov + morph * other
    return cov


def _reflect(p: float, limit: float) -> tuple[float, float]:
    """Fold a coordinate back into [0, limit]; sign is -1 per odd bounce count."""
    sign = 1.0
    while p < 0 or p > limit:
        p = -p if p < 0 else 2 * limit - p
        sign = -sign
    return p, sign


def generate_test(
    spec: SceneSpec,
    anomalies: list[AnomalySpec],
    seed: int,
    video_id: str = "video",
) -> SynthVideo:
    """Simulate one video; an empty anomaly list yields a normal video."""
    spec.validate()
    for a in anomalies:
        a.validate(spec)
    by_sprite: dict[int, list[AnomalySpec]] = {}
    for a in anomalies:
        by_sprite.setdefault(a.sprite_index, []).append(a)
    for idx, group in by_sprite.items():
        spans = sorted((a.t_start, a.t_end) for a in group)
        for (s0, e0), (s1, _) in zip(spans, spans[1:]):
            if s1 <= e0:
                raise ConfigError(f"overlapping anomaly intervals for sprite {idx}")

    h, w, side = spec.canvas_h, spec.canvas_w, spec.sprite_side
    n_frames = spec.frames_per_video
    bg = _background(spec)
    rng = np.random.Generator(np.random.PCG64(seed))

    pos = np.empty((spec.sprite_count, 2))  # top-left (x, y), float
    vel = np.empty((spec.sprite_count, 2))
    # 1 px per texture cell: after the ~4x crop upsample this lands squarely
    # in the scoring window's variance passband. Subpixel sprite positions
    # soften the rendered pattern a little at half-pixel phase, which the
    # predictor can absorb because phase follows from the velocity it sees.
    # Binary speckle instead of graded noise maximizes window variance for
    # the same value range, keeping the structural term clear of its
    # stabilizing constant.
    tex_cells = max(2, side)
    lattices: list[np.ndarray] = []
    for i in range(spec.sprite_count):
        lattices.append((rng.random((tex_cells + 1, tex_cells + 1)) < 0.5).astype(np.float64))
        pos[i] = (rng.uniform(0, w - side), rng.uniform(0, h - side))
        angle = rng.uniform(0, 2 * math.pi)
        speed = rng.uniform(*spec.normal_speed_range)
        vel[i] = (speed * math.cos(angle), speed * math.sin(angle))

    frames: list[Frame] = []
    detections: list[Detection] = []
    labels = np.zeros(n_frames, dtype=np.int64)
    centers = np.empty((n_frames, spec.sprite_count, 2))

    for t in range(n_frames):
        canvas = bg.copy()
        for i in range(spec.sprite_count):
            px, py = pos[i]
            active = next((a for a in by_sprite.get(i, ()) if a.covers(t)), None)
            morph = active.magnitude if active is not None and active.kind == "shape_morph" else 0.0
            x0, x1 = int(math.floor(px)), min(int(math.ceil(px + side)), w)
            y0, y1 = int(math.floor(py)), min(int(math.ceil(py + side)), h)
            x0, y0 = max(x0, 0), max(y0, 0)
            cov = _coverage(spec.shape_of(i), morph, px, py, side, x0, x1, y0, y1)
            tex = _sprite_texture_values(lattices[i], px, py, side, x0, x1, y0, y1)
            canvas[y0:y1, x0:x1] = canvas[y0:y1, x0:x1] * (1 - cov) + tex * cov
            mask = cov > _COVERAGE_EPS
            rows = np.flatnonzero(mask.any(axis=1))
            cols = np.flatnonzero(mask.any(axis=0))
            detections.append(
                Detection(
                    frame_index=t,
                    bbox=(
                        float(x0 + cols[0]),
                        float(y0 + rows[0]),
                        float(x0 + cols[-1] + 1),
                        float(y0 + rows[-1] + 1),
                    ),
                    confidence=1.0,
                    class_id=_SHAPES.index(spec.shape_of(i)),
                )
            )
            centers[t, i] = (px + side / 2.0, py + side / 2.0)
        if any(a.covers(t) for a in anomalies):
            labels[t] = 1

        if spec.sensor_noise_sigma > 0:
            canvas = canvas + rng.normal(0.0, spec.sensor_noise_sigma, (h, w))
        quantized = np.round(np.clip(canvas, 0.0, 1.0) * 255.0).astype(np.uint8)
        frames.append(Frame(index=t, pixels=(quantized.astype(np.float32) / 255.0)))

        # advance: the step leaving frame t is anomalous iff t is in an interval
        for i in range(spec.sprite_count):
            active = next((a for a in by_sprite.get(i, ()) if a.covers(t)), None)
            if active is not None and active.kind == "direction_jitter":
                theta = rng.normal(0.0, math.radians(active.magnitude))
                c, s = math.cos(theta), math.sin(theta)
                vel[i] = (c * vel[i, 0] - s * vel[i, 1], s * vel[i, 0] + c * vel[i, 1])
            mult = active.magnitude if active is not None and active.kind == "speedup" else 1.0
            nx, sx = _reflect(pos[i, 0] + mult * vel[i, 0], w - side)
            ny, sy = _reflect(pos[i, 1] + mult * vel[i, 1], h - side)
            pos[i] = (nx, ny)
            vel[i, 0] *= sx
            vel[i, 1] *= sy

    clip = VideoClip(id=video_id, frames=frames)
    dets = DetectionSet(video_id=video_id, detections=detections)
    return SynthVideo(clip=clip, detections=dets, labels=labels, positions=centers)


def generate_normal(spec: SceneSpec, seed: int, video_id: str = "video") -> SynthVideo:
    """A video with no anomalies; identical to generate_test(spec, [], seed)."""
    return generate_test(spec, [], seed, video_id)


def write_synth_video(video: SynthVideo, out_dir: str | Path) -> None:
    """Write frames, detections, and labels in the ingest layout."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for f in video.clip.frames:
        img = Image.fromarray(np.round(f.pixels * 255.0).astype(np.uint8), mode="L")
        img.save(out / f"frame_{f.index:06d}.png")
    save_detections(video.detections, out / "detections.jsonl")
    labels_path = out / f"{video.clip.id}.labels"
    tmp = Path(str(labels_path) + ".tmp")
    tmp.write_text("".join(f"{int(v)}\n" for v in video.labels), encoding="utf-8")
    tmp.replace(labels_path)


def derive_seed(master: int, *branch: int) -> int:
    """Stable 64-bit child seed for a branch of a master seed."""
    ss = np.random.SeedSequence([master, *branch])
    return int(ss.generate_state(1, np.uint64)[0])


def make_benchmark(
    spec: SceneSpec,
    n_train: int,
    n_test: int,
    anomaly_kind: str,
    anomaly_magnitude: float,
    anomaly_length: int,
    master_seed: int,
    interval_margin: int = 20,
) -> tuple[list[SynthVideo], list[SynthVideo]]:
    """Generate a train split of normal videos and a test split with one
    anomaly per video, all derived deterministically from one master seed.

    Test video i's anomalous sprite is i modulo the sprite count; the
    interval start is drawn uniformly inside the margins.
    """
    spec.validate()
    lo = interval_margin
    hi = spec.frames_per_video - anomaly_length - interval_margin
    if anomaly_length < 1 or hi < lo:
        raise ConfigError(
            f"anomaly length {anomaly_length} with margin {interval_margin} does not fit "
            f"{spec.frames_per_video} frames"
        )
    train = [
        generate_normal(spec, derive_seed(master_seed, 0, i), f"train_{i:03d}")
        for i in range(n_train)
    ]
    test = []
    for i in range(n_test):
        placement = np.random.Generator(np.random.PCG64(derive_seed(master_seed, 2, i)))
        start = int(placement.integers(lo, hi + 1))
        anomaly = AnomalySpec(
            kind=anomaly_kind,
            magnitude=anomaly_magnitude,
            t_start=start,
            t_end=start + anomaly_length - 1,
            sprite_index=i % spec.sprite_count,
        )
        test.append(generate_test(spec, [anomaly], derive_seed(master_seed, 1, i), f"test_{i:03d}"))
    return train, test

"""JSON run configuration: strict parsing into the component dataclasses.

Every section is optional and falls back to defaults; unknown sections or
keys are rejected rather than ignored so typos cannot silently change an
experiment. A top-level seed feeds the model init, the training shuffle,
and the benchmark generator unless a section pins its own.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ConfigError
from .metrics import SsimConfig
from .model import ABLATIONS, ArchConfig
from .scorer import SmoothConfig
from .synthbench import ANOMALY_KINDS, SceneSpec
from .trainer import TrainConfig
from .triplet import TripletConfig

__all__ = ["SynthSettings", "EvalSettings", "RunConfig", "load_run_config"]


@dataclass(frozen=True)
class SynthSettings:
    """Benchmark layout: split sizes and the per-test-video anomaly."""

    train_videos: int = 10
    test_videos: int = 5
    anomaly_kind: str = "speedup"
    anomaly_magnitude: float = 4.0
    anomaly_length: int = 50
    interval_margin: int = 20

    def validate(self) -> None:
        if self.train_videos < 0 or self.test_videos < 0:
            raise ConfigError("video counts must be >= 0")
        if self.anomaly_kind not in ANOMALY_KINDS:
            raise ConfigError(f"unknown anomaly kind {self.anomaly_kind!r}")
        if self.anomaly_length < 1:
            raise ConfigError(f"anomaly_length must be >= 1, got {self.anomaly_length}")
        if self.interval_margin < 0:
            raise ConfigError(f"interval_margin must be >= 0, got {self.interval_margin}")


@dataclass(frozen=True)
class EvalSettings:
    normalize_mode: str = "per_video"
    pooling: str = "pooled"

    def validate(self) -> None:
        from .evaluator import NORMALIZE_MODES, POOLINGS

        if self.normalize_mode not in NORMALIZE_MODES:
            raise ConfigError(f"normalize_mode must be one of {NORMALIZE_MODES}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"pooling must be one of {POOLINGS}")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    triplet: TripletConfig = TripletConfig()
    arch: ArchConfig = ArchConfig()
    train: TrainConfig = TrainConfig()
    ssim: SsimConfig = SsimConfig()
    smooth: SmoothConfig = SmoothConfig()
    scene: SceneSpec = SceneSpec()
    synth: SynthSettings = SynthSettings()
    eval: EvalSettings = EvalSettings()
    conf_threshold: float = 0.5

    def validate(self) -> None:
        self.triplet.validate()
        self.arch.validate()
        self.train.validate()
        self.ssim.validate()
        self.smooth.validate()
        self.scene.validate()
        self.synth.validate()
        self.eval.validate()
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ConfigError(f"conf_threshold must be in [0, 1], got {self.conf_threshold}")
        if self.triplet.patch_size_S != self.arch.patch_size_S:
            raise ConfigError(
                f"patch size mismatch: triplet S={self.triplet.patch_size_S} "
                f"vs arch S={self.arch.patch_size_S}"
            )


_SECTIONS = {
    "triplet": TripletConfig,
    "arch": ArchConfig,
    "train": TrainConfig,
    "ssim": SsimConfig,
    "smooth": SmoothConfig,
    "scene": SceneSpec,
    "synth": SynthSettings,
    "eval": EvalSettings,
}


def _build_section(cls, data: dict, section: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} in section {section!r}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad value in section {section!r}: {e}") from e


def load_run_config(
    path: str | Path | None = None,
    seed: int | None = None,
    ablate: str | None = None,
) -> RunConfig:
    """Assemble a validated RunConfig from an optional JSON file plus
    command-line overrides (seed takes precedence over the file's)."""
    raw: dict = {}
    if path is not None:
        p = Path(path)
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read config {p}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be a JSON object")

    unknown = set(raw) - set(_SECTIONS) - {"seed", "conf_threshold"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    for name in _SECTIONS:
        if name in raw and not isinstance(raw[name], dict):
            raise ConfigError(f"section {name!r} must be a JSON object")

    file_seed = raw.get("seed", 0)
    if not isinstance(file_seed, int):
        raise ConfigError(f"seed must be an integer, got {file_seed!r}")
    run_seed = seed if seed is not None else file_seed

    sections = {name: _build_section(cls, raw.get(name, {}), name) for name, cls in _SECTIONS.items()}
    # a section's own explicit seed wins over the run seed
    if "seed" not in raw.get("arch", {}):
        sections["arch"] = replace(sections["arch"], seed=run_seed)
    if "seed" not in raw.get("train", {}):
        sections["train"] = replace(sections["train"], seed=run_seed)

    if ablate is not None:
        if ablate not in ABLATIONS:
            raise ConfigError(f"unknown ablation {ablate!r}, expected one of {ABLATIONS}")
        sections["arch"] = sections["arch"].ablate(ablate)

    cfg = RunConfig(
        seed=run_seed,
        conf_threshold=raw.get("conf_threshold", 0.5),
        **{name: sections[name] for name in _SECTIONS},
    )
    cfg.validate()
    return cfg

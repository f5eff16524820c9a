"""Alternating adversarial optimization, checkpointing, and verification.

Each training step runs two sub-steps: the critic first descends its
least-squares loss on a prediction computed with the *current* generator,
then the generator descends reconstruction + weighted adversarial loss
against the freshly updated critic.  The generator forward is shared
between the sub-steps (the critic sees it detached), which both saves a
pass and makes the "critic updates before the generator" ordering visible:
every step records a digest of the prediction it used.

Checkpoints are a versioned binary: 16-byte magic/version header, a JSON
header describing architecture, epoch, loss history, optimizer scalars,
and a tensor manifest, followed by raw little-endian tensor bytes.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import torch

from . import metrics
from .errors import CheckpointError, ConfigError, EmptyDatasetError, TrainingDivergedError
from .metrics import SsimConfig
from .model import ArchConfig, Discriminator, Generator, init_discriminator, init_generator
from .triplet import AppearanceTriplet

__all__ = [
    "TrainConfig",
    "StepLosses",
    "Checkpoint",
    "Trainer",
    "train",
    "fine_tune",
    "gradient_check",
    "save_checkpoint",
    "load_checkpoint",
    "write_loss_history_csv",
]

_CKPT_MAGIC = b"NLAPCKPT"
_CKPT_VERSION = 1

# Salt separating the fine-tune frame-selection stream from the batch
# shuffle stream, so a saturating selection leaves training untouched.
_KSHOT_SALT = 0x5E1EC7

_DTYPE_TAGS = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8"}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


@dataclass(frozen=True)
class TrainConfig:
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    adv_weight: float = 0.05
    k_shot: int | None = None

    def validate(self) -> None:
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ConfigError(f"learning rates must be > 0, got lr_g={self.lr_g} lr_d={self.lr_d}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError(f"Adam betas must lie in [0, 1), got {self.adam_beta1}, {self.adam_beta2}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.adv_weight < 0:
            raise ConfigError(f"adv_weight must be >= 0, got {self.adv_weight}")
        if self.k_shot is not None and self.k_shot < 1:
            raise ConfigError(f"k_shot must be >= 1, got {self.k_shot}")


@dataclass(frozen=True)
class StepLosses:
    """Losses of one optimization step; adversarial entries are None when disabled."""

    epoch: int
    step: int
    loss_g: float
    loss_adv_g: float | None
    loss_adv_d: float | None
    pred_digest: str  # sha256 of the generator output both sub-steps consumed

    def history_row(self) -> tuple:
        return (self.epoch, self.step, self.loss_g, self.loss_adv_g, self.loss_adv_d)


@dataclass
class Checkpoint:
    arch: ArchConfig
    generator: Generator
    discriminator: Discriminator
    optimizer_state: dict
    epoch: int
    loss_history: list[tuple]


def _stack_patches(triplets: list[AppearanceTriplet], attr: str) -> torch.Tensor:
    arrs = np.stack([getattr(t, attr) for t in triplets]).astype(np.float32, copy=False)
    return torch.from_numpy(arrs).unsqueeze(1)


def _digest(t: torch.Tensor) -> str:
    return hashlib.sha256(t.detach().contiguous().cpu().numpy().tobytes()).hexdigest()


class Trainer:
    """Owns the two networks, their optimizers, and the data-order stream."""

    def __init__(
        self,
        arch: ArchConfig,
        cfg: TrainConfig,
        ssim_cfg: SsimConfig = SsimConfig(),
        generator: Generator | None = None,
        discriminator: Discriminator | None = None,
        optimizer_state: dict | None = None,
        start_epoch: int = 0,
        history: list[tuple] | None = None,
    ):
        arch.validate()
        cfg.validate()
        ssim_cfg.validate()
        self.arch = arch
        self.cfg = cfg
        self.ssim_cfg = ssim_cfg
        self.g = generator if generator is not None else init_generator(arch)
        self.d = discriminator if discriminator is not None else init_discriminator(arch)
        betas = (cfg.adam_beta1, cfg.adam_beta2)
        self.g_opt = torch.optim.Adam(self.g.parameters(), lr=cfg.lr_g, betas=betas)
        self.d_opt = torch.optim.Adam(self.d.parameters(), lr=cfg.lr_d, betas=betas)
        if optimizer_state is not None:
            self.g_opt.load_state_dict(optimizer_state["g"])
            self.d_opt.load_state_dict(optimizer_state["d"])
        self.epoch = start_epoch
        self.history: list[tuple] = list(history) if history else []
        self._shuffle_rng = np.random.Generator(np.random.PCG64(cfg.seed))
        self._epochs_shuffled = 0
        self._step_index = len(self.history)
        # Denormals only arise deep in saturated activations; flushing them
        # is deterministic and measurably faster on this workload.
        torch.set_flush_denormal(True)

    def train_step(self, past: torch.Tensor, current: torch.Tensor, next_: torch.Tensor,
                   observer=None) -> StepLosses:
        """One critic sub-step (if adversarial) then one generator sub-step."""
        pred = self.g(past, current)
        digest = _digest(pred)
        loss_adv_g_val: float | None = None
        loss_adv_d_val: float | None = None

        if self.arch.adversarial:
            d_real = self.d(next_)
            d_fake = self.d(pred.detach())
            l_d = metrics.loss_adv_d(d_real, d_fake, reduction="sum").mean()
            self.d_opt.zero_grad(set_to_none=True)
            l_d.backward()
            self.d_opt.step()
            loss_adv_d_val = float(l_d.detach())
            if observer is not None:
                observer.after_d_substep(self)

            d_fake_new = self.d(pred)
            l_adv_g = metrics.loss_adv_g(d_fake_new, reduction="sum").mean()
            l_g = metrics.loss_g_batched(next_, pred, self.ssim_cfg).mean()
            total = l_g + self.cfg.adv_weight * l_adv_g
            loss_adv_g_val = float(l_adv_g.detach())
        else:
            l_g = metrics.loss_g_batched(next_, pred, self.ssim_cfg).mean()
            total = l_g

        self.g_opt.zero_grad(set_to_none=True)
        total.backward()
        self.g_opt.step()
        if observer is not None:
            observer.after_g_substep(self)

        loss_g_val = float(l_g.detach())
        rec = StepLosses(self.epoch, self._step_index, loss_g_val,
                         loss_adv_g_val, loss_adv_d_val, digest)
        self._step_index += 1
        if any(v is not None and not math.isfinite(v)
               for v in (loss_g_val, loss_adv_g_val, loss_adv_d_val)):
            raise TrainingDivergedError(
                f"non-finite loss at epoch {rec.epoch} step {rec.step}: "
                f"loss_g={loss_g_val} loss_adv_g={loss_adv_g_val} loss_adv_d={loss_adv_d_val}"
            )
        self.history.append(rec.history_row())
        return rec

    def train_epochs(self, triplets: list[AppearanceTriplet], epochs: int,
                     observer=None) -> None:
        """Run seeded-shuffle epochs of train_step over the triplet set."""
        if not triplets:
            raise EmptyDatasetError("training requires at least one triplet")
        past = _stack_patches(triplets, "past")
        current = _stack_patches(triplets, "current")
        next_ = _stack_patches(triplets, "next")
        n = past.shape[0]
        bs = self.cfg.batch_size
        # Resumed trainers replay the permutations already consumed so that a
        # run continued from a checkpoint shuffles exactly like an unbroken one.
        while self._epochs_shuffled < self.epoch:
            self._shuffle_rng.permutation(n)
            self._epochs_shuffled += 1
        for _ in range(epochs):
            perm = torch.from_numpy(self._shuffle_rng.permutation(n))
            self._epochs_shuffled += 1
            for lo in range(0, n, bs):
                idx = perm[lo : lo + bs]
                self.train_step(past[idx], current[idx], next_[idx], observer=observer)
            self.epoch += 1

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            arch=self.arch,
            generator=self.g,
            discriminator=self.d,
            optimizer_state={"g": self.g_opt.state_dict(), "d": self.d_opt.state_dict()},
            epoch=self.epoch,
            loss_history=list(self.history),
        )


def train(
    triplets: list[AppearanceTriplet],
    arch: ArchConfig,
    cfg: TrainConfig,
    ssim_cfg: SsimConfig = SsimConfig(),
    observer=None,
) -> Checkpoint:
    """Train from a fresh seeded initialization; returns the final checkpoint."""
    trainer = Trainer(arch, cfg, ssim_cfg)
    if cfg.epochs > 0:
        trainer.train_epochs(triplets, cfg.epochs, observer=observer)
    elif not triplets:
        raise EmptyDatasetError("training requires at least one triplet")
    return trainer.checkpoint()


def select_k_shot(
    triplets: list[AppearanceTriplet], k_shot: int, seed: int
) -> list[AppearanceTriplet]:
    """Keep triplets whose current frame is among K seeded picks per video.

    Frames are drawn without replacement from each video's distinct
    current-frame indices; K at or above that count keeps every triplet,
    in unchanged order.
    """
    rng = np.random.Generator(np.random.PCG64(seed + _KSHOT_SALT))
    frames_by_video: dict[str, list[int]] = {}
    for t in triplets:
        lst = frames_by_video.setdefault(t.video_id, [])
        if t.frame_index_t not in lst:
            lst.append(t.frame_index_t)
    selected: dict[str, set[int]] = {}
    for vid in sorted(frames_by_video):
        frames = sorted(frames_by_video[vid])
        if k_shot >= len(frames):
            selected[vid] = set(frames)
        else:
            picks = rng.choice(np.array(frames, dtype=np.int64), size=k_shot, replace=False)
            selected[vid] = {int(v) for v in picks}
    return [t for t in triplets if t.frame_index_t in selected[t.video_id]]


def fine_tune(
    ckpt: Checkpoint,
    target_triplets: list[AppearanceTriplet],
    k_shot: int | None,
    cfg: TrainConfig,
    ssim_cfg: SsimConfig = SsimConfig(),
) -> Checkpoint:
    """Resume optimization from ckpt on (a K-frame subset of) new videos.

    k_shot=None fine-tunes on everything.  The frame-selection RNG is
    independent of the shuffle RNG, so a saturating K reproduces the
    full fine-tune bit for bit.
    """
    k = k_shot if k_shot is not None else cfg.k_shot
    kept = target_triplets
    if k is not None:
        kept = select_k_shot(target_triplets, k, cfg.seed)
        if not kept:
            raise EmptyDatasetError(f"no triplet survives k_shot={k} selection")
    if not kept:
        raise EmptyDatasetError("fine-tuning requires at least one triplet")
    # Deep-copy so the caller's checkpoint survives; two fine-tunes from
    # the same checkpoint must start from identical parameters.
    trainer = Trainer(
        ckpt.arch,
        cfg,
        ssim_cfg,
        generator=copy.deepcopy(ckpt.generator),
        discriminator=copy.deepcopy(ckpt.discriminator),
        optimizer_state=copy.deepcopy(ckpt.optimizer_state),
        start_epoch=ckpt.epoch,
        history=ckpt.loss_history,
    )
    if cfg.epochs > 0:
        trainer.train_epochs(kept, cfg.epochs)
    return trainer.checkpoint()


# --- gradient verification -------------------------------------------------


def gradient_check(
    arch: ArchConfig,
    triplet: AppearanceTriplet,
    epsilon: float = 1e-3,
    *,
    ssim_cfg: SsimConfig = SsimConfig(),
    adv_weight: float = 0.05,
    coords_per_net: int = 128,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks the full generator objective (reconstruction + weighted
    adversarial term when enabled) against finite differences on randomly
    sampled generator coordinates, and the critic loss on critic
    coordinates.  Everything runs in float64.  Relative error uses a 1e-3
    denominator floor so coordinates where both gradients vanish count as
    agreeing.
    """
    g = init_generator(arch).double()
    d = init_discriminator(arch).double()
    past = torch.from_numpy(np.asarray(triplet.past, dtype=np.float64))[None, None]
    current = torch.from_numpy(np.asarray(triplet.current, dtype=np.float64))[None, None]
    next_ = torch.from_numpy(np.asarray(triplet.next, dtype=np.float64))[None, None]

    def g_objective() -> torch.Tensor:
        pred = g(past, current)
        obj = metrics.loss_g_batched(next_, pred, ssim_cfg).mean()
        if arch.adversarial:
            obj = obj + adv_weight * metrics.loss_adv_g(d(pred), reduction="sum").mean()
        return obj

    with torch.no_grad():
        pred_fixed = g(past, current)

    def d_objective() -> torch.Tensor:
        return metrics.loss_adv_d(d(next_), d(pred_fixed), reduction="sum").mean()

    rng = np.random.Generator(np.random.PCG64(seed))
    max_err = 0.0

    def eval_with_signs(objective) -> tuple[float, list[torch.Tensor]]:
        # Record every leaky-ReLU input sign pattern: a coordinate whose
        # +/-epsilon evaluations disagree on any sign sits across an
        # activation kink, where a central difference measures the slope
        # change rather than the derivative.  Such coordinates are
        # excluded and replaced, the standard finite-difference practice
        # for piecewise-smooth networks.
        signs: list[torch.Tensor] = []
        hooks = []

        def pre_hook(_mod, args):
            signs.append(args[0] > 0)

        for net in (g, d):
            for m in net.modules():
                if isinstance(m, torch.nn.LeakyReLU):
                    hooks.append(m.register_forward_pre_hook(pre_hook))
        try:
            val = float(objective())
        finally:
            for h in hooks:
                h.remove()
        return val, signs

    checks = [(g, g_objective)]
    if arch.adversarial:
        checks.append((d, d_objective))
    for net, objective in checks:
        for p in net.parameters():
            p.grad = None
        objective().backward()
        params = list(net.parameters())
        sizes = np.array([p.numel() for p in params])
        total = int(sizes.sum())
        budget = min(coords_per_net, total)
        candidates = rng.permutation(total)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        checked = 0
        with torch.no_grad():
            for flat in (int(v) for v in candidates):
                if checked >= budget:
                    break
                pi = int(np.searchsorted(offsets, flat, side="right") - 1)
                local = flat - int(offsets[pi])
                p = params[pi]
                view = p.view(-1)
                analytic = float(p.grad.view(-1)[local])
                orig = float(view[local])
                view[local] = orig + epsilon
                f_plus, signs_plus = eval_with_signs(objective)
                view[local] = orig - epsilon
                f_minus, signs_minus = eval_with_signs(objective)
                view[local] = orig
                crossed = any(
                    not torch.equal(a, b) for a, b in zip(signs_plus, signs_minus)
                )
                if crossed:
                    continue
                checked += 1
                numeric = (f_plus - f_minus) / (2.0 * epsilon)
                denom = max(abs(analytic), abs(numeric), 1e-3)
                max_err = max(max_err, abs(analytic - numeric) / denom)
        if checked < budget:
            raise ConfigError(
                f"gradient check exhausted coordinates: only {checked} of {budget} "
                "samples avoided activation kinks"
            )
    return max_err


# --- checkpoint serialization ---------------------------------------------


def _extract_tensors(obj, prefix: str, manifest: list, blobs: list):
    """Replace tensors in a nested structure with manifest references."""
    if isinstance(obj, torch.Tensor):
        tag = _DTYPE_TAGS.get(obj.dtype)
        if tag is None:
            raise CheckpointError(f"unsupported tensor dtype {obj.dtype} at {prefix}")
        name = f"t{len(manifest)}"
        manifest.append({"name": name, "shape": list(obj.shape), "dtype": tag})
        blobs.append(np.ascontiguousarray(obj.detach().cpu().numpy()).astype(tag).tobytes())
        return {"__tensor__": name}
    if isinstance(obj, dict):
        return {k: _extract_tensors(v, f"{prefix}.{k}", manifest, blobs) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_extract_tensors(v, f"{prefix}[{i}]", manifest, blobs) for i, v in enumerate(obj)]
    return obj


def _restore_tensors(obj, tensors: dict[str, torch.Tensor]):
    if isinstance(obj, dict):
        if set(obj.keys()) == {"__tensor__"}:
            return tensors[obj["__tensor__"]]
        return {_maybe_int(k): _restore_tensors(v, tensors) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore_tensors(v, tensors) for v in obj]
    return obj


def _maybe_int(key):
    # JSON object keys are strings; optimizer state is keyed by int.
    return int(key) if isinstance(key, str) and key.lstrip("-").isdigit() else key


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Write the versioned binary checkpoint atomically."""
    manifest: list = []
    blobs: list = []
    g_state = {k: v for k, v in ckpt.generator.state_dict().items()}
    d_state = {k: v for k, v in ckpt.discriminator.state_dict().items()}
    header = {
        "arch": asdict(ckpt.arch),
        "epoch": ckpt.epoch,
        "loss_history": [list(row) for row in ckpt.loss_history],
        "generator": _extract_tensors(g_state, "g", manifest, blobs),
        "discriminator": _extract_tensors(d_state, "d", manifest, blobs),
        "optimizer": _extract_tensors(ckpt.optimizer_state, "opt", manifest, blobs),
        "tensors": manifest,
    }
    payload = json.dumps(header, allow_nan=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_CKPT_MAGIC + struct.pack("<II", _CKPT_VERSION, 0))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read a checkpoint; bit-identical parameters to what was saved."""
    p = Path(path)
    try:
        fh = open(p, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {p}: {exc}") from exc
    with fh:
        head = fh.read(16)
        if len(head) != 16 or head[:8] != _CKPT_MAGIC:
            raise CheckpointError(f"{p}: not a checkpoint file (bad magic)")
        version, _ = struct.unpack("<II", head[8:])
        if version != _CKPT_VERSION:
            raise CheckpointError(f"{p}: unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except Exception as exc:
            raise CheckpointError(f"{p}: corrupt header: {exc}") from exc
        tensors: dict[str, torch.Tensor] = {}
        for entry in header["tensors"]:
            dtype = _TAG_DTYPES[entry["dtype"]]
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = fh.read(count * int(entry["dtype"][2]))
            if len(raw) != count * int(entry["dtype"][2]):
                raise CheckpointError(f"{p}: truncated tensor data for {entry['name']}")
            arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
            tensors[entry["name"]] = torch.from_numpy(arr).to(dtype)

    arch = ArchConfig(**header["arch"])
    g = init_generator(arch)
    d = init_discriminator(arch)
    g.load_state_dict(_restore_tensors(header["generator"], tensors))
    d.load_state_dict(_restore_tensors(header["discriminator"], tensors))
    opt_state = _restore_tensors(header["optimizer"], tensors)
    history = [tuple(row) for row in header["loss_history"]]
    return Checkpoint(arch, g, d, opt_state, int(header["epoch"]), history)


def write_loss_history_csv(history: Iterable[tuple], path: str | Path) -> None:
    """CSV of per-step losses; empty cells where adversarial terms are off."""
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,step,loss_g,loss_adv_g,loss_adv_d\n")
        for epoch, step, lg, lag, lad in history:
            cells = [str(epoch), str(step), repr(float(lg)),
                     "" if lag is None else repr(float(lag)),
                     "" if lad is None else repr(float(lad))]
            fh.write(",".join(cells) + "\n")
    os.replace(tmp, path)

"""Generator and patch discriminator with ablation-configurable wiring.

The generator runs one shared encoder over the past patch and again over
the current patch (single parameter storage, two passes), then decodes the
concatenated bottleneck back to a patch through transpose convolutions.
Skip connections concatenate the per-level features of every enabled
encoder pass into the matching decoder level.

The discriminator is an unconditional patch critic: three stride-2
convolutions followed by a stride-1 projection to one channel with a
linear output, suitable for least-squares adversarial targets.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
from torch import nn

from .errors import ConfigError

__all__ = [
    "ArchConfig",
    "Generator",
    "Discriminator",
    "init_generator",
    "init_discriminator",
    "generator_forward",
    "discriminator_forward",
    "generator_parameter_count",
    "discriminator_parameter_count",
]

ABLATIONS = ("no-past", "no-current", "no-skip", "no-adv")

_NEGATIVE_SLOPE = 0.2
_INIT_STD = 0.02
# The critic stack is fixed: three stride-2 taps then a 1-channel head.
_D_CHANNELS = (64, 128, 256)


@dataclass(frozen=True)
class ArchConfig:
    use_past_encoder: bool = True
    use_current_encoder: bool = True
    skip_connections: bool = True
    adversarial: bool = True
    base_channels: int = 32
    levels: int = 4
    patch_size_S: int = 64
    seed: int = 0

    def validate(self) -> None:
        if not (self.use_past_encoder or self.use_current_encoder):
            raise ConfigError("at least one encoder must be enabled")
        if self.levels < 1:
            raise ConfigError(f"levels must be >= 1, got {self.levels}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        s, l = self.patch_size_S, self.levels
        if s < 16 or s % (1 << l) != 0:
            raise ConfigError(f"patch_size_S must be >= 16 and divisible by 2^levels, got {s}")
        if s % 8 != 0:
            raise ConfigError(f"patch_size_S must be divisible by 8 for the patch critic, got {s}")

    def ablate(self, name: str) -> "ArchConfig":
        """Return a copy with one architecture axis switched off."""
        if name == "no-past":
            return replace(self, use_past_encoder=False)
        if name == "no-current":
            return replace(self, use_current_encoder=False)
        if name == "no-skip":
            return replace(self, skip_connections=False)
        if name == "no-adv":
            return replace(self, adversarial=False)
        raise ConfigError(f"unknown ablation {name!r}; choose from {ABLATIONS}")

    @property
    def encoder_passes(self) -> int:
        return int(self.use_past_encoder) + int(self.use_current_encoder)

    @property
    def encoder_channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * (1 << k) for k in range(self.levels))


def _seeded_init(module: nn.Module, seed: int) -> None:
    # Registration order fixes the parameter order, so one generator seed
    # pins every weight.  Conv weights ~ N(0, 0.02), biases zero.
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            else:
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * _INIT_STD)


class Generator(nn.Module):
    """Shared-encoder predictor of the next local appearance."""

    def __init__(self, cfg: ArchConfig):
        cfg.validate()
        super().__init__()
        self.cfg = cfg
        chans = cfg.encoder_channels
        passes = cfg.encoder_passes

        self.encoder = nn.ModuleList()
        in_ch = 1
        for out_ch in chans:
            self.encoder.append(nn.Conv2d(in_ch, out_ch, kernel_size=4, stride=2, padding=1))
            in_ch = out_ch

        self.decoder = nn.ModuleList()
        in_ch = passes * chans[-1]
        for j in range(cfg.levels - 1, -1, -1):
            out_ch = 1 if j == 0 else chans[j - 1]
            self.decoder.append(nn.ConvTranspose2d(in_ch, out_ch, kernel_size=4, stride=2, padding=1))
            in_ch = out_ch
            if cfg.skip_connections and j > 0:
                in_ch += passes * chans[j - 1]

        self.act = nn.LeakyReLU(_NEGATIVE_SLOPE)
        _seeded_init(self, cfg.seed)

    def _encode(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for conv in self.encoder:
            x = self.act(conv(x))
            feats.append(x)
        return feats

    def forward(self, past: torch.Tensor, current: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        passes = []
        if cfg.use_past_encoder:
            passes.append(self._encode(past))
        if cfg.use_current_encoder:
            passes.append(self._encode(current))

        h = torch.cat([f[-1] for f in passes], dim=1) if len(passes) > 1 else passes[0][-1]
        last = len(self.decoder) - 1
        for stage, deconv in enumerate(self.decoder):
            h = deconv(h)
            if stage == last:
                return torch.sigmoid(h)
            h = self.act(h)
            if cfg.skip_connections:
                level = cfg.levels - 2 - stage
                h = torch.cat([h] + [f[level] for f in passes], dim=1)
        raise AssertionError("unreachable: decoder is never empty")


class Discriminator(nn.Module):
    """Unconditional patch critic; linear (S/8) x (S/8) output map."""

    def __init__(self, cfg: ArchConfig):
        cfg.validate()
        super().__init__()
        self.cfg = cfg
        layers: list[nn.Module] = []
        in_ch = 1
        for out_ch in _D_CHANNELS:
            layers.append(nn.Conv2d(in_ch, out_ch, kernel_size=4, stride=2, padding=1))
            layers.append(nn.LeakyReLU(_NEGATIVE_SLOPE))
            in_ch = out_ch
        layers.append(nn.Conv2d(in_ch, 1, kernel_size=3, stride=1, padding=1))
        self.net = nn.Sequential(*layers)
        # Offset keeps critic weights decorrelated from generator weights
        # drawn from the same config seed.
        _seeded_init(self, cfg.seed + 1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.net(image)


def _as_nchw(x: torch.Tensor, name: str) -> tuple[torch.Tensor, bool]:
    if x.dim() == 2:
        return x.unsqueeze(0).unsqueeze(0), True
    if x.dim() == 3:
        return x.unsqueeze(1), False
    if x.dim() == 4:
        return x, False
    raise ConfigError(f"{name} must be 2-D, 3-D, or 4-D, got shape {tuple(x.shape)}")


def init_generator(cfg: ArchConfig) -> Generator:
    """Build a generator with parameters pinned by cfg.seed."""
    return Generator(cfg)


def init_discriminator(cfg: ArchConfig) -> Discriminator:
    """Build a patch critic with parameters pinned by cfg.seed."""
    return Discriminator(cfg)


def generator_forward(g: Generator, past, current, cfg: ArchConfig | None = None) -> torch.Tensor:
    """Predict the next patch; accepts single patches or batches."""
    if cfg is not None and cfg != g.cfg:
        raise ConfigError("generator was built with a different architecture config")
    if not isinstance(past, torch.Tensor):
        past = torch.as_tensor(past)
    if not isinstance(current, torch.Tensor):
        current = torch.as_tensor(current)
    p, single = _as_nchw(past, "past")
    c, _ = _as_nchw(current, "current")
    if p.shape != c.shape:
        raise ConfigError(f"past/current shape mismatch: {tuple(p.shape)} vs {tuple(c.shape)}")
    s = g.cfg.patch_size_S
    if p.shape[-2:] != (s, s):
        raise ConfigError(f"expected {s}x{s} patches, got {tuple(p.shape[-2:])}")
    out = g(p, c)
    return out[0, 0] if single else out


def discriminator_forward(d: Discriminator, image) -> torch.Tensor:
    """Score a patch (or batch); returns the (S/8) x (S/8) map(s)."""
    if not isinstance(image, torch.Tensor):
        image = torch.as_tensor(image)
    x, single = _as_nchw(image, "image")
    s = d.cfg.patch_size_S
    if x.shape[-2:] != (s, s):
        raise ConfigError(f"expected {s}x{s} patches, got {tuple(x.shape[-2:])}")
    out = d(x)
    return out[0, 0] if single else out


def generator_parameter_count(cfg: ArchConfig) -> int:
    """Closed-form parameter count of the generator for this config."""
    cfg.validate()
    chans = cfg.encoder_channels
    passes = cfg.encoder_passes
    total = 0
    in_ch = 1
    for out_ch in chans:
        total += out_ch * in_ch * 16 + out_ch
        in_ch = out_ch
    in_ch = passes * chans[-1]
    for j in range(cfg.levels - 1, -1, -1):
        out_ch = 1 if j == 0 else chans[j - 1]
        total += in_ch * out_ch * 16 + out_ch
        in_ch = out_ch
        if cfg.skip_connections and j > 0:
            in_ch += passes * chans[j - 1]
    return total


def discriminator_parameter_count(cfg: ArchConfig) -> int:
    """Closed-form parameter count of the patch critic."""
    cfg.validate()
    total = 0
    in_ch = 1
    for out_ch in _D_CHANNELS:
        total += out_ch * in_ch * 16 + out_ch
        in_ch = out_ch
    total += 1 * in_ch * 9 + 1
    return total

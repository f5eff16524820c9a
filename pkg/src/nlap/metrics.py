"""SSIM and the three training losses.

All functions are differentiable torch expressions so the same code path
serves training, scoring, and finite-difference verification.  Inputs may
be numpy arrays or torch tensors; dtype is preserved (float64 in, float64
out), which the oracle tests rely on.

The adversarial losses are plain sums over the patch map, not means; the
relative weight between the reconstruction and adversarial terms absorbs
the scale (see the trainer).  A ``reduction`` argument exposes the mean
variant for experimentation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError

__all__ = [
    "SsimConfig",
    "ssim",
    "ssim_batched",
    "ssim_map_batched",
    "loss_g",
    "loss_g_batched",
    "loss_adv_g",
    "loss_adv_d",
]


@dataclass(frozen=True)
class SsimConfig:
    """Constants of the structural-similarity index.

    ``dynamic_range_L`` is fixed at 1.0 because patches live in [0, 1].
    """

    window_size: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range_L: float = 1.0

    def validate(self) -> None:
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ConfigError(f"SSIM window_size must be odd and >= 1, got {self.window_size}")
        if self.window_sigma <= 0:
            raise ConfigError(f"SSIM window_sigma must be > 0, got {self.window_sigma}")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ConfigError(f"SSIM k1 and k2 must be > 0, got k1={self.k1} k2={self.k2}")
        if self.dynamic_range_L != 1.0:
            raise ConfigError("dynamic_range_L is fixed at 1.0 for unit-range patches")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range_L) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range_L) ** 2


@lru_cache(maxsize=8)
def _gaussian_1d(window_size: int, sigma: float, dtype: torch.dtype) -> torch.Tensor:
    x = torch.arange(window_size, dtype=dtype) - (window_size - 1) / 2
    g = torch.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _as_batched(x, name: str) -> torch.Tensor:
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(x)
    if not isinstance(x, torch.Tensor):
        raise TypeError(f"{name} must be a numpy array or torch tensor, got {type(x)!r}")
    if x.dim() == 2:
        x = x.unsqueeze(0).unsqueeze(0)
    elif x.dim() == 3:
        x = x.unsqueeze(1)
    elif x.dim() != 4:
        raise ConfigError(f"{name} must be 2-D, 3-D, or 4-D, got shape {tuple(x.shape)}")
    return x


def _window_mean(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    # Separable Gaussian over valid positions only (no padding).
    row = kernel.view(1, 1, 1, -1)
    col = kernel.view(1, 1, -1, 1)
    return F.conv2d(F.conv2d(x, row), col)


def ssim_map_batched(a, b, cfg: SsimConfig = SsimConfig()) -> torch.Tensor:
    """Per-window SSIM values for batches of patches, shape (B, 1, h', w').

    The map is the mean-free building block; :func:`ssim_batched` averages
    it.  Windows are Gaussian-weighted and only fully-contained window
    positions contribute.
    """
    a = _as_batched(a, "a")
    b = _as_batched(b, "b")
    if a.shape != b.shape:
        raise ConfigError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    side = min(a.shape[-2:])
    if cfg.window_size > side:
        raise ConfigError(f"window_size {cfg.window_size} exceeds patch side {side}")
    kernel = _gaussian_1d(cfg.window_size, float(cfg.window_sigma), a.dtype)
    c1, c2 = cfg.c1, cfg.c2

    mu_a = _window_mean(a, kernel)
    mu_b = _window_mean(b, kernel)
    var_a = _window_mean(a * a, kernel) - mu_a * mu_a
    var_b = _window_mean(b * b, kernel) - mu_b * mu_b
    cov = _window_mean(a * b, kernel) - mu_a * mu_b

    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    # Float rounding can push a window a few ulp past the mathematical
    # bound; clamp so |ssim| <= 1 holds unconditionally.
    return (num / den).clamp(min=-1.0, max=1.0)


def ssim_batched(a, b, cfg: SsimConfig = SsimConfig()) -> torch.Tensor:
    """Mean SSIM per batch element, shape (B,), values in [-1, 1]."""
    return ssim_map_batched(a, b, cfg).mean(dim=(1, 2, 3))


def ssim(a, b, cfg: SsimConfig = SsimConfig()) -> float:
    """Structural similarity of two patches; symmetric, 1.0 iff identical."""
    return float(ssim_batched(a, b, cfg)[0])


def loss_g_batched(real_next, pred_next, cfg: SsimConfig = SsimConfig()) -> torch.Tensor:
    """Reconstruction loss per batch element: 0.5 * (1 - ssim)."""
    return 0.5 * (1.0 - ssim_batched(real_next, pred_next, cfg))


def loss_g(real_next, pred_next, cfg: SsimConfig = SsimConfig()) -> float:
    """Reconstruction loss of one patch pair, in [0, 1]; 0 iff ssim = 1."""
    return float(loss_g_batched(real_next, pred_next, cfg)[0])


def _check_map(m, name: str) -> torch.Tensor:
    if isinstance(m, np.ndarray):
        m = torch.from_numpy(m)
    if not isinstance(m, torch.Tensor):
        raise TypeError(f"{name} must be a numpy array or torch tensor, got {type(m)!r}")
    if not torch.isfinite(m).all():
        raise ConfigError(f"{name} contains non-finite values")
    return m


def _reduce_patches(sq: torch.Tensor, reduction: str) -> torch.Tensor:
    # Reduce over everything but an optional leading batch dimension.
    if sq.dim() <= 2:
        dims = tuple(range(sq.dim()))
    else:
        dims = tuple(range(1, sq.dim()))
    if reduction == "sum":
        return sq.sum(dim=dims)
    if reduction == "mean":
        return sq.mean(dim=dims)
    raise ConfigError(f"reduction must be 'sum' or 'mean', got {reduction!r}")


def loss_adv_g(d_out_fake, reduction: str = "sum"):
    """Generator's adversarial loss: sum over patches of (1 - D(G(.)))^2.

    Accepts a single map (returns float) or a batch of maps with a leading
    batch dimension (returns a (B,) tensor).
    """
    m = _check_map(d_out_fake, "d_out_fake")
    out = _reduce_patches((1.0 - m) ** 2, reduction)
    return float(out) if out.dim() == 0 else out


def loss_adv_d(d_out_real, d_out_fake, reduction: str = "sum"):
    """Discriminator loss: 0.5 * [sum (1 - D(real))^2 + sum D(fake)^2]."""
    r = _check_map(d_out_real, "d_out_real")
    f = _check_map(d_out_fake, "d_out_fake")
    if r.shape != f.shape:
        raise ConfigError(f"shape mismatch: {tuple(r.shape)} vs {tuple(f.shape)}")
    out = 0.5 * (_reduce_patches((1.0 - r) ** 2, reduction) + _reduce_patches(f**2, reduction))
    return float(out) if out.dim() == 0 else out

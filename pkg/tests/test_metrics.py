"""SSIM and adversarial loss formulas against brute-force oracles."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from nlap.errors import ConfigError
from nlap.metrics import (
    SsimConfig,
    loss_adv_d,
    loss_adv_g,
    loss_g,
    loss_g_batched,
    ssim,
    ssim_batched,
    ssim_map_batched,
)


def brute_ssim(a: np.ndarray, b: np.ndarray, cfg: SsimConfig = SsimConfig()) -> float:
    """Direct windowed SSIM: explicit Gaussian-weighted stats per window."""
    n = cfg.window_size
    x = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    g1 = np.exp(-(x * x) / (2.0 * cfg.window_sigma**2))
    g1 /= g1.sum()
    w = np.outer(g1, g1)
    c1, c2 = cfg.c1, cfg.c2
    h, wd = a.shape
    vals = []
    for i in range(h - n + 1):
        for j in range(wd - n + 1):
            pa = a[i : i + n, j : j + n].astype(np.float64)
            pb = b[i : i + n, j : j + n].astype(np.float64)
            mu_a = (w * pa).sum()
            mu_b = (w * pb).sum()
            var_a = (w * pa * pa).sum() - mu_a * mu_a
            var_b = (w * pb * pb).sum() - mu_b * mu_b
            cov = (w * pa * pb).sum() - mu_a * mu_b
            s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
                (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
            )
            vals.append(min(max(s, -1.0), 1.0))
    return float(np.mean(vals))


def rand_pair(rng, s=24, dtype=np.float64):
    return rng.random((s, s)).astype(dtype), rng.random((s, s)).astype(dtype)


class TestSsim:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            a, b = rand_pair(rng)
            got = ssim(a, b)
            want = brute_ssim(a, b)
            assert got == pytest.approx(want, rel=1e-10)

    def test_identity_is_exactly_one(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            a = rng.random((16, 16))
            assert ssim(a, a) == 1.0

    def test_symmetry_bitwise(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b = rand_pair(rng, 16)
            assert ssim(a, b) == ssim(b, a)

    def test_bounded_on_random_pairs(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            a, b = rand_pair(rng, 13, np.float32)
            assert -1.0 <= ssim(a, b) <= 1.0

    def test_constant_zero_vs_one(self):
        cfg = SsimConfig()
        a = np.zeros((11, 11))
        b = np.ones((11, 11))
        want = cfg.c1 / (1.0 + cfg.c1)
        assert ssim(a, b, cfg) == pytest.approx(want, abs=1e-8)

    def test_antisimilar_patches_go_negative(self):
        # alternating checkerboard vs its inverse: strongly negative structure
        i, j = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
        a = ((i + j) % 2).astype(np.float64)
        assert ssim(a, 1.0 - a) < 0

    def test_dtype_preserved(self):
        rng = np.random.default_rng(1)
        a32, b32 = rand_pair(rng, 16, np.float32)
        m = ssim_map_batched(torch.from_numpy(a32), torch.from_numpy(b32))
        assert m.dtype == torch.float32
        m64 = ssim_map_batched(torch.from_numpy(a32.astype(np.float64)), torch.from_numpy(b32.astype(np.float64)))
        assert m64.dtype == torch.float64

    def test_map_shape_valid_windows(self):
        a = np.zeros((20, 30))
        m = ssim_map_batched(torch.from_numpy(a), torch.from_numpy(a))
        assert m.shape[-2:] == (10, 20)  # valid conv: size - 11 + 1

    def test_batched_equals_loop(self):
        rng = np.random.default_rng(9)
        a = rng.random((4, 1, 16, 16)).astype(np.float32)
        b = rng.random((4, 1, 16, 16)).astype(np.float32)
        batched = ssim_batched(torch.from_numpy(a), torch.from_numpy(b))
        # conv kernels may vectorize differently per batch size; allow last-bit drift
        for k in range(4):
            assert float(batched[k]) == pytest.approx(ssim(a[k, 0], b[k, 0]), abs=1e-6)

    def test_window_larger_than_patch_rejected(self):
        a = np.zeros((8, 8))
        with pytest.raises(ConfigError):
            ssim(a, a)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SsimConfig(window_size=4).validate()  # even size
        with pytest.raises(ConfigError):
            SsimConfig(window_sigma=0.0).validate()
        with pytest.raises(ConfigError):
            SsimConfig(k1=-0.1).validate()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_bound_and_symmetry_property(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rand_pair(rng, 12)
        v = ssim(a, b)
        assert -1.0 <= v <= 1.0
        assert v == ssim(b, a)


class TestLossG:
    def test_is_half_one_minus_ssim(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            a, b = rand_pair(rng, 16)
            assert loss_g(a, b) == 0.5 * (1.0 - ssim(a, b))

    def test_zero_iff_identical(self):
        rng = np.random.default_rng(14)
        a = rng.random((16, 16))
        assert loss_g(a, a) == 0.0
        assert loss_g(a, 1.0 - a) > 0.0

    def test_range(self):
        rng = np.random.default_rng(15)
        for _ in range(50):
            a, b = rand_pair(rng, 12)
            assert 0.0 <= loss_g(a, b) <= 1.0


class TestAdversarialLosses:
    def test_generator_term_matches_double_loop(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            m = rng.standard_normal((6, 6))
            want = sum((1.0 - m[i, j]) ** 2 for i in range(6) for j in range(6))
            got = loss_adv_g(torch.from_numpy(m))
            assert got == pytest.approx(want, rel=1e-10)

    def test_discriminator_term_matches_double_loop(self):
        rng = np.random.default_rng(22)
        for _ in range(50):
            r = rng.standard_normal((5, 7))
            f = rng.standard_normal((5, 7))
            want = 0.5 * (
                sum((1.0 - r[i, j]) ** 2 for i in range(5) for j in range(7))
                + sum(f[i, j] ** 2 for i in range(5) for j in range(7))
            )
            got = loss_adv_d(torch.from_numpy(r), torch.from_numpy(f))
            assert got == pytest.approx(want, rel=1e-10)

    def test_mean_reduction_toggle(self):
        m = torch.tensor([[0.0, 2.0], [1.0, -1.0]], dtype=torch.float64)
        assert loss_adv_g(m, reduction="sum") == pytest.approx(1.0 + 1.0 + 0.0 + 4.0)
        assert loss_adv_g(m, reduction="mean") == pytest.approx(6.0 / 4.0)
        with pytest.raises(ConfigError):
            loss_adv_g(m, reduction="median")

    def test_batched_returns_per_sample(self):
        rng = np.random.default_rng(23)
        maps = torch.from_numpy(rng.standard_normal((3, 1, 4, 4)))
        out = loss_adv_g(maps)
        assert out.shape == (3,)
        for k in range(3):
            assert float(out[k]) == pytest.approx(float(loss_adv_g(maps[k, 0])), rel=1e-12)

    def test_perfect_discriminator_zero_loss(self):
        real = torch.ones((4, 4), dtype=torch.float64)
        fake = torch.zeros((4, 4), dtype=torch.float64)
        assert loss_adv_d(real, fake) == 0.0
        assert loss_adv_g(real) == 0.0  # fooled critic outputs 1 on fakes

    def test_non_finite_rejected(self):
        m = torch.tensor([[float("nan"), 0.0]])
        with pytest.raises(ConfigError):
            loss_adv_g(m)


class TestLossGBatched:
    def test_matches_scalar(self):
        rng = np.random.default_rng(31)
        a = rng.random((3, 1, 16, 16)).astype(np.float32)
        b = rng.random((3, 1, 16, 16)).astype(np.float32)
        batch = loss_g_batched(torch.from_numpy(a), torch.from_numpy(b))
        for k in range(3):
            assert float(batch[k]) == pytest.approx(loss_g(a[k, 0], b[k, 0]), abs=1e-6)

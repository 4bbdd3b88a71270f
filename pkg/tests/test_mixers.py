import csv

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sfanet.errors import ConfigurationError
from sfanet.mixers import (BenchReport, MixerBlock, PoolMixer, PoolMixerConfig, SpectralMixer,
                           SpectralMixerConfig, bench_mixers, pool_mix, quadratic_attention,
                           spectral_mix)

from conftest import grad_check, module_grad_check

F64 = torch.float64


def naive_pool_mix(x, k):
    """Window enumeration with in-bounds averaging, minus the centre."""
    b, c, h, w = x.shape
    r = k // 2
    out = np.zeros_like(x)
    for i in range(h):
        for j in range(w):
            cells = [(u, v) for u in range(i - r, i + r + 1) for v in range(j - r, j + r + 1)
                     if 0 <= u < h and 0 <= v < w]
            mean = sum(x[:, :, u, v] for u, v in cells) / len(cells)
            out[:, :, i, j] = mean - x[:, :, i, j]
    return out


def dense_spectral_oracle(x, w1, w2, lam):
    """Unblocked numpy reference for num_blocks=1: per-frequency dense complex map."""
    b, c, h, w = x.shape
    scale = np.sqrt(h * w)
    z = np.fft.fft2(x, axes=(-2, -1)).transpose(0, 2, 3, 1) / scale  # [B, H, W, C]
    hidden = z @ w1
    gated = hidden / (1.0 + np.exp(-np.abs(hidden)))
    y = z + gated @ w2

    def shrink(v):
        return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)

    y = shrink(y.real) + 1j * shrink(y.imag)
    return np.fft.ifft2((y * scale).transpose(0, 3, 1, 2), axes=(-2, -1)).real


def spectral(dim=8, blocks=2, lam=0.0, hidden=1.0, seed=0):
    torch.manual_seed(seed)
    cfg = SpectralMixerConfig(embed_dim=dim, num_blocks=blocks, hidden_factor=hidden,
                              shrink_lambda=lam)
    return SpectralMixer(cfg).double()


class TestPoolMix:
    @pytest.mark.parametrize("k", [3, 5, 7])
    def test_constant_field_is_zero(self, k):
        x = torch.full((2, 3, 6, 5), 3.7)
        assert torch.equal(pool_mix(x, k), torch.zeros_like(x))

    def test_hand_enumerated_centre_and_corner(self):
        x = torch.zeros(1, 1, 3, 3, dtype=F64)
        x[0, 0, 1, 1] = 9.0
        out = pool_mix(x, 3)[0, 0]
        assert out[1, 1].item() == -8.0
        assert out[0, 0].item() == 2.25
        # Edge (0, 1): in-bounds 2x3 window holds one 9 among 6 cells.
        assert out[0, 1].item() == 1.5

    def test_zero_parameters(self):
        assert sum(p.numel() for p in PoolMixer(3).parameters()) == 0
        block = MixerBlock("pooling", 8)
        assert sum(p.numel() for p in block.mixer.parameters()) == 0

    @pytest.mark.parametrize("k", [3, 5])
    def test_window_enumeration_oracle(self, rng, k):
        x = rng.normal(size=(2, 2, 5, 6))
        got = pool_mix(torch.from_numpy(x), k).numpy()
        np.testing.assert_allclose(got, naive_pool_mix(x, k), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(1, 8), k=st.sampled_from([3, 5]), seed=st.integers(0, 2 ** 31),
           turns=st.integers(1, 3))
    def test_rotation_equivariance(self, n, k, seed, turns):
        x = torch.from_numpy(np.random.default_rng(seed).normal(size=(1, 2, n, n)))
        rotated_first = pool_mix(torch.rot90(x, turns, (-2, -1)), k)
        rotated_after = torch.rot90(pool_mix(x, k), turns, (-2, -1))
        assert torch.allclose(rotated_first, rotated_after, atol=1e-12)

    @pytest.mark.parametrize("k", [3, 5])
    def test_gradcheck(self, rng, k):
        x = torch.from_numpy(rng.uniform(-1, 1, (1, 2, 5, 4))).requires_grad_(True)
        probe = torch.from_numpy(rng.normal(size=(1, 2, 5, 4)))
        assert grad_check(lambda: (pool_mix(x, k) * probe).sum(), [x]) < 1e-4

    def test_float32_constant_exact(self):
        x = torch.full((1, 4, 7, 7), 0.1, dtype=torch.float32)
        assert torch.count_nonzero(pool_mix(x, 5)).item() == 0

    @pytest.mark.parametrize("k", [0, 1, 2, 4, -3])
    def test_invalid_pool_size(self, k):
        with pytest.raises(ConfigurationError):
            PoolMixerConfig(k)


class TestSpectralMixer:
    def test_identity_limit(self, rng):
        m = spectral(lam=0.0).init_identity()
        x = torch.from_numpy(rng.normal(size=(2, 8, 6, 5)))
        assert (m(x) - x).abs().max().item() < 1e-8

    def test_full_shrinkage_is_zero(self, rng):
        m = spectral(lam=1e9)
        x = torch.from_numpy(rng.uniform(-1, 1, (2, 8, 6, 6)))
        assert torch.equal(m(x), torch.zeros_like(x))

    def test_dense_oracle_single_block(self, rng):
        m = spectral(dim=4, blocks=1, lam=0.02, hidden=1.5, seed=3)
        x = rng.normal(size=(1, 4, 6, 6))
        w1 = (m.w1[0] + 1j * m.w1[1])[0].detach().numpy()
        w2 = (m.w2[0] + 1j * m.w2[1])[0].detach().numpy()
        got = m(torch.from_numpy(x)).detach().numpy()
        np.testing.assert_allclose(got, dense_spectral_oracle(x, w1, w2, 0.02), atol=1e-10)

    def test_block_diagonal_equals_masked_dense(self, rng):
        m = spectral(dim=6, blocks=3, lam=0.0, seed=5)
        c, bs = 6, 2
        w1 = np.zeros((c, c), dtype=complex)
        w2 = np.zeros((c, c), dtype=complex)
        for b in range(3):
            sl = slice(b * bs, (b + 1) * bs)
            w1[sl, sl] = (m.w1[0, b] + 1j * m.w1[1, b]).detach().numpy()
            w2[sl, sl] = (m.w2[0, b] + 1j * m.w2[1, b]).detach().numpy()
        x = rng.normal(size=(2, 6, 4, 5))
        got = m(torch.from_numpy(x)).detach().numpy()
        np.testing.assert_allclose(got, dense_spectral_oracle(x, w1, w2, 0.0), atol=1e-10)

    @settings(max_examples=20, deadline=None)
    @given(dy=st.integers(-5, 5), dx=st.integers(-5, 5), seed=st.integers(0, 2 ** 31))
    def test_translation_equivariance(self, dy, dx, seed):
        m = spectral(lam=0.0, seed=seed % 1000)
        x = torch.from_numpy(np.random.default_rng(seed).normal(size=(1, 8, 6, 7)))
        with torch.no_grad():
            a = m(torch.roll(x, (dy, dx), (-2, -1)))
            b = torch.roll(m(x), (dy, dx), (-2, -1))
        assert (a - b).abs().max().item() < 1e-8

    @pytest.mark.parametrize("blocks", [2, 4, 8])
    def test_parameter_count_scales_with_blocks(self, blocks):
        dense = spectral(dim=16, blocks=1).channel_map_weight_count()
        assert spectral(dim=16, blocks=blocks).channel_map_weight_count() * blocks == dense

    def test_output_shape_and_real(self, rng):
        m = spectral()
        out = m(torch.from_numpy(rng.normal(size=(3, 8, 5, 9))))
        assert out.shape == (3, 8, 5, 9) and not out.is_complex()

    def test_embed_dim_mismatch(self):
        with pytest.raises(ConfigurationError):
            spectral(dim=8)(torch.zeros(1, 6, 4, 4, dtype=F64))

    def test_functional_entry_checks_config(self):
        m = spectral()
        with pytest.raises(ConfigurationError):
            spectral_mix(torch.zeros(1, 8, 4, 4, dtype=F64), SpectralMixerConfig(embed_dim=8), m)

    @pytest.mark.parametrize("kw", [dict(embed_dim=6, num_blocks=4), dict(shrink_lambda=-1.0),
                                    dict(hidden_factor=0.0), dict(num_blocks=0)])
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigurationError):
            SpectralMixerConfig(**kw)

    def test_gradcheck(self, rng):
        m = spectral(dim=4, blocks=2, lam=0.05, seed=1)
        x = torch.from_numpy(rng.uniform(-1, 1, (1, 4, 4, 3)))
        probe = torch.from_numpy(rng.normal(size=(1, 4, 4, 3)))
        assert module_grad_check(m, lambda: (m(x) * probe).sum()) < 1e-4


class TestMixerBlock:
    @pytest.mark.parametrize("kind", ["pooling", "spectral"])
    def test_zeroed_projections_identity(self, rng, kind):
        block = MixerBlock(kind, 8).zero_output_projections()
        x = torch.from_numpy(rng.normal(size=(2, 8, 6, 6)).astype(np.float32))
        assert torch.equal(block(x), x)

    @pytest.mark.parametrize("kind", ["pooling", "spectral"])
    def test_shape_contract(self, kind):
        block = MixerBlock(kind, 32)
        assert block(torch.randn(2, 32, 16, 16)).shape == (2, 32, 16, 16)

    @pytest.mark.parametrize("kind", ["pooling", "spectral"])
    def test_gradcheck(self, rng, kind):
        torch.manual_seed(0)
        spec = SpectralMixerConfig(embed_dim=4, num_blocks=2, shrink_lambda=0.0)
        block = MixerBlock(kind, 4, spectral=spec, mlp_ratio=1.0, layer_scale_init=0.5).double()
        x = torch.from_numpy(rng.uniform(-1, 1, (1, 4, 4, 4))).requires_grad_(True)
        probe = torch.from_numpy(rng.normal(size=(1, 4, 4, 4)))
        params = [p for p in block.parameters()] + [x]
        assert grad_check(lambda: (block(x) * probe).sum(), params) < 1e-4

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            MixerBlock("attention", 8)


def test_quadratic_attention_matches_dense(rng):
    x = torch.from_numpy(rng.normal(size=(1, 4, 5, 6)))
    t = x.reshape(1, 4, 30).transpose(1, 2)
    att = torch.softmax(t @ t.transpose(1, 2) / 2.0, dim=-1)
    expect = (att @ t).transpose(1, 2).reshape(1, 4, 5, 6)
    assert torch.allclose(quadratic_attention(x, chunk=7), expect, atol=1e-12)


class TestBench:
    def test_needs_three_counts(self):
        with pytest.raises(ConfigurationError):
            bench_mixers([64, 1024], 4)

    def test_needs_eightfold_range(self):
        with pytest.raises(ConfigurationError):
            bench_mixers([64, 128, 256], 4)

    def test_report_and_csv(self, tmp_path):
        report = bench_mixers([64, 256, 1024], 8, repeats=2)
        assert {r[0] for r in report.rows} == {"pooling", "spectral", "attention"}
        assert len(report.rows) == 9
        assert all(np.isfinite(v) for v in report.slopes.values())
        path = tmp_path / "bench.csv"
        report.to_csv(path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == BenchReport.CSV_HEADER == ("mixer", "tokens", "channels",
                                                            "mean_ms", "std_ms")
        assert len(rows) == 10

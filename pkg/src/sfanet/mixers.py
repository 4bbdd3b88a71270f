"""Token mixers: parameter-free pooling and Fourier-domain spectral mixing.

Both mixers act on [B, C, H, W] feature maps and preserve shape. They are
wrapped in :class:`MixerBlock`, a residual metaformer block
(norm -> mixer -> scale -> add, norm -> channel MLP -> scale -> add).
"""
from __future__ import annotations

import functools
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import diffcore as dc
from .errors import ConfigurationError
from .layers import Conv2d, GroupNorm

__all__ = [
    "PoolMixerConfig",
    "SpectralMixerConfig",
    "pool_mix",
    "PoolMixer",
    "SpectralMixer",
    "spectral_mix",
    "MixerBlock",
    "quadratic_attention",
    "bench_mixers",
    "BenchReport",
]


@dataclass(frozen=True)
class PoolMixerConfig:
    pool_size: int = 3

    def __post_init__(self):
        k = self.pool_size
        if not isinstance(k, int) or k < 3 or k % 2 == 0:
            raise ConfigurationError(f"pool_size must be an odd int >= 3, got {k!r}")


@dataclass(frozen=True)
class SpectralMixerConfig:
    embed_dim: int = 64
    num_blocks: int = 4
    hidden_factor: float = 1.0
    shrink_lambda: float = 0.01

    def __post_init__(self):
        if self.embed_dim < 1 or self.num_blocks < 1:
            raise ConfigurationError("embed_dim and num_blocks must be positive")
        if self.embed_dim % self.num_blocks:
            raise ConfigurationError(
                f"embed_dim={self.embed_dim} not divisible by num_blocks={self.num_blocks}"
            )
        if self.hidden_factor <= 0:
            raise ConfigurationError(f"hidden_factor must be > 0, got {self.hidden_factor}")
        if self.shrink_lambda < 0:
            raise ConfigurationError(f"shrink_lambda must be >= 0, got {self.shrink_lambda}")

    @property
    def block_size(self) -> int:
        return self.embed_dim // self.num_blocks

    @property
    def hidden_size(self) -> int:
        return max(1, int(round(self.block_size * self.hidden_factor)))


_POOL_TILE = 2 ** 16  # elements per tile; keeps the working set cache-resident


@functools.lru_cache(maxsize=64)
def _window_masks(h, w, k, dtype, device):
    """Padded in-bounds mask and per-cell in-bounds window counts."""
    r = k // 2
    valid = F.pad(torch.ones(h, w, dtype=dtype, device=device), (r, r, r, r))
    count = torch.zeros(h, w, dtype=dtype, device=device)
    for du in range(k):
        for dv in range(k):
            count.add_(valid[du:du + h, dv:dv + w])
    return valid, count


class _PoolMix(torch.autograd.Function):
    # Forward averages neighbour-minus-centre differences, which is exactly 0
    # on a constant field. The map is linear, so backward is its adjoint:
    # scatter g / count over each window, minus g.

    @staticmethod
    def forward(ctx, x, k):
        r = k // 2
        h, w = x.shape[-2:]
        valid, count = _window_masks(h, w, k, x.dtype, x.device)
        # Tiles over the flattened leading axes, so cost per token does not
        # jump once a whole feature map outgrows the cache.
        flat = x.reshape(-1, h, w)
        out = torch.empty_like(flat)
        rows = max(1, _POOL_TILE // (h * w))
        diff = x.new_empty(min(rows, flat.shape[0]), h, w)
        for start in range(0, flat.shape[0], rows):
            xs = flat[start:start + rows]
            acc = out[start:start + rows].zero_()
            d = diff[:xs.shape[0]]
            xp = F.pad(xs, (r, r, r, r))
            for du in range(k):
                for dv in range(k):
                    torch.sub(xp[:, du:du + h, dv:dv + w], xs, out=d)
                    acc.addcmul_(d, valid[du:du + h, dv:dv + w])
            acc.div_(count)
        ctx.k = k
        ctx.save_for_backward(count)
        return out.reshape(x.shape)

    @staticmethod
    def backward(ctx, g):
        (count,) = ctx.saved_tensors
        k = ctx.k
        spread = F.avg_pool2d(g / count, k, stride=1, padding=k // 2,
                              count_include_pad=True, divisor_override=1)
        return spread - g, None


def pool_mix(x, cfg: PoolMixerConfig | int = 3):
    """Window mean minus the centre token.

    The K x K window is clipped at the borders and averaged over in-bounds
    cells only. The mean is taken over neighbour-minus-centre differences,
    so a constant field maps to exactly zero everywhere, in any precision.
    """
    k = cfg.pool_size if isinstance(cfg, PoolMixerConfig) else PoolMixerConfig(cfg).pool_size
    return _PoolMix.apply(x, k)


class PoolMixer(nn.Module):
    def __init__(self, pool_size=3):
        super().__init__()
        self.cfg = PoolMixerConfig(pool_size)

    def forward(self, x):
        return pool_mix(x, self.cfg)


def _modulus_gate(h):
    # Scales each complex entry by sigmoid(|h|); the phase is untouched,
    # which keeps the per-frequency map commuting with spatial shifts.
    return h * torch.sigmoid(h.abs())


class SpectralMixer(nn.Module):
    """Fourier-domain token mixer with block-diagonal channel weights.

    Per frequency ``z`` (a C-vector, split into ``num_blocks`` blocks) the
    map is ``z + W2 @ gate(W1 @ z)`` with complex block weights shared by
    every frequency. The result is soft-thresholded, inverse transformed,
    and its real part returned. Spectra are scaled by 1/sqrt(H*W) around
    the map so the threshold is on the same scale as the features.
    """

    def __init__(self, cfg: SpectralMixerConfig):
        super().__init__()
        self.cfg = cfg
        nb, bs, hs = cfg.num_blocks, cfg.block_size, cfg.hidden_size
        self.w1 = nn.Parameter(torch.empty(2, nb, bs, hs))
        self.w2 = nn.Parameter(torch.empty(2, nb, hs, bs))
        dc.kaiming_uniform_(self.w1, bs)
        dc.kaiming_uniform_(self.w2, hs)

    def init_identity(self):
        """Zero the second layer so the per-frequency map is the identity."""
        with torch.no_grad():
            self.w2.zero_()
        return self

    def channel_map_weight_count(self) -> int:
        return self.w1.numel() + self.w2.numel()

    def frequency_map(self, z):
        """Apply the block map to a channels-last complex spectrum [..., C]."""
        nb, bs = self.cfg.num_blocks, self.cfg.block_size
        lead = z.shape[:-1]
        z = z.reshape(*lead, nb, bs)
        w1 = torch.complex(self.w1[0], self.w1[1])
        w2 = torch.complex(self.w2[0], self.w2[1])
        h = _modulus_gate(torch.einsum("...bi,bio->...bo", z, w1))
        out = z + torch.einsum("...bi,bio->...bo", h, w2)
        return out.reshape(*lead, nb * bs)

    def forward(self, x):
        c = x.shape[1]
        if c != self.cfg.embed_dim:
            raise ConfigurationError(
                f"spectral mixer expects embed_dim={self.cfg.embed_dim} channels, got {c}"
            )
        h, w = x.shape[-2:]
        scale = math.sqrt(h * w)
        z = dc.fft2(x) / scale
        z = dc.soft_shrink(self.frequency_map(z), self.cfg.shrink_lambda)
        return dc.ifft2(z * scale)


def spectral_mix(x, cfg: SpectralMixerConfig, params: SpectralMixer):
    """Functional entry point; ``params`` carries the learned block weights."""
    if params.cfg != cfg:
        raise ConfigurationError("spectral_mix: cfg does not match the parameter set")
    return params(x)


class ChannelMlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = Conv2d(dim, hidden, 1)
        self.fc2 = Conv2d(hidden, dim, 1)

    def forward(self, x):
        return self.fc2(dc.gelu(self.fc1(x)))


class MixerBlock(nn.Module):
    """Residual block around a pooling or spectral token mixer.

    ``layer_scale_mixer`` and ``layer_scale_mlp`` are per-channel output
    scales; zeroing both turns the block into an exact identity.
    """

    def __init__(self, kind, dim, pool_size=3, spectral: SpectralMixerConfig | None = None,
                 mlp_ratio=2.0, layer_scale_init=0.1):
        super().__init__()
        if kind not in ("pooling", "spectral"):
            raise ConfigurationError(f"unknown mixer kind {kind!r}")
        self.kind = kind
        self.norm1 = GroupNorm(1, dim)
        if kind == "pooling":
            self.mixer = PoolMixer(pool_size)
        else:
            spectral = spectral or SpectralMixerConfig(embed_dim=dim)
            if spectral.embed_dim != dim:
                raise ConfigurationError(
                    f"spectral embed_dim={spectral.embed_dim} != block dim {dim}"
                )
            self.mixer = SpectralMixer(spectral)
        self.layer_scale_mixer = nn.Parameter(torch.full((dim,), float(layer_scale_init)))
        self.norm2 = GroupNorm(1, dim)
        self.mlp = ChannelMlp(dim, max(1, int(round(dim * mlp_ratio))))
        self.layer_scale_mlp = nn.Parameter(torch.full((dim,), float(layer_scale_init)))

    def zero_output_projections(self):
        with torch.no_grad():
            self.layer_scale_mixer.zero_()
            self.layer_scale_mlp.zero_()
        return self

    def forward(self, x):
        x = x + self.layer_scale_mixer[:, None, None] * self.mixer(self.norm1(x))
        x = x + self.layer_scale_mlp[:, None, None] * self.mlp(self.norm2(x))
        return x


def quadratic_attention(x, chunk=None):
    """Dense softmax self-attention over the H*W tokens of [B, C, H, W].

    Reference kernel for complexity comparisons only; queries are processed
    in chunks so memory stays O(chunk * tokens). The default chunk keeps each
    score block near 2**18 entries, small enough to stay cache-resident at
    every token count, so timings scale with the arithmetic rather than
    jumping when the block spills out of cache.
    """
    b, c, h, w = x.shape
    t = x.reshape(b, c, h * w).transpose(1, 2)
    scale = 1.0 / math.sqrt(c)
    if chunk is None:
        chunk = max(1, 2 ** 18 // (h * w))
    out = []
    for start in range(0, h * w, chunk):
        q = t[:, start:start + chunk]
        att = torch.softmax(q @ t.transpose(1, 2) * scale, dim=-1)
        out.append(att @ t)
    return torch.cat(out, dim=1).transpose(1, 2).reshape(b, c, h, w)


def _grid_for(tokens: int) -> tuple[int, int]:
    h = int(math.isqrt(tokens))
    while tokens % h:
        h -= 1
    return h, tokens // h


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)  # (mixer, tokens, channels, mean_ms, std_ms)
    slopes: dict = field(default_factory=dict)

    CSV_HEADER = ("mixer", "tokens", "channels", "mean_ms", "std_ms")

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_HEADER)
            for row in self.rows:
                writer.writerow(row)


def _time_rounds(fns, repeats):
    """Wall times in ms, [repeats, len(fns)], with the callables interleaved.

    Interleaving spreads slow drift in machine load evenly across token
    counts instead of biasing whichever count happened to run during it.
    """
    for fn in fns:
        fn()  # warm-up
    samples = np.zeros((repeats, len(fns)))
    for r in range(repeats):
        for i, fn in enumerate(fns):
            t0 = time.perf_counter()
            fn()
            samples[r, i] = (time.perf_counter() - t0) * 1e3
    return samples


def bench_mixers(token_counts, channels, repeats=5, seed=0, mixers=None):
    """Time each mixer's forward pass across token counts.

    Returns a :class:`BenchReport` with one row per (mixer, token count) and
    the fitted log-log slope of time against token count per mixer. Rows
    carry mean and std; the slope is fitted to the per-count minimum, the
    run least disturbed by other load on the machine.
    """
    token_counts = sorted(int(t) for t in token_counts)
    if len(token_counts) < 3:
        raise ConfigurationError("bench_mixers needs at least 3 token counts")
    if token_counts[-1] < 8 * token_counts[0]:
        raise ConfigurationError("bench_mixers token counts must span at least an 8x range")
    if repeats < 1:
        raise ConfigurationError("bench_mixers needs repeats >= 1")
    torch.manual_seed(seed)
    spectral = SpectralMixer(SpectralMixerConfig(embed_dim=channels,
                                                 num_blocks=_largest_divisor(channels, 4)))
    kernels = {
        "pooling": lambda x: pool_mix(x, 3),
        "spectral": spectral,
        "attention": quadratic_attention,
    }
    if mixers is not None:
        kernels = {k: v for k, v in kernels.items() if k in mixers}
    inputs = [torch.randn(1, channels, *_grid_for(n)) for n in token_counts]
    report = BenchReport()
    with torch.no_grad():
        for name, fn in kernels.items():
            samples = _time_rounds([lambda x=x: fn(x) for x in inputs], repeats)
            for i, n in enumerate(token_counts):
                report.rows.append((name, n, channels, float(samples[:, i].mean()),
                                    float(samples[:, i].std())))
            slope, _ = np.polyfit(np.log(token_counts), np.log(samples.min(axis=0)), 1)
            report.slopes[name] = float(slope)
    return report


def _largest_divisor(n, at_most):
    for d in range(min(n, at_most), 0, -1):
        if n % d == 0:
            return d
    return 1

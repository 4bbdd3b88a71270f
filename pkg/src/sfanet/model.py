"""Encoder / temporal predictor / decoder assembly.

Shapes through the pipeline (D = embed_dim, f = downsample_factor)::

    x          [B, T_in,  C, H,   W  ]
    encode  -> [B, T_in,  D, H/f, W/f]   frames processed independently
    predict -> [B, T_out, D, H/f, W/f]   time folded into channels
    decode  -> [B, T_out, C, H,   W  ]   frames decoded independently
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import torch
from torch import nn

from . import diffcore as dc
from .errors import ConfigurationError, DimensionError
from .layers import Conv2d, ConvTranspose2d, GroupNorm
from .mixers import MixerBlock, SpectralMixerConfig
from .sfa import RELATION_KINDS, SfaFusion

MIXER_SELECTIONS = ("pooling_only", "spectral_only", "both")
LEAKY_SLOPE = 0.2

__all__ = ["ModelConfig", "SfanetModel", "Encoder", "TemporalPredictor", "Decoder",
           "MIXER_SELECTIONS", "ablation_grid"]


@dataclass(frozen=True)
class ModelConfig:
    T_in: int = 13
    T_out: int = 12
    in_channels: int = 1
    H: int = 64
    W: int = 64
    embed_dim: int = 64
    L: int = 2
    N: int = 2
    downsample_factor: int = 4
    pool_size: int = 3
    spectral_blocks: int = 4
    spectral_hidden_factor: float = 1.0
    shrink_lambda: float = 0.01
    mixer_selection: str = "both"
    sfa_kind: str | None = "transformer"
    sfa_heads: int = 4
    sfa_share_weights: bool = False
    mlp_ratio: float = 2.0
    layer_scale_init: float = 0.1
    norm_groups: int = 2
    decoder_taper: bool = True
    predictor_hidden: int = 128
    predictor_depth: int = 2
    predictor_groups: int = 4
    inception_kernels: tuple = (3, 5, 7, 11)

    def __post_init__(self):
        object.__setattr__(self, "inception_kernels", tuple(self.inception_kernels))
        problems = self.problems()
        if problems:
            raise ConfigurationError("invalid ModelConfig: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        for name in ("T_in", "T_out", "in_channels", "H", "W", "embed_dim", "L", "N",
                     "downsample_factor", "sfa_heads", "norm_groups", "predictor_hidden",
                     "predictor_groups"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                out.append(f"{name} must be a positive int, got {v!r}")
        if out:
            return out
        f = self.downsample_factor
        if f & (f - 1):
            out.append(f"downsample_factor={f} is not a power of two")
        if self.H % f or self.W % f:
            out.append(f"H={self.H}, W={self.W} not divisible by downsample_factor={f}")
        if 2 ** self.N != f:
            out.append(f"N={self.N} decoder blocks upsample by {2 ** self.N}, "
                       f"but downsample_factor={f}")
        if self.mixer_selection not in MIXER_SELECTIONS:
            out.append(f"mixer_selection={self.mixer_selection!r} not in {MIXER_SELECTIONS}")
        if self.sfa_kind is not None and self.sfa_kind not in RELATION_KINDS:
            out.append(f"sfa_kind={self.sfa_kind!r} not in {RELATION_KINDS} or null")
        if self.mixer_selection != "both" and self.sfa_kind is not None:
            out.append("sfa_kind must be null unless mixer_selection is 'both'")
        if self.embed_dim % self.spectral_blocks:
            out.append(f"embed_dim={self.embed_dim} not divisible by "
                       f"spectral_blocks={self.spectral_blocks}")
        if self.sfa_kind in ("cross_attention", "transformer") and self.embed_dim % self.sfa_heads:
            out.append(f"embed_dim={self.embed_dim} not divisible by sfa_heads={self.sfa_heads}")
        if self.embed_dim % self.norm_groups:
            out.append(f"embed_dim={self.embed_dim} not divisible by norm_groups={self.norm_groups}")
        if self.pool_size < 3 or self.pool_size % 2 == 0:
            out.append(f"pool_size={self.pool_size} must be odd and >= 3")
        if self.shrink_lambda < 0:
            out.append("shrink_lambda must be >= 0")
        if self.predictor_depth < 0:
            out.append("predictor_depth must be >= 0")
        if not self.inception_kernels or any(k < 1 or k % 2 == 0 for k in self.inception_kernels):
            out.append(f"inception_kernels={self.inception_kernels} must be odd positive ints")
        return out

    @property
    def latent_hw(self) -> tuple[int, int]:
        return self.H // self.downsample_factor, self.W // self.downsample_factor

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["inception_kernels"] = list(self.inception_kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError("unknown model keys: " + ", ".join(unknown))
        return cls(**d)


def ablation_grid():
    """The (mixer_selection, sfa_kind) pairs of the ablation table."""
    rows = [("pooling_only", None), ("spectral_only", None), ("both", None)]
    rows += [("both", kind) for kind in RELATION_KINDS]
    return rows


class ConvNormAct(nn.Module):
    def __init__(self, cin, cout, k, stride=1, groups=1, norm_groups=2):
        super().__init__()
        self.conv = Conv2d(cin, cout, k, stride=stride, padding=k // 2, groups=groups)
        self.norm = GroupNorm(norm_groups, cout)

    def forward(self, x):
        return dc.leaky_relu(self.norm(self.conv(x)), LEAKY_SLOPE)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d, g = cfg.embed_dim, cfg.norm_groups
        n_down = int(math.log2(cfg.downsample_factor))
        if n_down == 0:
            layers = [ConvNormAct(cfg.in_channels, d, 3, norm_groups=g)]
        else:
            layers = [ConvNormAct(cfg.in_channels if i == 0 else d, d, 3, stride=2,
                                  norm_groups=g) for i in range(n_down)]
        self.downsample = nn.Sequential(*layers)
        spectral = SpectralMixerConfig(embed_dim=d, num_blocks=cfg.spectral_blocks,
                                       hidden_factor=cfg.spectral_hidden_factor,
                                       shrink_lambda=cfg.shrink_lambda)
        block_kw = dict(mlp_ratio=cfg.mlp_ratio, layer_scale_init=cfg.layer_scale_init)
        self.pool_branch = None
        self.spectral_branch = None
        if cfg.mixer_selection in ("pooling_only", "both"):
            self.pool_branch = nn.Sequential(*[
                MixerBlock("pooling", d, pool_size=cfg.pool_size, **block_kw)
                for _ in range(cfg.L)])
        if cfg.mixer_selection in ("spectral_only", "both"):
            self.spectral_branch = nn.Sequential(*[
                MixerBlock("spectral", d, spectral=spectral, **block_kw)
                for _ in range(cfg.L)])
        self.fusion = None
        self.proj = None
        if cfg.mixer_selection == "both":
            self.fusion = SfaFusion(d, cfg.sfa_kind, cfg.sfa_heads, cfg.sfa_share_weights)
            self.proj = Conv2d(2 * d, d, 1)

    def zero_output_projections(self):
        for branch in (self.pool_branch, self.spectral_branch):
            if branch is not None:
                for block in branch:
                    block.zero_output_projections()
        if self.fusion is not None:
            self.fusion.zero_output_projections()
        return self

    def encode_frames(self, frames):
        """[N, C, H, W] -> [N, D, H/f, W/f]."""
        z = self.downsample(frames)
        if self.cfg.mixer_selection == "pooling_only":
            return self.pool_branch(z)
        if self.cfg.mixer_selection == "spectral_only":
            return self.spectral_branch(z)
        fs = self.pool_branch(z)
        ff = self.spectral_branch(z)
        return self.proj(self.fusion(fs, ff))

    def forward(self, x):
        cfg = self.cfg
        expected = (cfg.T_in, cfg.in_channels, cfg.H, cfg.W)
        if x.dim() != 5 or tuple(x.shape[1:]) != expected:
            raise DimensionError(
                f"encode: expected [B, T_in, C, H, W] = [B, {', '.join(map(str, expected))}], "
                f"got {tuple(x.shape)}"
            )
        b, t = x.shape[:2]
        z = self.encode_frames(x.reshape(b * t, *x.shape[2:]))
        return z.reshape(b, t, *z.shape[1:])


class InceptionUnit(nn.Module):
    """1x1 bottleneck, then parallel grouped convolutions whose outputs are summed."""

    def __init__(self, cin, cout, bottleneck, kernels, groups, norm_groups):
        super().__init__()
        self.bottleneck = Conv2d(cin, bottleneck, 1)
        g = math.gcd(math.gcd(groups, bottleneck), cout)
        ng = math.gcd(norm_groups, cout)
        self.branches = nn.ModuleList(
            [ConvNormAct(bottleneck, cout, k, groups=g, norm_groups=ng) for k in kernels])
        self.residual = cin == cout

    def forward(self, x):
        z = self.bottleneck(x)
        y = self.branches[0](z)
        for branch in self.branches[1:]:
            y = y + branch(z)
        return x + y if self.residual else y


class TemporalPredictor(nn.Module):
    """Stack of inception units over time-folded latents.

    With ``predictor_depth == 0`` the predictor is a single pointwise map
    from T_in*D to T_out*D channels.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        cin, cout, hid = cfg.T_in * d, cfg.T_out * d, cfg.predictor_hidden
        if cfg.predictor_depth == 0:
            self.units = nn.ModuleList([Conv2d(cin, cout, 1)])
            return
        widths = [cin] + [hid] * (cfg.predictor_depth - 1) + [cout]
        bottleneck = max(1, hid // 2)
        self.units = nn.ModuleList([
            InceptionUnit(a, b, bottleneck, cfg.inception_kernels, cfg.predictor_groups,
                          cfg.norm_groups)
            for a, b in zip(widths[:-1], widths[1:])])

    def init_last_frame_broadcast(self):
        """Depth-0 only: make every output frame copy the last input latent."""
        if self.cfg.predictor_depth != 0:
            raise ConfigurationError("last-frame broadcast init needs predictor_depth == 0")
        d, t_in, t_out = self.cfg.embed_dim, self.cfg.T_in, self.cfg.T_out
        conv = self.units[0]
        with torch.no_grad():
            conv.weight.zero_()
            conv.bias.zero_()
            eye = torch.eye(d, dtype=conv.weight.dtype)
            for t in range(t_out):
                conv.weight[t * d:(t + 1) * d, (t_in - 1) * d:t_in * d, 0, 0] = eye
        return self

    def forward(self, f):
        b, t, d, h, w = f.shape
        z = f.reshape(b, t * d, h, w)
        for unit in self.units:
            z = unit(z)
        return z.reshape(b, self.cfg.T_out, d, h, w)


def decoder_widths(cfg: ModelConfig) -> list[int]:
    d, g = cfg.embed_dim, cfg.norm_groups
    if not cfg.decoder_taper:
        return [d] * (cfg.N + 1)
    return [d] + [max(g, (d >> (i + 1)) // g * g) for i in range(cfg.N)]


class Decoder(nn.Module):
    """N x (transposed conv x2 upsampling -> group norm -> leaky ReLU), then 1x1 to C.

    Channel width halves at every upsampling step (never below
    ``norm_groups``) unless ``decoder_taper`` is off.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        widths = decoder_widths(cfg)
        self.ups = nn.ModuleList()
        self.norms = nn.ModuleList()
        for cin, cout in zip(widths[:-1], widths[1:]):
            self.ups.append(ConvTranspose2d(cin, cout, 4, stride=2, padding=1))
            self.norms.append(GroupNorm(cfg.norm_groups, cout))
        self.head = Conv2d(widths[-1], cfg.in_channels, 1)

    def decode_frames(self, z):
        for up, norm in zip(self.ups, self.norms):
            z = dc.leaky_relu(norm(up(z)), LEAKY_SLOPE)
        return self.head(z)

    def forward(self, f):
        cfg = self.cfg
        b, t, d, h, w = f.shape
        if (h * 2 ** cfg.N, w * 2 ** cfg.N) != (cfg.H, cfg.W):
            raise ConfigurationError(
                f"decode: latent extents {h}x{w} upsampled by 2^{cfg.N} do not give "
                f"{cfg.H}x{cfg.W}"
            )
        y = self.decode_frames(f.reshape(b * t, d, h, w))
        return y.reshape(b, t, *y.shape[1:])


class SfanetModel(nn.Module):
    """Full forecaster. Parameters are drawn from ``seed`` at construction."""

    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.encoder = Encoder(cfg)
            self.predictor = TemporalPredictor(cfg)
            self.decoder = Decoder(cfg)

    def encode(self, x):
        return self.encoder(x)

    def predict_latent(self, f):
        return self.predictor(f)

    def decode(self, f):
        return self.decoder(f)

    def forward(self, x):
        return self.decode(self.predict_latent(self.encode(x)))

    def parameter_report(self) -> dict:
        """Parameter counts per submodule, in a fixed order."""
        enc = self.encoder
        report = {}

        def count(m):
            return 0 if m is None else sum(p.numel() for p in m.parameters())

        def mixer_count(branch):
            if branch is None:
                return 0
            return sum(p.numel() for blk in branch for p in blk.mixer.parameters())

        report["encoder.downsample"] = count(enc.downsample)
        report["encoder.pool_branch"] = count(enc.pool_branch)
        report["encoder.pool_branch.mixers"] = mixer_count(enc.pool_branch)
        report["encoder.spectral_branch"] = count(enc.spectral_branch)
        report["encoder.spectral_branch.mixers"] = mixer_count(enc.spectral_branch)
        report["encoder.fusion"] = count(enc.fusion)
        report["encoder.proj"] = count(enc.proj)
        report["predictor"] = count(self.predictor)
        report["decoder"] = count(self.decoder)
        report["total"] = count(self)
        return report

"""Spatial-frequency attention: residual cross-branch relation and fusion.

Given pooling-branch features ``fs`` and spectral-branch features ``ff``
(both [B, C, H, W]), each branch receives a relation term computed
against the other and the results are concatenated::

    fs_hat = fs + R_sf(fs, ff)
    ff_hat = ff + R_fs(ff, fs)
    out    = concat([fs_hat, ff_hat], channel axis)     # [B, 2C, H, W]

Three relation families are available: ``mlp``, ``cross_attention`` and
``transformer``. Each exposes ``zero_output_projections()``, after which
it returns exactly zero.
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from . import diffcore as dc
from .errors import ConfigurationError, DimensionError
from .layers import Conv2d, Linear, TokenNorm

RELATION_KINDS = ("mlp", "cross_attention", "transformer")

__all__ = ["RELATION_KINDS", "MlpRelation", "CrossAttentionRelation",
           "TransformerRelation", "make_relation", "relation", "SfaFusion", "sfa_fuse"]


def _check_pair(fa, fb):
    if fa.dim() != 4 or fb.dim() != 4:
        raise DimensionError(
            f"relation inputs must be [B, C, H, W], got {tuple(fa.shape)} and {tuple(fb.shape)}"
        )
    for axis, name in enumerate(("batch", "channel", "height", "width")):
        if fa.shape[axis] != fb.shape[axis]:
            raise DimensionError(
                f"relation inputs disagree on the {name} axis: "
                f"{fa.shape[axis]} vs {fb.shape[axis]}"
            )


def _to_tokens(x):
    b, c, h, w = x.shape
    return x.reshape(b, c, h * w).transpose(1, 2)


def _from_tokens(t, h, w):
    b, n, c = t.shape
    return t.transpose(1, 2).reshape(b, c, h, w)


class MlpRelation(nn.Module):
    """Pointwise two-layer map over the channel concatenation [fa | fb]."""

    def __init__(self, dim, hidden_ratio=1.0):
        super().__init__()
        hidden = max(1, int(round(dim * hidden_ratio)))
        self.fc1 = Conv2d(2 * dim, hidden, 1)
        self.out = Conv2d(hidden, dim, 1)

    def zero_output_projections(self):
        with torch.no_grad():
            self.out.weight.zero_()
            self.out.bias.zero_()
        return self

    def forward(self, fa, fb):
        _check_pair(fa, fb)
        return self.out(dc.gelu(self.fc1(torch.cat([fa, fb], dim=1))))


class _CrossAttention(nn.Module):
    """Multi-head attention, queries from one token set, keys/values from another."""

    def __init__(self, dim, heads):
        super().__init__()
        if dim % heads:
            raise ConfigurationError(f"attention dim={dim} not divisible by heads={heads}")
        self.heads = heads
        self.q = Linear(dim, dim)
        self.k = Linear(dim, dim)
        self.v = Linear(dim, dim)
        self.out = Linear(dim, dim)

    def weights(self, qa, kb):
        b, n, c = qa.shape
        hd = c // self.heads
        q = self.q(qa).reshape(b, n, self.heads, hd).transpose(1, 2)
        k = self.k(kb).reshape(b, kb.shape[1], self.heads, hd).transpose(1, 2)
        return torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(hd), dim=-1)

    def forward(self, qa, kb):
        b, n, c = qa.shape
        hd = c // self.heads
        m = kb.shape[1]
        q = self.q(qa).reshape(b, n, self.heads, hd).transpose(1, 2)
        k = self.k(kb).reshape(b, m, self.heads, hd).transpose(1, 2)
        v = self.v(kb).reshape(b, m, self.heads, hd).transpose(1, 2)
        y = F.scaled_dot_product_attention(q, k, v).transpose(1, 2).reshape(b, n, c)
        return self.out(y)

    def zero_output_projections(self):
        with torch.no_grad():
            self.out.weight.zero_()
            self.out.bias.zero_()


class CrossAttentionRelation(nn.Module):
    """Tokens are spatial positions; queries come from ``fa``."""

    def __init__(self, dim, heads=4):
        super().__init__()
        self.attn = _CrossAttention(dim, heads)

    def zero_output_projections(self):
        self.attn.zero_output_projections()
        return self

    def attention_weights(self, fa, fb):
        """[B, heads, H*W (queries), H*W (keys)]; each query row sums to 1."""
        _check_pair(fa, fb)
        return self.attn.weights(_to_tokens(fa), _to_tokens(fb))

    def forward(self, fa, fb):
        _check_pair(fa, fb)
        h, w = fa.shape[-2:]
        return _from_tokens(self.attn(_to_tokens(fa), _to_tokens(fb)), h, w)


class TransformerRelation(nn.Module):
    """One pre-norm cross-attention + feed-forward block.

    Returns the block's total residual increment, so ``fa + R(fa, fb)`` is
    the block output.
    """

    def __init__(self, dim, heads=4, mlp_ratio=2.0):
        super().__init__()
        self.norm_q = TokenNorm(dim)
        self.norm_kv = TokenNorm(dim)
        self.attn = _CrossAttention(dim, heads)
        self.norm_ff = TokenNorm(dim)
        hidden = max(1, int(round(dim * mlp_ratio)))
        self.ff1 = Linear(dim, hidden)
        self.ff2 = Linear(hidden, dim)

    def zero_output_projections(self):
        self.attn.zero_output_projections()
        with torch.no_grad():
            self.ff2.weight.zero_()
            self.ff2.bias.zero_()
        return self

    def attention_weights(self, fa, fb):
        _check_pair(fa, fb)
        return self.attn.weights(self.norm_q(_to_tokens(fa)), self.norm_kv(_to_tokens(fb)))

    def forward(self, fa, fb):
        _check_pair(fa, fb)
        h, w = fa.shape[-2:]
        ta, tb = _to_tokens(fa), _to_tokens(fb)
        a = self.attn(self.norm_q(ta), self.norm_kv(tb))
        f = self.ff2(dc.gelu(self.ff1(self.norm_ff(ta + a))))
        return _from_tokens(a + f, h, w)


def make_relation(kind, dim, heads=4):
    if kind == "mlp":
        return MlpRelation(dim)
    if kind == "cross_attention":
        return CrossAttentionRelation(dim, heads)
    if kind == "transformer":
        return TransformerRelation(dim, heads)
    raise ConfigurationError(f"unknown relation kind {kind!r}; expected one of {RELATION_KINDS}")


def relation(fa, fb, kind, params):
    """Evaluate a relation module; ``kind`` must match the module's family."""
    expected = {"mlp": MlpRelation, "cross_attention": CrossAttentionRelation,
                "transformer": TransformerRelation}[kind]
    if not isinstance(params, expected):
        raise ConfigurationError(f"params is a {type(params).__name__}, not a {kind} relation")
    return params(fa, fb)


class SfaFusion(nn.Module):
    """Residual two-way relation injection followed by concatenation.

    ``kind=None`` skips the relation and only concatenates. With
    ``share_weights`` both directions use one relation module.
    """

    def __init__(self, dim, kind="transformer", heads=4, share_weights=False):
        super().__init__()
        self.kind = kind
        self.share_weights = share_weights
        if kind is None:
            self.rel_sf = self.rel_fs = None
        else:
            self.rel_sf = make_relation(kind, dim, heads)
            self.rel_fs = self.rel_sf if share_weights else make_relation(kind, dim, heads)

    def zero_output_projections(self):
        for rel in (self.rel_sf, self.rel_fs):
            if rel is not None:
                rel.zero_output_projections()
        return self

    def forward(self, fs, ff):
        _check_pair(fs, ff)
        if self.kind is None:
            return torch.cat([fs, ff], dim=1)
        fs_hat = fs + self.rel_sf(fs, ff)
        ff_hat = ff + self.rel_fs(ff, fs)
        return torch.cat([fs_hat, ff_hat], dim=1)


def sfa_fuse(fs, ff, kind, params: SfaFusion):
    if params.kind != kind:
        raise ConfigurationError(f"fusion module is {params.kind!r}, asked for {kind!r}")
    return params(fs, ff)

"""Differentiable dense-array operators.

Every operator takes and returns ``torch.Tensor`` objects and is
differentiable through torch's reverse-mode engine. This module pins down
the conventions the rest of the package relies on: argument validation
with named axes, the FFT normalization, the subgradient choice at kinks,
and the channels-last layout of spectral features.

Layouts::

    FeatureMap        [batch, channel, height, width]         real
    SpectralFeature   [batch, freq_h, freq_w, channel]         complex
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, ContractError, DimensionError

__all__ = [
    "conv2d",
    "conv_transpose2d",
    "group_norm",
    "leaky_relu",
    "gelu",
    "sigmoid",
    "fft2",
    "ifft2",
    "soft_shrink",
    "backward",
    "conv_output_size",
    "conv_transpose_output_size",
    "kaiming_uniform_",
]


def _require_rank(x: torch.Tensor, rank: int, what: str) -> None:
    if x.dim() != rank:
        raise DimensionError(
            f"{what}: expected rank {rank}, got shape {tuple(x.shape)}"
        )


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv_transpose_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + k


def conv2d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """2D cross-correlation over a [B, C_in, H, W] feature map.

    ``weight`` has shape [C_out, C_in / groups, k, k]. Output extents are
    ``floor((H + 2*padding - k) / stride) + 1``.
    """
    _require_rank(x, 4, "conv2d input")
    _require_rank(weight, 4, "conv2d weight")
    c_in = x.shape[1]
    c_out, c_per_group, kh, kw = weight.shape
    if groups < 1 or c_in % groups:
        raise DimensionError(
            f"conv2d: input channel axis (C_in={c_in}) is not divisible by groups={groups}"
        )
    if c_out % groups:
        raise DimensionError(
            f"conv2d: output channel axis (C_out={c_out}) is not divisible by groups={groups}"
        )
    if c_per_group * groups != c_in:
        raise DimensionError(
            f"conv2d: weight axis 1 (C_in/groups={c_per_group}) does not match "
            f"input channel axis C_in={c_in} with groups={groups}"
        )
    if kh != kw:
        raise DimensionError(f"conv2d: kernel axes differ (kh={kh}, kw={kw})")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(
            f"conv2d: bias axis 0 has {tuple(bias.shape)}, expected ({c_out},)"
        )
    for axis, size in (("H", x.shape[2]), ("W", x.shape[3])):
        if conv_output_size(size, kh, stride, padding) < 1:
            raise DimensionError(
                f"conv2d: spatial axis {axis}={size} too small for kernel {kh} "
                f"with padding {padding}"
            )
    return F.conv2d(x, weight, bias, stride=stride, padding=padding, groups=groups)


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0):
    """Transposed 2D convolution, the adjoint of :func:`conv2d`.

    ``weight`` has shape [C_in, C_out, k, k]; output extents are
    ``(H - 1) * stride - 2 * padding + k``.
    """
    _require_rank(x, 4, "conv_transpose2d input")
    _require_rank(weight, 4, "conv_transpose2d weight")
    c_in = x.shape[1]
    w_in, c_out, kh, kw = weight.shape
    if w_in != c_in:
        raise DimensionError(
            f"conv_transpose2d: weight axis 0 (C_in={w_in}) does not match "
            f"input channel axis C_in={c_in}"
        )
    if kh != kw:
        raise DimensionError(f"conv_transpose2d: kernel axes differ (kh={kh}, kw={kw})")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(
            f"conv_transpose2d: bias axis 0 has {tuple(bias.shape)}, expected ({c_out},)"
        )
    for axis, size in (("H", x.shape[2]), ("W", x.shape[3])):
        if conv_transpose_output_size(size, kh, stride, padding) < 1:
            raise DimensionError(
                f"conv_transpose2d: spatial axis {axis}={size} yields an empty output"
            )
    return F.conv_transpose2d(x, weight, bias, stride=stride, padding=padding)


def group_norm(x, num_groups, gamma=None, beta=None, eps=1e-5):
    """Normalize each (batch, group) slice to zero mean, unit variance.

    Variance is the biased (population) estimator.
    """
    _require_rank(x, 4, "group_norm input")
    c = x.shape[1]
    if num_groups < 1 or c % num_groups:
        raise ConfigurationError(
            f"group_norm: channels C={c} not divisible by num_groups={num_groups}"
        )
    if eps <= 0:
        raise ConfigurationError(f"group_norm: eps must be > 0, got {eps}")
    # The affine is applied after normalization, not fused into it, so a
    # constant slice normalizes to exact zeros.
    y = F.group_norm(x, num_groups, None, None, eps)
    shape = (1, c, 1, 1)
    if gamma is not None:
        y = y * gamma.reshape(shape)
    if beta is not None:
        y = y + beta.reshape(shape)
    return y


class _LeakyRelu(torch.autograd.Function):
    # Gradient at exactly 0 is 1 (right-derivative); torch's builtin uses slope.

    @staticmethod
    def forward(ctx, x, slope):
        out = F.leaky_relu(x, slope)
        ctx.save_for_backward(out)
        ctx.slope = slope
        return out

    @staticmethod
    def backward(ctx, grad):
        (out,) = ctx.saved_tensors
        scale = (out >= 0).to(grad.dtype).mul_(1.0 - ctx.slope).add_(ctx.slope)
        return grad * scale, None


def leaky_relu(x, slope=0.01):
    """x for x >= 0, slope * x otherwise."""
    if slope <= 0:
        return torch.where(x >= 0, x, slope * x)
    return _LeakyRelu.apply(x, slope)


def gelu(x):
    """Exact (erf-based) GELU."""
    return F.gelu(x)


def sigmoid(x):
    return torch.sigmoid(x)


def fft2(x):
    """Unnormalized 2D DFT of a real feature map, returned channels-last.

    [B, C, H, W] real -> [B, H, W, C] complex. Any H, W >= 1 is accepted.
    """
    _require_rank(x, 4, "fft2 input")
    if x.is_complex():
        raise DimensionError("fft2: expected a real feature map")
    z = torch.fft.fft2(x, dim=(-2, -1), norm="backward")
    return z.permute(0, 2, 3, 1)


def ifft2(z, keep_complex=False):
    """Inverse of :func:`fft2` (carries the 1/(H*W) factor).

    [B, H, W, C] complex -> [B, C, H, W]. Returns the real part unless
    ``keep_complex`` is set.
    """
    _require_rank(z, 4, "ifft2 input")
    out = torch.fft.ifft2(z.permute(0, 3, 1, 2), dim=(-2, -1), norm="backward")
    return out if keep_complex else out.real


class _SoftShrink(torch.autograd.Function):
    # Pass-through mask is x >= lam or x < -lam: the right-derivative at both kinks.

    @staticmethod
    def forward(ctx, x, lam):
        ctx.save_for_backward(x)
        ctx.lam = lam
        return F.softshrink(x, lam)

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        mask = (x >= ctx.lam) | (x < -ctx.lam)
        return grad * mask.to(grad.dtype), None


def soft_shrink(x, lam):
    """sign(x) * max(|x| - lam, 0), elementwise.

    Complex inputs are shrunk on the real and imaginary parts independently.
    At |x| == lam the gradient is the right-derivative.
    """
    if lam < 0:
        raise ConfigurationError(f"soft_shrink: lambda must be >= 0, got {lam}")
    if x.is_complex():
        return torch.complex(soft_shrink(x.real, lam), soft_shrink(x.imag, lam))
    return _SoftShrink.apply(x, float(lam))


def backward(loss):
    """Accumulate d(loss)/d(p) into ``p.grad`` for every reachable leaf.

    Calling twice without zeroing gradients adds the two results.
    """
    if loss.numel() != 1 or loss.dim() > 1:
        raise ContractError(
            f"backward: loss must be a scalar, got shape {tuple(loss.shape)}"
        )
    if not loss.requires_grad:
        raise ContractError("backward: loss does not depend on any differentiable input")
    loss.reshape(()).backward()


def kaiming_uniform_(weight, fan_in, generator=None):
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        weight.uniform_(-bound, bound, generator=generator)
    return weight

"""Parameterized layers built on :mod:`sfanet.diffcore`.

Initialization: fan-in scaled uniform for weights, zeros for biases,
ones/zeros for normalization affine parameters.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from . import diffcore as dc


class Conv2d(nn.Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1,
                 padding=None, groups=1, bias=True):
        super().__init__()
        if padding is None:
            padding = kernel_size // 2
        self.stride = stride
        self.padding = padding
        self.groups = groups
        self.weight = nn.Parameter(
            torch.empty(out_channels, in_channels // groups, kernel_size, kernel_size)
        )
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        fan_in = (in_channels // groups) * kernel_size * kernel_size
        dc.kaiming_uniform_(self.weight, fan_in)

    def forward(self, x):
        return dc.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class ConvTranspose2d(nn.Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = nn.Parameter(
            torch.empty(in_channels, out_channels, kernel_size, kernel_size)
        )
        self.bias = nn.Parameter(torch.zeros(out_channels))
        dc.kaiming_uniform_(self.weight, in_channels * kernel_size * kernel_size)

    def forward(self, x):
        return dc.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class GroupNorm(nn.Module):
    def __init__(self, num_groups, num_channels, eps=1e-5):
        super().__init__()
        self.num_groups = num_groups
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(num_channels))
        self.bias = nn.Parameter(torch.zeros(num_channels))

    def forward(self, x):
        return dc.group_norm(x, self.num_groups, self.weight, self.bias, self.eps)


class Linear(nn.Module):
    """Dense map over the last axis."""

    def __init__(self, in_features, out_features, bias=True):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(out_features, in_features))
        self.bias = nn.Parameter(torch.zeros(out_features)) if bias else None
        dc.kaiming_uniform_(self.weight, in_features)

    def forward(self, x):
        y = x @ self.weight.t()
        return y + self.bias if self.bias is not None else y


class TokenNorm(nn.Module):
    """LayerNorm over the channel axis of a [..., C] token array."""

    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x):
        return F.layer_norm(x, self.weight.shape, self.weight, self.bias, self.eps)

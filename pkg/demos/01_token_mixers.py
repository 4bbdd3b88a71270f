"""
Two ways to mix tokens
======================

A pooling mixer and a spectral mixer both move information across the
spatial grid. One has no weights and looks at a 3x3 neighbourhood; the other
learns a channel map that every frequency shares.
"""

import numpy as np
import torch

from sfanet.mixers import (SpectralMixer, SpectralMixerConfig, bench_mixers, pool_mix)

torch.manual_seed(0)

###############################################################################
# Pooling subtracts the centre from the local mean, so a flat field vanishes
# and a single spike becomes a negative dip ringed by small positive values.

spike = torch.zeros(1, 1, 5, 5)
spike[0, 0, 2, 2] = 9.0
print(pool_mix(spike, 3)[0, 0])
print("flat field ->", pool_mix(torch.full((1, 1, 5, 5), 0.3), 3).abs().max().item())

###############################################################################
# The spectral mixer starts as the identity when its second weight is zeroed,
# and because the same map acts on every frequency it commutes with shifts.

cfg = SpectralMixerConfig(embed_dim=8, num_blocks=2, shrink_lambda=0.0)
mixer = SpectralMixer(cfg).double()
x = torch.randn(1, 8, 12, 12, dtype=torch.float64)
with torch.no_grad():
    shifted_first = mixer(torch.roll(x, (3, -2), (-2, -1)))
    shifted_after = torch.roll(mixer(x), (3, -2), (-2, -1))
print("shift error:", (shifted_first - shifted_after).abs().max().item())
print("identity error:", (mixer.init_identity()(x) - x).abs().max().item())

###############################################################################
# Cost against token count. Attention is only here as a yardstick. Below a
# thousand tokens fixed per-call overhead dominates and flattens every slope.

report = bench_mixers([1024, 2048, 4096, 8192], channels=64, repeats=5)
for name, slope in report.slopes.items():
    print(f"{name:9s} log-log slope {slope:.2f}")

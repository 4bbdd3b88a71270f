"""
Nino3.4 skill on an ENSO-like field
===================================

The analog generator produces a slow oscillating warm tongue on a coarse
lat/lon grid. The box average over 5S-5N, 170W-120W gives one index per
month; skill is the correlation of that index across samples, per lead.
"""

import numpy as np

from sfanet.data import EnsoConfig, generate_enso_analog
from sfanet.metrics import nino34_index, nino_skill

ds = generate_enso_analog(EnsoConfig(seed=0), 48)
print("grid", ds.frame_shape, "lat", ds.lat[[0, -1]], "lon", ds.lon[[0, -1]])

truth = nino34_index(ds.targets[:, :, 0], ds.lat, ds.lon)  # [samples, leads]
persist = nino34_index(ds.persistence()[:, :, 0], ds.lat, ds.lon)

skill = nino_skill(persist, truth)
print("per-lead correlation of persistence:")
print(np.round(skill.per_lead_corr, 2))
print(f"mean {skill.c_m:.3f}")

###############################################################################
# Later leads can count for more; the weights are the caller's choice.

weights = np.linspace(1, 2, truth.shape[1])
weights /= weights.sum()
print(f"lead-weighted {nino_skill(persist, truth, weights).c_wm:.3f}")

"""
Does the relation module matter?
================================

Four encoders share everything except how the spatial and spectral branches
talk to each other before they are concatenated. At this size the ranking
moves with the seed, so read the numbers as a sanity check.
"""

from sfanet import ModelConfig, SfanetModel, TrainConfig, evaluate, fit, predict
from sfanet.data import SyntheticConfig, generate_synthetic

train, val = generate_synthetic(SyntheticConfig(seed=2, H=16, W=16, T_in=4, T_out=4), 64).split(16)
base = evaluate(val.persistence(), val.targets)
print(f"{'persistence':16s} CSI-M {base.csi_m:.3f}  MSE {base.mse:8.1f}")

for kind in (None, "mlp", "cross_attention", "transformer"):
    cfg = ModelConfig(H=16, W=16, T_in=4, T_out=4, embed_dim=16, spectral_blocks=2,
                      downsample_factor=2, N=1, predictor_hidden=32, sfa_kind=kind)
    model = SfanetModel(cfg, seed=0)
    res = fit(model, train, val, TrainConfig(max_steps=150, batch_size=4, peak_lr=2e-3))
    rep = evaluate(predict(model, val, res.normalizer), val.targets)
    print(f"{str(kind):16s} CSI-M {rep.csi_m:.3f}  MSE {rep.mse:8.1f}")

"""Spatial-frequency video forecasting: pooling and spectral token mixers
fused by cross-branch attention inside an encoder / predictor / decoder."""

__version__ = "0.1.0"

from .data import SequenceDataset, SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .metrics import csi, evaluate, mse
from .model import ModelConfig, SfanetModel
from .train import TrainConfig, fit, predict

__all__ = [
    "__version__", "ModelConfig", "SfanetModel", "TrainConfig", "fit", "predict",
    "SequenceDataset", "SyntheticConfig", "generate_synthetic", "load_dataset",
    "save_dataset", "csi", "evaluate", "mse",
]

"""MSE training loop: AdamW with decoupled decay, warmup + cosine, early stopping."""
from __future__ import annotations

import copy
import csv
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import Normalizer, SequenceDataset, normalize
from .errors import ConfigurationError, DimensionError, NonFiniteError

__all__ = ["TrainConfig", "TrainState", "mse_loss", "optimizer_step", "lr_at",
           "EarlyStopping", "FitResult", "fit", "predict", "write_history"]

HISTORY_COLUMNS = ("epoch", "train_loss", "val_mse", "lr")


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    warmup_fraction: float = 0.2
    peak_lr: float = 1e-3
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 4
    early_stop_patience: int = 20
    seed: int = 0
    grad_clip: float | None = 1.0
    max_steps: int | None = None
    normalization: str = "unit_range"

    def __post_init__(self):
        problems = []
        if not 0 < self.warmup_fraction < 1:
            problems.append("warmup_fraction must be in (0, 1)")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            problems.append("beta1 and beta2 must be in (0, 1)")
        if self.early_stop_patience < 1:
            problems.append("early_stop_patience must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            problems.append("max_epochs and batch_size must be >= 1")
        if self.peak_lr <= 0 or self.epsilon <= 0 or self.weight_decay < 0:
            problems.append("peak_lr and epsilon must be > 0, weight_decay >= 0")
        if self.max_steps is not None and self.max_steps < 1:
            problems.append("max_steps must be >= 1 when given")
        if self.normalization not in ("unit_range", "zscore"):
            problems.append(f"normalization {self.normalization!r} not in (unit_range, zscore)")
        if problems:
            raise ConfigurationError("invalid TrainConfig: " + "; ".join(problems))

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError("unknown train keys: " + ", ".join(unknown))
        return cls(**d)


@dataclass
class TrainState:
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)
    best_val: float = math.inf
    epochs_since_improvement: int = 0


def mse_loss(pred, target):
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    return ((pred - target) ** 2).mean()


def optimizer_step(params, grads, state: TrainState, lr, cfg: TrainConfig = TrainConfig()):
    """One AdamW update, in place.

    ``params`` maps names to tensors; ``grads`` maps the same names to
    gradients (``None`` means read ``p.grad``). Weight decay multiplies the
    weights directly by ``1 - lr * weight_decay``; it never enters the
    moment estimates.
    """
    if grads is None:
        grads = {n: p.grad for n, p in params.items()}
    for name, g in grads.items():
        if g is not None and not torch.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if name not in state.exp_avg:
                state.exp_avg[name] = torch.zeros_like(p)
                state.exp_avg_sq[name] = torch.zeros_like(p)
            m, v = state.exp_avg[name], state.exp_avg_sq[name]
            if cfg.weight_decay:
                p.mul_(1.0 - lr * cfg.weight_decay)
            m.mul_(cfg.beta1).add_(g, alpha=1.0 - cfg.beta1)
            v.mul_(cfg.beta2).addcmul_(g, g, value=1.0 - cfg.beta2)
            denom = (v / bc2).sqrt_().add_(cfg.epsilon)
            p.addcdiv_(m, denom, value=-lr / bc1)
    return params, state


def lr_at(step, total_steps, cfg: TrainConfig = TrainConfig()):
    """Linear warmup to ``peak_lr`` over ``warmup_fraction`` of the run, then cosine to 0."""
    if total_steps <= 0:
        raise ConfigurationError("total_steps must be positive")
    step = min(max(step, 0), total_steps)
    warm = cfg.warmup_fraction * total_steps
    if step < warm:
        return cfg.peak_lr * step / warm
    if total_steps == warm:
        return cfg.peak_lr
    progress = (step - warm) / (total_steps - warm)
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class EarlyStopping:
    """Counts epochs without strict improvement of a lower-is-better score."""

    def __init__(self, patience):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = None
        self.bad_epochs = 0

    def update(self, epoch, score) -> bool:
        """Record ``score``; return True if it is a new best."""
        if score < self.best:
            self.best, self.best_epoch, self.bad_epochs = score, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self):
        return self.bad_epochs >= self.patience


@dataclass
class FitResult:
    history: list
    best_epoch: int
    best_val_mse: float
    stopped_epoch: int
    steps: int
    normalizer: Normalizer
    best_state: dict


def _batch_tensors(x, y, dtype):
    return torch.from_numpy(x).to(dtype), torch.from_numpy(y).to(dtype)


@torch.no_grad()
def _dataset_mse(model, ds: SequenceDataset, batch_size, dtype):
    total, count = 0.0, 0
    for x, y in ds.batches(batch_size):
        xb, yb = _batch_tensors(x, y, dtype)
        total += ((model(xb) - yb) ** 2).sum().item()
        count += yb.numel()
    return total / count


@torch.no_grad()
def predict(model, ds: SequenceDataset, normalizer: Normalizer | None = None, batch_size=8):
    """Forecast every sample; returns a raw-scale float32 array [n, T_out, C, H, W]."""
    model.eval()
    dtype = next(model.parameters()).dtype
    inputs = ds.inputs if normalizer is None else normalizer.forward(ds.inputs.astype(np.float64))
    out = []
    for start in range(0, len(ds), batch_size):
        xb = torch.from_numpy(np.ascontiguousarray(inputs[start:start + batch_size])).to(dtype)
        out.append(model(xb).double().numpy())
    pred = np.concatenate(out)
    if normalizer is not None:
        pred = normalizer.inverse(pred)
    return pred.astype(np.float32)


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in HISTORY_COLUMNS})


def fit(model, train_ds: SequenceDataset, val_ds: SequenceDataset, cfg: TrainConfig = TrainConfig(),
        validate=None, on_epoch=None, normalizer: Normalizer | None = None, on_step=None):
    """Train ``model`` in place and leave it holding the best-validation weights.

    ``validate(model, val_ds_normalized) -> float`` overrides the default
    validation MSE. ``on_epoch(epoch, row, model)`` is called after each
    epoch; returning True ends training early. ``on_step(step, loss, model)``
    is called after every optimizer update with that batch's loss. Raises
    :class:`NonFiniteError` on a NaN/inf loss after restoring the last
    good weights (also attached as ``exc.checkpoint``).
    """
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ConfigurationError("fit needs non-empty train and validation sets")
    train_n, norm = normalize(train_ds, cfg.normalization, normalizer)
    val_n, _ = normalize(val_ds, normalizer=norm)
    dtype = next(model.parameters()).dtype
    params = dict(model.named_parameters())
    state = TrainState()
    steps_per_epoch = math.ceil(len(train_n) / cfg.batch_size)
    total_steps = cfg.max_epochs * steps_per_epoch
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)
    stopper = EarlyStopping(cfg.early_stop_patience)
    best_state = copy.deepcopy(model.state_dict())
    history = []
    validate = validate or (lambda m, ds: _dataset_mse(m, ds, cfg.batch_size, dtype))
    torch.manual_seed(cfg.seed)
    epoch = 0
    lr = 0.0
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        losses = []
        for x, y in train_n.batches(cfg.batch_size, shuffle_seed=cfg.seed * 100003 + epoch):
            if state.step >= total_steps:
                break
            xb, yb = _batch_tensors(x, y, dtype)
            model.zero_grad(set_to_none=True)
            loss = mse_loss(model(xb), yb)
            if not torch.isfinite(loss):
                model.load_state_dict(best_state)
                err = NonFiniteError(f"non-finite loss at step {state.step}, epoch {epoch}")
                err.checkpoint = best_state
                raise err
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            lr = lr_at(state.step + 1, total_steps, cfg)
            optimizer_step(params, None, state, lr, cfg)
            losses.append(loss.item())
            if on_step is not None:
                on_step(state.step, losses[-1], model)
        if not losses:
            epoch -= 1
            break
        model.eval()
        val = float(validate(model, val_n))
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_mse": val, "lr": lr}
        history.append(row)
        if stopper.update(epoch, val):
            best_state = copy.deepcopy(model.state_dict())
        state.best_val = stopper.best
        state.epochs_since_improvement = stopper.bad_epochs
        if on_epoch is not None and on_epoch(epoch, row, model):
            break
        if stopper.should_stop or state.step >= total_steps:
            break
    model.load_state_dict(best_state)
    return FitResult(history, stopper.best_epoch, stopper.best, epoch, state.step, norm, best_state)

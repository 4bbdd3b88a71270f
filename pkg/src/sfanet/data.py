"""Sequence datasets, synthetic generators and the SFDS container format.

SFDS layout (all little-endian)::

    offset  size  field
    0       4     magic b"SFDS"
    4       2     version (u16, currently 1)
    6       20    input dims  [n, T_in,  C, H, W]  (5 x u32)
    26      20    target dims [n, T_out, C, H, W]  (5 x u32)
    46      ...   float32 input block, then float32 target block
"""
from __future__ import annotations

import dataclasses
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DegenerateScaleError, DimensionError, FormatError

MAGIC = b"SFDS"
VERSION = 1
HEADER = struct.Struct("<4sH5I5I")
MAX_PAYLOAD_BYTES = 1 << 40

__all__ = [
    "SequenceDataset", "SyntheticConfig", "EnsoConfig", "generate_synthetic",
    "generate_enso_analog", "persistence_forecast", "save_dataset", "load_dataset",
    "dataset_bytes", "Normalizer", "normalize", "TruncatedPayloadError",
    "windows_from_events",
]


class TruncatedPayloadError(FormatError):
    """Payload length disagrees with the header dimensions."""


@dataclass
class SequenceDataset:
    """Paired input/target sequences, each [n, T, C, H, W] float32."""

    inputs: np.ndarray
    targets: np.ndarray
    value_range: tuple = (0.0, 255.0)
    cadence_minutes: int = 5
    lat: np.ndarray | None = None
    lon: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float32)
        self.targets = np.ascontiguousarray(self.targets, dtype=np.float32)
        if self.inputs.ndim != 5 or self.targets.ndim != 5:
            raise DimensionError(
                f"dataset arrays must be [n, T, C, H, W], got {self.inputs.shape} "
                f"and {self.targets.shape}"
            )
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DimensionError(
                f"sample axis differs: {self.inputs.shape[0]} inputs vs "
                f"{self.targets.shape[0]} targets"
            )
        if self.inputs.shape[2:] != self.targets.shape[2:]:
            raise DimensionError(
                f"frame extents differ: inputs {self.inputs.shape[2:]} vs "
                f"targets {self.targets.shape[2:]}"
            )
        if self.cadence_minutes < 1:
            raise ConfigurationError("cadence_minutes must be positive")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def t_in(self):
        return self.inputs.shape[1]

    @property
    def t_out(self):
        return self.targets.shape[1]

    @property
    def frame_shape(self):
        return self.inputs.shape[2:]

    def subset(self, index):
        return dataclasses.replace(self, inputs=self.inputs[index], targets=self.targets[index])

    def split(self, n_holdout):
        """First ``len - n_holdout`` samples and the last ``n_holdout``."""
        if not 0 < n_holdout < len(self):
            raise ConfigurationError(f"cannot hold out {n_holdout} of {len(self)} samples")
        cut = len(self) - n_holdout
        return self.subset(slice(0, cut)), self.subset(slice(cut, None))

    def order(self, shuffle_seed=None):
        if shuffle_seed is None:
            return np.arange(len(self))
        return np.random.default_rng(shuffle_seed).permutation(len(self))

    def batches(self, batch_size, shuffle_seed=None):
        idx = self.order(shuffle_seed)
        for start in range(0, len(idx), batch_size):
            sel = idx[start:start + batch_size]
            yield self.inputs[sel], self.targets[sel]

    def persistence(self):
        return persistence_forecast(self.inputs, self.t_out)

    def checksum(self):
        return hashlib.sha256(dataset_bytes(self)).hexdigest()


def persistence_forecast(inputs, t_out):
    """Repeat the last observed frame ``t_out`` times: [n, T_in, ...] -> [n, t_out, ...]."""
    last = inputs[:, -1:]
    return np.repeat(last, t_out, axis=1)


def _check_range(name, lo, hi, nonneg=False):
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ConfigurationError(f"{name} range [{lo}, {hi}] is degenerate")
    if nonneg and lo < 0:
        raise ConfigurationError(f"{name} range must be non-negative, got [{lo}, {hi}]")


@dataclass(frozen=True)
class SyntheticConfig:
    """Advected Gaussian blobs, rendered on a 0-255 scale."""

    seed: int = 0
    H: int = 64
    W: int = 64
    T_in: int = 13
    T_out: int = 12
    blobs_min: int = 2
    blobs_max: int = 4
    speed_min: float = 0.5
    speed_max: float = 2.0
    intensity_min: float = 80.0
    intensity_max: float = 250.0
    sigma_min: float = 3.0
    sigma_max: float = 7.0
    growth_min: float = -0.04
    growth_max: float = 0.04
    noise_scale: float = 0.1
    cadence_minutes: int = 5

    def __post_init__(self):
        for name in ("H", "W", "T_in", "T_out", "cadence_minutes"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.blobs_min < 1:
            raise ConfigurationError("blobs_min must be >= 1")
        _check_range("blob count", self.blobs_min, self.blobs_max)
        _check_range("speed", self.speed_min, self.speed_max, nonneg=True)
        _check_range("intensity", self.intensity_min, self.intensity_max, nonneg=True)
        _check_range("sigma", self.sigma_min, self.sigma_max)
        if self.sigma_min <= 0:
            raise ConfigurationError("sigma_min must be > 0")
        _check_range("growth", self.growth_min, self.growth_max)
        if self.noise_scale < 0:
            raise ConfigurationError("noise_scale must be >= 0")


def _render(h, w, cy, cx, sigma, amp):
    """Sum of isotropic Gaussians; cy, cx, sigma, amp have shape [n_blobs]."""
    yy = np.arange(h, dtype=np.float64)[:, None, None]
    xx = np.arange(w, dtype=np.float64)[None, :, None]
    r2 = (yy - cy) ** 2 + (xx - cx) ** 2
    return (amp * np.exp(-r2 / (2.0 * sigma ** 2))).sum(axis=-1)


def _blob_tracks(cfg: SyntheticConfig, rng, n_frames):
    """Per-blob positions, widths and amplitudes over time, each [T, n_blobs]."""
    nb = int(rng.integers(cfg.blobs_min, cfg.blobs_max + 1))
    y0 = rng.uniform(0, cfg.H, nb)
    x0 = rng.uniform(0, cfg.W, nb)
    speed = rng.uniform(cfg.speed_min, cfg.speed_max, nb)
    angle = rng.uniform(0, 2 * np.pi, nb)
    vy, vx = speed * np.sin(angle), speed * np.cos(angle)
    sigma = rng.uniform(cfg.sigma_min, cfg.sigma_max, nb)
    amp0 = rng.uniform(cfg.intensity_min, cfg.intensity_max, nb)
    rate = rng.uniform(cfg.growth_min, cfg.growth_max, nb)
    t = np.arange(n_frames, dtype=np.float64)[:, None]
    jitter_y = np.cumsum(rng.normal(0.0, cfg.noise_scale, (n_frames, nb)), axis=0) if cfg.noise_scale else 0.0
    jitter_x = np.cumsum(rng.normal(0.0, cfg.noise_scale, (n_frames, nb)), axis=0) if cfg.noise_scale else 0.0
    cy = y0 + vy * t + jitter_y
    cx = x0 + vx * t + jitter_x
    amp = amp0 * np.exp(rate * t)
    return cy, cx, np.broadcast_to(sigma, cy.shape), amp, (vy, vx)


def generate_synthetic(cfg: SyntheticConfig, n_samples: int) -> SequenceDataset:
    """Deterministic dataset of advecting, growing/decaying blobs.

    Each sample has ``T_in + T_out`` frames, clipped to [0, 255], split at
    frame ``T_in`` into input and target.
    """
    if n_samples < 1:
        raise ConfigurationError(f"n_samples must be >= 1, got {n_samples}")
    rng = np.random.default_rng(cfg.seed)
    n_frames = cfg.T_in + cfg.T_out
    seqs = np.empty((n_samples, n_frames, 1, cfg.H, cfg.W), dtype=np.float32)
    for i in range(n_samples):
        cy, cx, sigma, amp, _ = _blob_tracks(cfg, rng, n_frames)
        for t in range(n_frames):
            frame = _render(cfg.H, cfg.W, cy[t], cx[t], sigma[t], amp[t])
            seqs[i, t, 0] = np.clip(frame, 0.0, 255.0)
    return SequenceDataset(seqs[:, :cfg.T_in], seqs[:, cfg.T_in:], (0.0, 255.0),
                           cfg.cadence_minutes)


@dataclass(frozen=True)
class EnsoConfig:
    """Low-frequency equatorial SST-anomaly analog on a lat/lon grid.

    Each sample is a zonally travelling, equatorially trapped wave whose
    phase drifts at a sample-specific rate, plus small Gaussian noise.
    """

    seed: int = 0
    T_in: int = 12
    T_out: int = 14
    lat_min: float = -20.0
    lat_max: float = 20.0
    lon_min: float = 140.0
    lon_max: float = 280.0
    n_lat: int = 16
    n_lon: int = 32
    amplitude_min: float = 0.5
    amplitude_max: float = 2.5
    period_min: float = 24.0
    period_max: float = 60.0
    noise_scale: float = 0.05

    def __post_init__(self):
        _check_range("lat", self.lat_min, self.lat_max)
        _check_range("lon", self.lon_min, self.lon_max)
        _check_range("amplitude", self.amplitude_min, self.amplitude_max, nonneg=True)
        _check_range("period", self.period_min, self.period_max)
        if self.period_min <= 0 or self.n_lat < 1 or self.n_lon < 1:
            raise ConfigurationError("period and grid sizes must be positive")


def generate_enso_analog(cfg: EnsoConfig, n_samples: int) -> SequenceDataset:
    if n_samples < 1:
        raise ConfigurationError(f"n_samples must be >= 1, got {n_samples}")
    rng = np.random.default_rng(cfg.seed)
    lat = np.linspace(cfg.lat_min, cfg.lat_max, cfg.n_lat)
    lon = np.linspace(cfg.lon_min, cfg.lon_max, cfg.n_lon)
    n_frames = cfg.T_in + cfg.T_out
    t = np.arange(n_frames, dtype=np.float64)[:, None, None]
    trap = np.exp(-(lat[:, None] / 8.0) ** 2)
    seqs = np.empty((n_samples, n_frames, 1, cfg.n_lat, cfg.n_lon), dtype=np.float32)
    span = cfg.lon_max - cfg.lon_min
    for i in range(n_samples):
        amp = rng.uniform(cfg.amplitude_min, cfg.amplitude_max)
        period = rng.uniform(cfg.period_min, cfg.period_max)
        phase0 = rng.uniform(0, 2 * np.pi)
        k = 2 * np.pi / span
        field_ = amp * trap * np.cos(k * (lon[None, :] - cfg.lon_min) - 2 * np.pi * t / period - phase0)
        field_ = field_ + rng.normal(0.0, cfg.noise_scale, field_.shape)
        seqs[i, :, 0] = field_
    lim = float(cfg.amplitude_max + 5 * cfg.noise_scale)
    return SequenceDataset(seqs[:, :cfg.T_in], seqs[:, cfg.T_in:], (-lim, lim),
                           cadence_minutes=43200, lat=lat, lon=lon)


def windows_from_events(events, t_in=13, t_out=12, stride=None, cadence_minutes=5):
    """Slice [n_events, H, W, T] VIL event arrays into forecasting windows.

    This is the in-memory half of real-archive ingestion: the caller reads
    the event cube (e.g. with h5py) and passes it here.
    """
    events = np.asarray(events)
    if events.ndim != 4:
        raise DimensionError(f"events must be [n, H, W, T], got {events.shape}")
    n, h, w, t = events.shape
    span = t_in + t_out
    stride = stride or span
    if t < span:
        raise DimensionError(f"event time axis T={t} shorter than t_in + t_out = {span}")
    cubes = []
    for start in range(0, t - span + 1, stride):
        cubes.append(events[..., start:start + span])
    seq = np.stack(cubes, axis=1).reshape(-1, h, w, span)
    seq = np.moveaxis(seq, -1, 1)[:, :, None].astype(np.float32)
    return SequenceDataset(seq[:, :t_in], seq[:, t_in:], (0.0, 255.0), cadence_minutes)


def dataset_bytes(ds: SequenceDataset) -> bytes:
    header = HEADER.pack(MAGIC, VERSION, *ds.inputs.shape, *ds.targets.shape)
    return header + ds.inputs.astype("<f4").tobytes() + ds.targets.astype("<f4").tobytes()


def save_dataset(ds: SequenceDataset, path) -> None:
    Path(path).write_bytes(dataset_bytes(ds))


def load_dataset(path, value_range=(0.0, 255.0), cadence_minutes=5) -> SequenceDataset:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(raw) < HEADER.size:
        raise TruncatedPayloadError(
            f"header needs {HEADER.size} bytes, file has {len(raw)}", offset=len(raw))
    _, version, *dims = HEADER.unpack_from(raw)
    if version != VERSION:
        raise FormatError(f"unsupported SFDS version {version}", offset=4)
    in_dims, tgt_dims = dims[:5], dims[5:]
    for offset, d in ((6, in_dims), (26, tgt_dims)):
        if any(x == 0 for x in d):
            raise FormatError(f"zero extent in dims {d}", offset=offset)
    if in_dims[0] != tgt_dims[0] or in_dims[2:] != tgt_dims[2:]:
        raise FormatError(f"input dims {in_dims} incompatible with target dims {tgt_dims}",
                          offset=26)
    n_in = int(np.prod(in_dims, dtype=object))
    n_tgt = int(np.prod(tgt_dims, dtype=object))
    expected = 4 * (n_in + n_tgt)
    if expected > MAX_PAYLOAD_BYTES:
        raise FormatError(f"dimension overflow: header implies {expected} payload bytes",
                          offset=6)
    payload = len(raw) - HEADER.size
    if payload != expected:
        raise TruncatedPayloadError(
            f"payload has {payload} bytes, header dims imply {expected}",
            offset=HEADER.size + min(payload, expected))
    body = np.frombuffer(raw, dtype="<f4", offset=HEADER.size)
    inputs = body[:n_in].reshape(in_dims).astype(np.float32)
    targets = body[n_in:].reshape(tgt_dims).astype(np.float32)
    return SequenceDataset(inputs, targets, value_range, cadence_minutes)


@dataclass(frozen=True)
class Normalizer:
    """Affine map ``(x - offset) / scale`` and its inverse."""

    mode: str
    offset: float
    scale: float

    def forward(self, x):
        return (x - self.offset) / self.scale

    def inverse(self, y):
        return y * self.scale + self.offset

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(d["mode"], float(d["offset"]), float(d["scale"]))

    @classmethod
    def fit(cls, ds: SequenceDataset, mode="unit_range"):
        if mode == "unit_range":
            lo, hi = ds.value_range
            if hi <= lo:
                raise DegenerateScaleError(f"value range [{lo}, {hi}] has zero width")
            return cls(mode, float(lo), float(hi - lo))
        if mode == "zscore":
            both = np.concatenate([ds.inputs.ravel(), ds.targets.ravel()]).astype(np.float64)
            std = float(both.std())
            if std == 0.0:
                raise DegenerateScaleError("zscore on constant data: standard deviation is 0")
            return cls(mode, float(both.mean()), std)
        raise ConfigurationError(f"unknown normalization mode {mode!r}")


def normalize(ds: SequenceDataset, mode="unit_range", normalizer: Normalizer | None = None):
    """Return (normalized dataset, normalizer); ``normalizer.inverse`` undoes it."""
    norm = normalizer or Normalizer.fit(ds, mode)
    out = dataclasses.replace(
        ds,
        inputs=norm.forward(ds.inputs.astype(np.float64)).astype(np.float32),
        targets=norm.forward(ds.targets.astype(np.float64)).astype(np.float32),
        value_range=tuple(norm.forward(np.asarray(ds.value_range, dtype=np.float64)).tolist()),
    )
    return out, norm

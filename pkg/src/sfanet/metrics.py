"""Forecast verification: CSI, MSE, Nino3.4 skill and categorical error maps.

All thresholded metrics work on the 0-255 scale. Values are rounded to the
nearest integer before comparison (``np.rint``, ties to even), and a pixel
is positive at threshold ``t`` when its rounded value is >= t.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CoverageError, DimensionError, FormatError, UndefinedCorrelationError

DEFAULT_THRESHOLDS = (16, 74, 133, 160, 181, 219)
NINO34_LAT = (-5.0, 5.0)
NINO34_LON = (190.0, 240.0)  # 170W-120W in degrees east

HIT, MISS, FALSE_ALARM = 0, 1, 2
LABEL_NAMES = {HIT: "hit", MISS: "miss", FALSE_ALARM: "false_alarm"}

__all__ = [
    "DEFAULT_THRESHOLDS", "contingency", "csi", "csi_scores", "mse", "MetricsReport",
    "NinoSkill", "evaluate", "nino34_index", "nino_skill", "ErrorMap", "error_map",
    "levels", "write_pgm", "read_pgm", "check_thresholds",
]


def _np(x):
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x)


def _same_shape(pred, gt):
    pred, gt = _np(pred), _np(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    return pred, gt


def check_thresholds(thresholds):
    t = [int(v) for v in thresholds]
    if any(b <= a for a, b in zip(t, t[1:])):
        raise ValueError(f"thresholds must be strictly increasing, got {t}")
    if t and (t[0] < 0 or t[-1] > 255):
        raise ValueError(f"thresholds must lie in [0, 255], got {t}")
    return tuple(t)


def contingency(pred, gt, t):
    """(hits, misses, false_alarms) pooled over every element."""
    pred, gt = _same_shape(pred, gt)
    p = np.rint(pred) >= t
    g = np.rint(gt) >= t
    hits = int(np.count_nonzero(p & g))
    misses = int(np.count_nonzero(~p & g))
    false_alarms = int(np.count_nonzero(p & ~g))
    return hits, misses, false_alarms


def _ratio(hits, misses, false_alarms):
    denom = hits + misses + false_alarms
    # Zero denominator means no positive pixel on either side: a vacuous hit.
    return 1.0 if denom == 0 else hits / denom


def csi(pred, gt, t, per_image=False):
    """Critical success index at threshold ``t``.

    Counts are pooled over all samples, frames and pixels before dividing.
    With ``per_image`` the index is computed per [H, W] image (all leading
    axes flattened) and averaged.
    """
    pred, gt = _same_shape(pred, gt)
    if not per_image:
        return _ratio(*contingency(pred, gt, t))
    if pred.ndim < 2:
        raise DimensionError("per-image CSI needs at least [H, W] inputs")
    p = pred.reshape(-1, *pred.shape[-2:])
    g = gt.reshape(-1, *gt.shape[-2:])
    return float(np.mean([_ratio(*contingency(a, b, t)) for a, b in zip(p, g)]))


def csi_scores(pred, gt, thresholds=DEFAULT_THRESHOLDS, per_image=False):
    return {int(t): csi(pred, gt, t, per_image) for t in check_thresholds(thresholds)}


def mse(pred, gt):
    pred, gt = _same_shape(pred, gt)
    d = pred.astype(np.float64) - gt.astype(np.float64)
    return float(np.mean(d * d))


@dataclass
class NinoSkill:
    per_lead_corr: list
    c_m: float
    c_wm: float


@dataclass
class MetricsReport:
    csi_per_threshold: dict
    csi_m: float
    mse: float
    nino: NinoSkill | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {
            "csi_per_threshold": {str(k): v for k, v in self.csi_per_threshold.items()},
            "csi_m": self.csi_m,
            "mse": self.mse,
        }
        if self.nino is not None:
            d["nino"] = asdict(self.nino)
        d.update(self.extra)
        return d

    def to_json(self, path=None, indent=2):
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def evaluate(pred, gt, thresholds=DEFAULT_THRESHOLDS, per_image=False) -> MetricsReport:
    scores = csi_scores(pred, gt, thresholds, per_image)
    csi_m = float(np.mean(list(scores.values())))
    return MetricsReport(scores, csi_m, mse(pred, gt))


def nino34_index(sst_anomaly, lat, lon):
    """Unweighted box mean over 5S-5N, 170W-120W for every leading index.

    ``sst_anomaly`` is [..., n_lat, n_lon]; ``lon`` may use either the
    [-180, 180) or the [0, 360) convention.
    """
    field_ = _np(sst_anomaly)
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.mod(np.asarray(lon, dtype=np.float64), 360.0)
    if field_.shape[-2:] != (lat.size, lon.size):
        raise DimensionError(
            f"grid is {field_.shape[-2:]} but coordinates give ({lat.size}, {lon.size})")
    lo_lat, hi_lat = NINO34_LAT
    lo_lon, hi_lon = NINO34_LON
    if lat.min() > lo_lat or lat.max() < hi_lat or lon.min() > lo_lon or lon.max() < hi_lon:
        raise CoverageError(
            f"grid lat [{lat.min()}, {lat.max()}], lon [{lon.min()}, {lon.max()}] "
            f"does not cover the Nino3.4 box")
    lat_in = (lat >= lo_lat) & (lat <= hi_lat)
    lon_in = (lon >= lo_lon) & (lon <= hi_lon)
    if not lat_in.any() or not lon_in.any():
        raise CoverageError("no grid cell centre falls inside the Nino3.4 box")
    box = field_[..., lat_in, :][..., lon_in]
    return box.mean(axis=(-2, -1))


def nino_skill(pred_series, gt_series, weights=None) -> NinoSkill:
    """Per-lead Pearson correlation across samples; series are [n_samples, n_leads]."""
    p, g = _same_shape(pred_series, gt_series)
    p = p.astype(np.float64).reshape(p.shape[0], -1)
    g = g.astype(np.float64).reshape(g.shape[0], -1)
    if p.shape[0] < 2:
        raise UndefinedCorrelationError("need at least 2 samples per lead")
    pc = p - p.mean(axis=0)
    gc = g - g.mean(axis=0)
    sp = np.sqrt((pc ** 2).sum(axis=0))
    sg = np.sqrt((gc ** 2).sum(axis=0))
    bad = np.flatnonzero((sp == 0) | (sg == 0))
    if bad.size:
        raise UndefinedCorrelationError(f"zero variance at lead(s) {bad.tolist()}")
    corr = (pc * gc).sum(axis=0) / (sp * sg)
    n_leads = corr.size
    w = np.full(n_leads, 1.0 / n_leads) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n_leads,):
        raise DimensionError(f"weights must have {n_leads} entries, got {w.shape}")
    return NinoSkill(corr.tolist(), float(corr.mean()), float(np.dot(w, corr)))


def levels(values, thresholds=DEFAULT_THRESHOLDS):
    """Number of thresholds <= the rounded value, 0..len(thresholds)."""
    t = np.asarray(check_thresholds(thresholds))
    return np.searchsorted(t, np.rint(_np(values)), side="right").astype(np.uint8)


@dataclass
class ErrorMap:
    labels: np.ndarray  # uint8: 0 hit, 1 miss, 2 false alarm

    def counts(self):
        return {name: int(np.count_nonzero(self.labels == code))
                for code, name in LABEL_NAMES.items()}


def error_map(pred, gt, thresholds=DEFAULT_THRESHOLDS) -> ErrorMap:
    pred, gt = _same_shape(pred, gt)
    lp = levels(pred, thresholds).astype(np.int16)
    lg = levels(gt, thresholds).astype(np.int16)
    labels = np.full(lp.shape, HIT, dtype=np.uint8)
    labels[lp < lg] = MISS
    labels[lp > lg] = FALSE_ALARM
    return ErrorMap(labels)


def write_pgm(path, labels):
    """Binary PGM (P5), one byte per pixel, maxval 2."""
    labels = np.asarray(labels, dtype=np.uint8)
    if labels.ndim != 2:
        raise DimensionError(f"PGM raster must be 2-D, got {labels.shape}")
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n2\n".encode("ascii"))
        fh.write(labels.tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError("not a binary PGM file", offset=0)
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval > 255:
        raise FormatError(f"unsupported maxval {maxval}")
    body = raw[len(raw) - w * h:]
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()

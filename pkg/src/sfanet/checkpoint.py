"""Checkpoint directories: ``manifest.json`` plus a raw little-endian payload.

The manifest records the model config, the normalizer used in training,
and for every parameter its name, shape, dtype, byte offset and length.
Loading rebuilds the model from the config and validates every entry
against it before copying any bytes.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .data import Normalizer
from .errors import FormatError
from .model import ModelConfig, SfanetModel

FORMAT = "sfanet-checkpoint"
FORMAT_VERSION = 1
MANIFEST = "manifest.json"
PAYLOAD = "params.bin"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(model: SfanetModel, path, normalizer: Normalizer | None = None,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, p in model.state_dict().items():
        arr = p.detach().cpu().numpy()
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise FormatError(f"parameter {name} has unsupported dtype {dtype}")
        blob = arr.astype(_DTYPES[dtype]).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype,
                        "offset": offset, "nbytes": len(blob)})
        chunks.append(blob)
        offset += len(blob)
    manifest = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "byteorder": "little",
        "config": model.cfg.to_dict(),
        "normalizer": normalizer.to_dict() if normalizer else None,
        "payload": PAYLOAD,
        "payload_bytes": offset,
        "parameters": entries,
        "extra": extra or {},
    }
    (path / PAYLOAD).write_bytes(b"".join(chunks))
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except FileNotFoundError:
        raise FormatError(f"no {MANIFEST} in {path}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{MANIFEST} is not valid JSON: {exc.msg}", offset=exc.pos) from None
    if manifest.get("format") != FORMAT or manifest.get("version") != FORMAT_VERSION:
        raise FormatError(f"unrecognized checkpoint format {manifest.get('format')!r} "
                          f"version {manifest.get('version')!r}")
    return manifest


def load_checkpoint(path):
    """Return ``(model, normalizer, manifest)``."""
    path = Path(path)
    manifest = read_manifest(path)
    cfg = ModelConfig.from_dict(manifest["config"])
    model = SfanetModel(cfg)
    expected = model.state_dict()
    payload = (path / manifest.get("payload", PAYLOAD)).read_bytes()
    if len(payload) != manifest["payload_bytes"]:
        raise FormatError(f"payload has {len(payload)} bytes, manifest says "
                          f"{manifest['payload_bytes']}", offset=len(payload))
    entries = {e["name"]: e for e in manifest["parameters"]}
    missing = sorted(set(expected) - set(entries))
    unexpected = sorted(set(entries) - set(expected))
    if missing or unexpected:
        raise FormatError(f"parameter names differ from config: missing {missing}, "
                          f"unexpected {unexpected}")
    state = {}
    dtype = None
    for name, ref in expected.items():
        e = entries[name]
        if tuple(e["shape"]) != tuple(ref.shape):
            raise FormatError(f"{name}: shape {e['shape']} does not match config shape "
                              f"{list(ref.shape)}")
        if e["dtype"] not in _DTYPES:
            raise FormatError(f"{name}: unsupported dtype {e['dtype']}")
        start, n = e["offset"], e["nbytes"]
        count = int(np.prod(e["shape"], dtype=np.int64))
        if n != count * np.dtype(_DTYPES[e["dtype"]]).itemsize or start + n > len(payload):
            raise FormatError(f"{name}: byte range [{start}, {start + n}) inconsistent "
                              f"with shape/payload", offset=start)
        arr = np.frombuffer(payload, dtype=_DTYPES[e["dtype"]], count=count, offset=start)
        state[name] = torch.from_numpy(arr.reshape(e["shape"]).astype(e["dtype"]))
        dtype = e["dtype"]
    if dtype == "float64":
        model = model.double()
    model.load_state_dict(state)
    norm = manifest.get("normalizer")
    return model, (Normalizer.from_dict(norm) if norm else None), manifest

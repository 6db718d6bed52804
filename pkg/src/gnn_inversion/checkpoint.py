"""Model checkpoints: magic, JSON header, then little-endian float64 weights."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .gcn import GcnModel

MAGIC = b"GCNCKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_model(model: GcnModel, path) -> None:
    header = {
        "version": VERSION,
        "dtype": "<f8",
        "shapes": {"W0": list(model.W0.shape), "W1": list(model.W1.shape)},
        "penultimate": model.penultimate,
        "meta": model.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for w in (model.W0, model.W1):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_model(path) -> GcnModel:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint")
    off = len(MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    header = json.loads(raw[off:off + hlen])
    off += hlen
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    weights = {}
    for name in ("W0", "W1"):
        shape = tuple(header["shapes"][name])
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
        weights[name] = arr.astype(np.float64)
        off += 8 * count
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return GcnModel(weights["W0"], weights["W1"], header["penultimate"], header.get("meta", {}))

"""Binary helpers shared by dataset and model checkpoints.

Matrices go to disk as little-endian: u64 rows, u64 cols, then the f64
payload in row-major order. Parameter packs are a single file with a
length-prefixed JSON manifest followed by the raw f64 blocks it indexes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np


def write_matrix(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    if arr.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        fh.write(arr.astype("<f8").tobytes())


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    rows, cols = struct.unpack_from("<QQ", data, 0)
    arr = np.frombuffer(data, dtype="<f8", offset=16, count=rows * cols)
    return arr.reshape(rows, cols).astype(np.float64)


def write_param_pack(path, arrays: dict) -> None:
    """Write named float64 blocks: u64 manifest length, JSON manifest, data."""
    manifest = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.astype("<f8").tobytes()
        blobs.append(blob)
        offset += len(blob)
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def read_param_pack(path) -> dict:
    data = Path(path).read_bytes()
    (head_len,) = struct.unpack_from("<Q", data, 0)
    manifest = json.loads(data[8:8 + head_len].decode("utf-8"))
    base = 8 + head_len
    out = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", offset=base + entry["offset"], count=count)
        out[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return out


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())

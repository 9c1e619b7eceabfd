"""Binary serialization of named parameter sets.

File layout: 8-byte magic, uint32 LE version, uint64 LE manifest length,
UTF-8 JSON manifest (list of {"name", "shape"} in parameter order), then
all values as little-endian float32 in manifest order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import IoFailure
from .tensor import Tensor

MAGIC = b"LUNETKIT"
VERSION = 1


def save_params(path, params: dict) -> None:
    """Write an ordered name -> Tensor/array mapping to a model file."""
    manifest = [
        {"name": name, "shape": list(np.shape(t.data if isinstance(t, Tensor) else t))}
        for name, t in params.items()
    ]
    blob = json.dumps(manifest).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            for t in params.values():
                arr = np.asarray(t.data if isinstance(t, Tensor) else t, dtype="<f4")
                fh.write(arr.tobytes(order="C"))
    except OSError as exc:
        raise IoFailure(f"cannot write model file {path}: {exc}") from exc


def load_params(path) -> dict:
    """Read a model file back into an ordered name -> float32 array mapping."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read model file {path}: {exc}") from exc
    if raw[: len(MAGIC)] != MAGIC:
        raise IoFailure(f"{path} is not a model file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, len(MAGIC))
    if version != VERSION:
        raise IoFailure(f"unsupported model file version {version}")
    (blob_len,) = struct.unpack_from("<Q", raw, len(MAGIC) + 4)
    offset = len(MAGIC) + 12
    manifest = json.loads(raw[offset : offset + blob_len].decode("utf-8"))
    offset += blob_len
    params = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        params[entry["name"]] = arr.astype(np.float32)
        offset += 4 * count
    if offset != len(raw):
        raise IoFailure(f"{path} has {len(raw) - offset} trailing bytes")
    return params

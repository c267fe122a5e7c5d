"""Binary checkpoint serialization.

A checkpoint is a magic/version header, a JSON configuration blob, then a
flat list of named float32 arrays. Everything is little-endian; loading
restores exact bytes, so save/load round-trips are bit-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from genvc.errors import CheckpointError

_MAGIC = b"GVCK"
_VERSION = 1


def save_checkpoint(path: str, config: dict, params: dict[str, np.ndarray]) -> None:
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [_MAGIC, struct.pack("<I", _VERSION), struct.pack("<Q", len(blob)), blob,
             struct.pack("<Q", len(params))]
    for name, value in params.items():
        arr = np.asarray(value, dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"'{self.path}' is truncated")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as ex:
        raise CheckpointError(f"cannot read '{path}': {ex}") from ex
    r = _Reader(blob, path)
    if r.take(4) != _MAGIC:
        raise CheckpointError(f"'{path}' is not a checkpoint file")
    version = r.u32()
    if version != _VERSION:
        raise CheckpointError(f"'{path}' has unsupported version {version}")
    try:
        config = json.loads(r.take(r.u64()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as ex:
        raise CheckpointError(f"'{path}' has a corrupt config blob: {ex}") from ex
    params: dict[str, np.ndarray] = {}
    count = r.u64()
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        shape = tuple(r.u64() for _ in range(ndim))
        n_items = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(r.take(4 * n_items), dtype="<f4")
        params[name] = data.reshape(shape).copy()
    if r.pos != len(blob):
        raise CheckpointError(f"'{path}' has {len(blob) - r.pos} trailing bytes")
    return config, params

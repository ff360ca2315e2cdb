"""Binary checkpoint format.

Layout (little-endian): magic ``UCG1``, u32 version, u32 tensor count, then
per tensor u32 name length, UTF-8 name, u32 rank, u32 extents, float32 data.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"UCG1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name, value in tensors.items():
        arr = np.asarray(getattr(value, "data", value))
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        if arr.ndim:
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, view, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = take("<I")
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        name = bytes(view[pos : pos + n]).decode("utf-8")
        pos += n
        (rank,) = take("<I")
        shape = take(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        nbytes = 4 * size
        if pos + nbytes > len(view):
            raise CheckpointError("truncated checkpoint")
        arr = np.frombuffer(view[pos : pos + nbytes], dtype="<f4").reshape(shape).astype(np.float32)
        pos += nbytes
        out[name] = arr
    if pos != len(view):
        raise CheckpointError("trailing bytes after last tensor")
    return out


def save(path, tensors: dict):
    Path(path).write_bytes(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())

"""Flat binary serialization for grid fields (checkpoints).

Layout (all little-endian):

    bytes 0..3   magic  b"HYMF"
    u32          format version (1)
    u32          ndim
    u32 * ndim   shape (leading matrix axes included)
    u32          length of UTF-8 JSON metadata blob
    ...          metadata bytes
    ...          complex128 data, row-major

The grid shape is recorded in the metadata under "grid_shape" so readers
can split matrix axes from grid axes without guessing.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"HYMF"
VERSION = 1


class CheckpointError(IOError):
    pass


def write_field(path, array, meta=None):
    arr = np.ascontiguousarray(array, dtype=np.complex128)
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(arr.astype("<c16", copy=False).tobytes(order="C"))


def read_field(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a field checkpoint (bad magic)")
        version, ndim = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8")) if meta_len else {}
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(fh.read(16 * count), dtype="<c16", count=count)
        if data.size != count:
            raise CheckpointError(f"{path}: truncated data section")
    return data.reshape(shape).astype(np.complex128), meta

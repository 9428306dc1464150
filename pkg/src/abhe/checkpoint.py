"""Named-tensor container file.

Byte layout (all integers little-endian uint32, payload little-endian
float32):

    magic   5 bytes  b"ABHE1"
    entry*  repeated until EOF, each:
        name_len  u32
        name      name_len bytes, utf-8
        rank      u32
        extents   rank x u32
        payload   prod(extents) x f32

Entries are written in sorted-name order so identical dictionaries
produce identical files.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ABHE1"


class ContainerError(IOError):
    """Corrupt or truncated container file."""


def save_arrays(path, arrays: dict) -> None:
    """Write a name -> ndarray mapping (cast to f32) to ``path``."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_arrays(path) -> dict:
    """Read a container written by :func:`save_arrays`."""
    path = Path(path)
    if not path.exists():
        raise ContainerError(f"container file not found: {path}")
    data = path.read_bytes()
    if data[:5] != MAGIC:
        raise ContainerError(f"{path}: bad magic {data[:5]!r}, expected {MAGIC!r}")
    arrays = {}
    off = 5
    total = len(data)
    while off < total:
        try:
            (name_len,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off:off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<I", data, off)
            off += 4
            extents = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            count = int(np.prod(extents)) if rank else 1
            payload = np.frombuffer(data, dtype="<f4", count=count, offset=off)
            off += 4 * count
        except (struct.error, ValueError) as e:
            raise ContainerError(f"{path}: truncated entry at byte {off}") from e
        if off > total:
            raise ContainerError(f"{path}: payload for {name!r} runs past EOF")
        arrays[name] = payload.reshape(extents).copy()
    return arrays

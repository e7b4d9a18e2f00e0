"""Binary checkpoint format for named float32 arrays.

Layout: magic ``DVGW``, format version u32, then one record per array:
name length u32, name bytes (utf-8), rank u32, one u32 extent per axis,
raw little-endian float32 data. All integers little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DVGW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, state):
    """Write an ordered {name: array} mapping."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, arr in state.items():
            nb = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            if arr.ndim:
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Read back a {name: float32 array} mapping, validating the framing."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    state = {}
    off = 8
    total = len(blob)

    def take(n, what):
        nonlocal off
        if off + n > total:
            raise CheckpointError(f"{path}: truncated while reading {what}")
        piece = blob[off : off + n]
        off += n
        return piece

    while off < total:
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "extents")) if rank else ()
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * count, f"data of {name}"), dtype="<f4")
        state[name] = data.reshape(shape).copy()
    if off != total:
        raise CheckpointError(f"{path}: trailing bytes after last record")
    return state

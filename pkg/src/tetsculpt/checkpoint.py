"""Binary checkpoint format for named float32 tensors.

Layout (little endian): magic "TSCK", version u32, then per tensor a
(name-length u32, utf-8 name, rank u32, extents u32 each, raw f32 payload)
record until end of file. Writes go through a temp file + rename so a
checkpoint on disk is always complete.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"TSCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(path, tensors):
    """Write an ordered {name: array} mapping. Order is preserved on load."""
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            for e in arr.shape:
                f.write(struct.pack("<I", e))
            f.write(arr.tobytes())
    os.replace(tmp, path)


def load(path):
    """Read a checkpoint back into an ordered {name: float32 array} dict."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    out = {}
    ofs = 8
    n = len(data)
    while ofs < n:
        if ofs + 4 > n:
            raise CheckpointError(f"{path}: truncated record header")
        (nlen,) = struct.unpack_from("<I", data, ofs)
        ofs += 4
        name = data[ofs:ofs + nlen].decode("utf-8")
        ofs += nlen
        (rank,) = struct.unpack_from("<I", data, ofs)
        ofs += 4
        shape = struct.unpack_from(f"<{rank}I", data, ofs)
        ofs += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        nbytes = 4 * count
        if ofs + nbytes > n:
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=ofs)
        out[name] = arr.reshape(shape).copy()
        ofs += nbytes
    return out

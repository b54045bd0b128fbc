"""Flat named-array checkpoints.

Layout (little-endian)::

    b"TGCK"  uint32 version  uint32 count
    count x [ uint32 name_len, UTF-8 name, uint32 ndim, ndim x uint64 extent,
              prod(extent) x float64 ]

Values are stored as float64, so float64 state round-trips bit-exactly.
"""

import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TGCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(arrays)))
    for name, value in arrays.items():
        value = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", value.ndim))
        buf.write(struct.pack(f"<{value.ndim}Q", *value.shape))
        buf.write(np.ascontiguousarray(value).tobytes())
    return buf.getvalue()


def loads(blob):
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos, out = 12, {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", view, pos)
            pos += 4
            name = bytes(view[pos:pos + name_len]).decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<I", view, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", view, pos)
            pos += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(view):
                raise CheckpointError(f"truncated payload for '{name}'")
            out[name] = np.frombuffer(view, dtype="<f8", count=size, offset=pos) \
                .reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after the last entry")
    return out


def save(path, arrays):
    Path(path).write_bytes(dumps(arrays))


def load(path):
    return loads(Path(path).read_bytes())


def save_module(path, module):
    save(path, module.state_dict())


def load_module(path, module):
    module.load_state_dict(load(path))
    return module

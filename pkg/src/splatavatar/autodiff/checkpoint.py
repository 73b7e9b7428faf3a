"""Binary parameter container.

Layout (all integers little-endian)::

    magic      8 bytes  b"SAVCKPT\\0"
    version    u32      currently 1
    count      u32      number of entries
    entry * count:
        name_len  u16
        name      name_len bytes, UTF-8
        dtype     u8     0=float32 1=float64 2=int32 3=int64 4=uint8
        ndim      u8
        shape     u32 * ndim
        data      prod(shape) * itemsize bytes, little-endian, row-major

Entries are written in sorted name order so identical states give
identical files.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SAVCKPT\0"
VERSION = 1
_DTYPES = [np.dtype("<f4"), np.dtype("<f8"), np.dtype("<i4"), np.dtype("<i8"), np.dtype("u1")]
_CODES = {dt: i for i, dt in enumerate(_DTYPES)}


class CheckpointError(ValueError):
    pass


def dumps(state: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(state)))
    for name in sorted(state):
        arr = np.asarray(state[name])
        dt = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
        if dt not in _CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for '{name}'")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", _CODES[dt], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> dict[str, np.ndarray]:
    try:
        return _parse(memoryview(blob))
    except CheckpointError:
        raise
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint: {e}") from None


def _parse(view) -> dict[str, np.ndarray]:
    if bytes(view[:8]) != MAGIC:
        raise CheckpointError("bad magic; not a parameter checkpoint")
    version, count = struct.unpack_from("<II", view, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos : pos + nlen]).decode("utf-8")
        pos += nlen
        code, ndim = struct.unpack_from("<BB", view, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", view, pos)
        pos += 4 * ndim
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if pos + nbytes > len(view):
            raise CheckpointError("truncated checkpoint")
        state[name] = np.frombuffer(view[pos : pos + nbytes], dtype=dt).reshape(shape).copy()
        pos += nbytes
    if pos != len(view):
        raise CheckpointError("trailing bytes after last entry")
    return state


def save(path, state: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(state))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())

"""SANAS1 binary container for named float64 tensors.

Layout (all integers little-endian uint64)::

    b"SANAS1"
    count
    repeated count times:
        name_len, name (UTF-8 bytes)
        rank, dims[rank]
        data: prod(dims) little-endian IEEE-754 float64 values, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError

MAGIC = b"SANAS1"
_U64 = struct.Struct("<Q")


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, _U64.pack(len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        parts.append(_U64.pack(len(raw)))
        parts.append(raw)
        parts.append(_U64.pack(arr.ndim))
        parts.extend(_U64.pack(d) for d in arr.shape)
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[: len(MAGIC)] != MAGIC:
        raise FormatError("not a SANAS1 checkpoint (bad magic)")
    pos = len(MAGIC)

    def u64() -> int:
        nonlocal pos
        if pos + 8 > len(buf):
            raise FormatError("truncated SANAS1 checkpoint")
        (v,) = _U64.unpack_from(buf, pos)
        pos += 8
        return v

    out: dict[str, np.ndarray] = {}
    for _ in range(u64()):
        n = u64()
        name = buf[pos: pos + n].decode("utf-8")
        pos += n
        dims = tuple(u64() for _ in range(u64()))
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        end = pos + 8 * count
        if end > len(buf):
            raise FormatError(f"truncated data for tensor {name!r}")
        out[name] = np.frombuffer(buf[pos:end], dtype="<f8").astype(np.float64).reshape(dims)
        pos = end
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last tensor")
    return out


def save(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())

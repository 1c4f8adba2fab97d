"""Binary serialization of named float64 tensors.

Layout (all integers little-endian):

    magic   4 bytes  b"GTEE"
    version u32      1
    count   u32      number of tensors
    then per tensor, sorted by name:
      name_len u32, name UTF-8 bytes,
      ndim u32, dims ndim x u64,
      dtype u8 (0 = float64),
      data   raw little-endian float64, C order

Sorting by name makes the byte stream a canonical function of the
mapping, so equal parameter sets serialize to equal bytes.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"GTEE"
VERSION = 1
_DTYPE_F64 = 0


def tensors_bytes(tensors: dict[str, np.ndarray]) -> bytes:
    """Serialize a name -> array mapping to the canonical byte stream."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        parts.append(struct.pack("<B", _DTYPE_F64))
        parts.append(arr.astype("<f8").tobytes(order="C"))
    return b"".join(parts)


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(tensors_bytes(tensors))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ValueError("tensor file truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise ValueError("not a tensor file: bad magic")
    version = r.u32()
    if version != VERSION:
        raise ValueError(f"unsupported tensor file version {version}")
    count = r.u32()
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        shape = tuple(r.u64() for _ in range(ndim))
        dtype = r.u8()
        if dtype != _DTYPE_F64:
            raise ValueError(f"unsupported dtype tag {dtype} for tensor {name!r}")
        n = 1
        for d in shape:
            n *= d
        arr = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
        out[name] = arr
    if r.pos != len(buf):
        raise ValueError("trailing bytes after last tensor")
    return out

"""Little-endian binary helpers used by the model file formats.

All formats share the same trailer convention: the last 8 bytes of a file
are the first 8 bytes of the SHA-256 of everything before them.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import FileFormatError


def content_hash(*chunks: bytes) -> bytes:
    h = hashlib.sha256()
    for c in chunks:
        h.update(c)
    return h.digest()[:8]


class Writer:
    def __init__(self, magic: bytes):
        self._parts: list[bytes] = [magic]

    def u8(self, v: int) -> None:
        self._parts.append(struct.pack("<B", v))

    def u32(self, v: int) -> None:
        self._parts.append(struct.pack("<I", v))

    def u64(self, v: int) -> None:
        self._parts.append(struct.pack("<Q", v))

    def f64(self, v: float) -> None:
        self._parts.append(struct.pack("<d", v))

    def raw(self, b: bytes) -> None:
        self._parts.append(b)

    def string(self, s: str) -> None:
        b = s.encode("utf-8")
        self.u32(len(b))
        self._parts.append(b)

    def array(self, a: np.ndarray, dtype: str) -> None:
        self._parts.append(np.ascontiguousarray(a, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())

    def finish(self, with_hash: bool = True) -> bytes:
        body = b"".join(self._parts)
        return body + content_hash(body) if with_hash else body


class Reader:
    def __init__(self, data: bytes, magic: bytes, *, hashed: bool = True, what: str = "file"):
        if not data.startswith(magic):
            raise FileFormatError(f"{what}: bad magic, expected {magic!r}")
        if hashed:
            if len(data) < len(magic) + 8:
                raise FileFormatError(f"{what}: truncated")
            body, trailer = data[:-8], data[-8:]
            if content_hash(body) != trailer:
                raise FileFormatError(f"{what}: content hash mismatch")
            data = body
        self._data = data
        self._pos = len(magic)
        self._what = what

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise FileFormatError(f"{self._what}: truncated")
        b = self._data[self._pos:self._pos + n]
        self._pos += n
        return b

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def string(self) -> str:
        n = self.u32()
        return self._take(n).decode("utf-8")

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self._take(dt.itemsize * count), dtype=dt).astype(np.dtype(dtype).newbyteorder("="))

    def done(self) -> None:
        if self._pos != len(self._data):
            raise FileFormatError(f"{self._what}: {len(self._data) - self._pos} trailing bytes")


def read_bytes(path: str | Path) -> bytes:
    return Path(path).read_bytes()

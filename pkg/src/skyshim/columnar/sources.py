"""Seekable byte sources the reader runs over.

A source needs ``size()``, ``seek(pos)`` and ``read(n)``; the storage-side
filesystem shim implements the same three calls over an object handle.
"""

from __future__ import annotations

from typing import Protocol


class ByteSource(Protocol):
    def size(self) -> int: ...

    def seek(self, pos: int) -> None: ...

    def read(self, n: int) -> bytes: ...


class BytesSource:
    """In-memory source over a bytes-like object."""

    def __init__(self, data) -> None:
        self._data = memoryview(data)
        self._pos = 0

    def size(self) -> int:
        return len(self._data)

    def seek(self, pos: int) -> None:
        if not 0 <= pos <= len(self._data):
            raise ValueError(f"seek to {pos} outside [0, {len(self._data)}]")
        self._pos = pos

    def tell(self) -> int:
        return self._pos

    def read(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise ValueError(f"read of {n} bytes at {self._pos} past end {len(self._data)}")
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out


class AccessLog:
    """Wraps a source and records every ``(offset, length)`` read and size probe."""

    def __init__(self, inner: ByteSource) -> None:
        self.inner = inner
        self.reads: list[tuple[int, int]] = []
        self.size_calls = 0
        self._pos = 0

    def size(self) -> int:
        self.size_calls += 1
        return self.inner.size()

    def seek(self, pos: int) -> None:
        self.inner.seek(pos)
        self._pos = pos

    def read(self, n: int) -> bytes:
        self.reads.append((self._pos, n))
        out = self.inner.read(n)
        self._pos += n
        return out

    @property
    def access_count(self) -> int:
        return self.size_calls + len(self.reads)

    def bytes_read(self) -> int:
        return sum(n for _, n in self.reads)

    def touched(self) -> set[tuple[int, int]]:
        return set(self.reads)

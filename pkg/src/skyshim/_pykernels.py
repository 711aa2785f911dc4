"""Pure-Python/numpy implementations of the hot kernels.

Same signatures as the compiled ``_ckernels`` module; used when the extension
is not built or when ``SKYSHIM_PURE=1``.
"""

from __future__ import annotations

import operator

import numpy as np

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

# op codes match expr.CmpOp values
_OPS = (operator.eq, operator.ne, operator.lt, operator.le, operator.gt, operator.ge)


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def mix64(x: int) -> int:
    # splitmix64 finalizer
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def utf8_compare(offsets: np.ndarray, data, literal: bytes, op: int) -> np.ndarray:
    n = len(offsets) - 1
    out = np.zeros(n, dtype=bool)
    buf = bytes(data)
    fn = _OPS[op]
    offs = offsets.tolist()
    for i in range(n):
        out[i] = fn(buf[offs[i]:offs[i + 1]], literal)
    return out


def utf8_minmax(offsets: np.ndarray, data, mask: np.ndarray | None):
    """Byte-lexicographic (min, max) over rows where ``mask`` is set, or None."""
    n = len(offsets) - 1
    buf = bytes(data)
    offs = offsets.tolist()
    rows = range(n) if mask is None else np.flatnonzero(mask).tolist()
    lo = hi = None
    for i in rows:
        v = buf[offs[i]:offs[i + 1]]
        if lo is None:
            lo = hi = v
        elif v < lo:
            lo = v
        elif v > hi:
            hi = v
    if lo is None:
        return None
    return lo, hi


def utf8_take(offsets: np.ndarray, data, indices: np.ndarray):
    data = np.frombuffer(data, dtype=np.uint8) if not isinstance(data, np.ndarray) else data
    starts = offsets[:-1][indices]
    lengths = offsets[1:][indices] - starts
    new_offsets = np.zeros(len(indices) + 1, dtype=np.int64)
    np.cumsum(lengths, out=new_offsets[1:])
    total = int(new_offsets[-1])
    if total == 0:
        return new_offsets, np.zeros(0, dtype=np.uint8)
    gather = np.repeat(starts - new_offsets[:-1], lengths) + np.arange(total, dtype=np.int64)
    return new_offsets, data[gather]

"""Kernel selection: the compiled extension when available, numpy/Python otherwise.

Set ``SKYSHIM_PURE=1`` to force the fallback (the test-suite runs both).
"""

from __future__ import annotations

import os

from skyshim import _pykernels

if os.environ.get("SKYSHIM_PURE") == "1":
    impl = _pykernels
else:
    try:
        from skyshim import _ckernels as impl  # type: ignore[attr-defined]
    except ImportError:
        impl = _pykernels

BACKEND = "compiled" if impl is not _pykernels else "python"


def available_backends() -> dict:
    out = {"python": _pykernels}
    try:
        from skyshim import _ckernels  # type: ignore[attr-defined]

        out["compiled"] = _ckernels
    except ImportError:
        pass
    return out


def fnv1a64(data: bytes) -> int:
    return impl.fnv1a64(data)


def mix64(x: int) -> int:
    return impl.mix64(x)


def utf8_compare(offsets, data, literal: bytes, op: int):
    return impl.utf8_compare(offsets, data, literal, op)


def utf8_minmax(offsets, data, mask):
    return impl.utf8_minmax(offsets, data, mask)


def utf8_take(offsets, data, indices):
    return impl.utf8_take(offsets, data, indices)

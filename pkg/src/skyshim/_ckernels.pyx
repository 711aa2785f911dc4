# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Signatures mirror skyshim._pykernels."""

from libc.stdint cimport int64_t, uint64_t, uint8_t
from libc.string cimport memcmp, memcpy

import numpy as np

cdef uint64_t _FNV_OFFSET = 0xCBF29CE484222325ULL
cdef uint64_t _FNV_PRIME = 0x100000001B3ULL


def fnv1a64(const uint8_t[:] data):
    cdef uint64_t h = _FNV_OFFSET
    cdef Py_ssize_t i
    for i in range(data.shape[0]):
        h = (h ^ data[i]) * _FNV_PRIME
    return h


def mix64(x):
    cdef uint64_t z = <uint64_t>(x & 0xFFFFFFFFFFFFFFFF)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline int _cmp_bytes(const uint8_t* a, Py_ssize_t la, const uint8_t* b, Py_ssize_t lb) nogil:
    cdef Py_ssize_t m = la if la < lb else lb
    cdef int c = 0
    if m > 0:
        c = memcmp(a, b, m)
    if c != 0:
        return c
    if la < lb:
        return -1
    if la > lb:
        return 1
    return 0


def utf8_compare(const int64_t[:] offsets, const uint8_t[:] data, bytes literal, int op):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    out = np.zeros(n, dtype=np.bool_)
    cdef uint8_t[:] res = out.view(np.uint8)
    cdef const uint8_t* lit = literal
    cdef Py_ssize_t llen = len(literal)
    cdef const uint8_t* base
    cdef Py_ssize_t i
    cdef int c
    cdef uint8_t dummy = 0
    base = &data[0] if data.shape[0] > 0 else &dummy
    with nogil:
        for i in range(n):
            c = _cmp_bytes(base + offsets[i], offsets[i + 1] - offsets[i], lit, llen)
            if op == 0:
                res[i] = c == 0
            elif op == 1:
                res[i] = c != 0
            elif op == 2:
                res[i] = c < 0
            elif op == 3:
                res[i] = c <= 0
            elif op == 4:
                res[i] = c > 0
            else:
                res[i] = c >= 0
    return out


def utf8_minmax(const int64_t[:] offsets, const uint8_t[:] data, mask):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef const uint8_t[:] m
    cdef bint use_mask = mask is not None
    if use_mask:
        m = np.ascontiguousarray(mask).view(np.uint8)
    cdef uint8_t dummy = 0
    cdef const uint8_t* base = &data[0] if data.shape[0] > 0 else &dummy
    cdef Py_ssize_t i, lo = -1, hi = -1
    for i in range(n):
        if use_mask and not m[i]:
            continue
        if lo < 0:
            lo = i
            hi = i
            continue
        if _cmp_bytes(base + offsets[i], offsets[i + 1] - offsets[i],
                      base + offsets[lo], offsets[lo + 1] - offsets[lo]) < 0:
            lo = i
        elif _cmp_bytes(base + offsets[i], offsets[i + 1] - offsets[i],
                        base + offsets[hi], offsets[hi + 1] - offsets[hi]) > 0:
            hi = i
    if lo < 0:
        return None
    raw = bytes(data)
    return raw[offsets[lo]:offsets[lo + 1]], raw[offsets[hi]:offsets[hi + 1]]


def utf8_take(const int64_t[:] offsets, const uint8_t[:] data, const int64_t[:] indices):
    cdef Py_ssize_t k = indices.shape[0]
    cdef Py_ssize_t i, j
    out_off = np.zeros(k + 1, dtype=np.int64)
    cdef int64_t[:] oo = out_off
    cdef int64_t total = 0
    for i in range(k):
        j = indices[i]
        total += offsets[j + 1] - offsets[j]
        oo[i + 1] = total
    out_data = np.empty(total, dtype=np.uint8)
    if total == 0:
        return out_off, out_data
    cdef uint8_t[:] od = out_data
    cdef int64_t ln
    with nogil:
        for i in range(k):
            j = indices[i]
            ln = offsets[j + 1] - offsets[j]
            if ln > 0:
                memcpy(&od[oo[i]], &data[offsets[j]], ln)
    return out_off, out_data

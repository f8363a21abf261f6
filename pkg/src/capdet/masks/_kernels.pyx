# cython: language_level=3
# cython: boundscheck=False
# cython: wraparound=False
"""Compiled run-length kernels: the hot path for batch mask scoring.

Mirrors the contract of ``capdet.masks._kernels_py``. Counts must already
satisfy the RLE invariants (callers validate); bounds checks are compiled
out here.
"""

import numpy as np

from libc.stdlib cimport free, malloc, qsort

ctypedef long long i64


cdef int _cmp_intervals(const void* a, const void* b) noexcept nogil:
    cdef const i64* x = <const i64*> a
    cdef const i64* y = <const i64*> b
    if x[0] < y[0]:
        return -1
    if x[0] > y[0]:
        return 1
    if x[1] < y[1]:
        return -1
    if x[1] > y[1]:
        return 1
    return 0


def decode_runs(counts, Py_ssize_t n_pixels):
    out = np.zeros(n_pixels, dtype=np.uint8)
    cdef unsigned char[::1] view = out
    cdef Py_ssize_t i, j, pos = 0, run
    cdef bint fg = 0
    for i in range(len(counts)):
        run = counts[i]
        if fg:
            for j in range(pos, pos + run):
                view[j] = 1
        pos += run
        fg = not fg
    return out


def encode_runs(flat):
    arr = np.ascontiguousarray(flat, dtype=np.uint8)
    cdef const unsigned char[::1] v = arr
    cdef Py_ssize_t n = v.shape[0]
    if n == 0:
        return [0]
    runs = []
    cdef unsigned char cur = v[0]
    cdef Py_ssize_t i, run = 1
    if cur:
        runs.append(0)
    for i in range(1, n):
        if v[i] == cur:
            run += 1
        else:
            runs.append(run)
            cur = v[i]
            run = 1
    runs.append(run)
    return runs


def union_area_runs(runs_seq):
    cdef Py_ssize_t total = 0
    for counts in runs_seq:
        total += len(counts) // 2
    if total == 0:
        return 0

    cdef i64* iv = <i64*> malloc(2 * total * sizeof(i64))
    if iv == NULL:
        raise MemoryError()
    cdef Py_ssize_t i, k = 0
    cdef i64 pos, run, area, cur_start, cur_end, s, e
    cdef bint fg
    try:
        for counts in runs_seq:
            pos = 0
            fg = 0
            for i in range(len(counts)):
                run = counts[i]
                if fg and run > 0:
                    iv[2 * k] = pos
                    iv[2 * k + 1] = pos + run
                    k += 1
                pos += run
                fg = not fg
        if k == 0:
            return 0
        qsort(iv, k, 2 * sizeof(i64), _cmp_intervals)
        area = 0
        cur_start = iv[0]
        cur_end = iv[1]
        for i in range(1, k):
            s = iv[2 * i]
            e = iv[2 * i + 1]
            if s > cur_end:
                area += cur_end - cur_start
                cur_start = s
                cur_end = e
            elif e > cur_end:
                cur_end = e
        area += cur_end - cur_start
        return area
    finally:
        free(iv)

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Semantics are defined by :mod:`graphcf._pykernels`."""

import numpy as np

from libc.stdint cimport int64_t


def scatter_add_rows(double[:, ::1] table, const int64_t[::1] idx,
                     const double[:, ::1] vals, double scale):
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t d = table.shape[1]
    cdef Py_ssize_t rows = table.shape[0]
    cdef Py_ssize_t r, c
    cdef int64_t row
    if vals.shape[0] != n or vals.shape[1] != d:
        raise ValueError("vals shape does not match (len(idx), table width)")
    for r in range(n):
        if idx[r] < 0 or idx[r] >= rows:
            raise IndexError(f"row index {idx[r]} out of range for table with {rows} rows")
    with nogil:
        for r in range(n):
            row = idx[r]
            for c in range(d):
                table[row, c] += scale * vals[r, c]


cdef inline bint _better(double sa, int64_t ia, double sb, int64_t ib) noexcept nogil:
    return sa > sb or (sa == sb and ia < ib)


def topk_csr(const int64_t[::1] indptr, const int64_t[::1] ids,
             const double[::1] scores, Py_ssize_t k, int64_t pad):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    out_arr = np.full((n, k), pad, dtype=np.int64)
    cdef int64_t[:, ::1] out = out_arr
    buf_s_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] buf_s = buf_s_arr
    cdef Py_ssize_t e, start, stop, j, filled, pos
    cdef double s
    cdef int64_t v
    if k < 1:
        raise ValueError("k must be >= 1")
    with nogil:
        for e in range(n):
            start = indptr[e]
            stop = indptr[e + 1]
            filled = 0
            for j in range(start, stop):
                s = scores[j]
                v = ids[j]
                if filled == k and not _better(s, v, buf_s[k - 1], out[e, k - 1]):
                    continue
                pos = filled if filled < k else k - 1
                while pos > 0 and _better(s, v, buf_s[pos - 1], out[e, pos - 1]):
                    if pos < k:
                        buf_s[pos] = buf_s[pos - 1]
                        out[e, pos] = out[e, pos - 1]
                    pos -= 1
                buf_s[pos] = s
                out[e, pos] = v
                if filled < k:
                    filled += 1
    return out_arr

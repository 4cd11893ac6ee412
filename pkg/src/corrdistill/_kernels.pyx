# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops.

Summation always runs left to right over the reduced axis so results are
bit-identical to the numpy fallback in ``_kernels_py``.
"""
import numpy as np

cimport cython


def matmul(const double[:, :] a, const double[:, :] b):
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], p = b.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double aik
    if b.shape[0] != m:
        raise ValueError("inner dimensions differ")
    out = np.zeros((n, p), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        for k in range(m):
            aik = a[i, k]
            for j in range(p):
                o[i, j] = o[i, j] + aik * b[k, j]
    return out


def row_sums(const double[:, :] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    cdef Py_ssize_t i, k
    cdef double acc
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        acc = 0.0
        for k in range(m):
            acc = acc + x[i, k]
        o[i] = acc
    return out

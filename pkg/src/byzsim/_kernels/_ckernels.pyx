# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled aggregation kernels.

Same signatures and semantics as ``_fallback`` for the distance-based
kernels; reductions over workers are plain loops in ascending row order.
Order statistics are left to numpy.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdlib cimport malloc, free
from libcpp.algorithm cimport sort

cnp.import_array()


def column_mean(const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], i, j
    out = np.zeros(d)
    cdef double[::1] acc = out
    for i in range(n):
        for j in range(d):
            acc[j] += X[i, j]
    for j in range(d):
        acc[j] /= n
    return out


def pairwise_sq_dists(const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], i, k, j
    cdef double acc, diff
    out = np.zeros((n, n))
    cdef double[:, ::1] D = out
    for i in range(n):
        for k in range(i + 1, n):
            acc = 0.0
            for j in range(d):
                diff = X[i, j] - X[k, j]
                acc += diff * diff
            D[i, k] = acc
            D[k, i] = acc
    return out


def krum_scores(const double[:, ::1] X, Py_ssize_t m):
    cdef Py_ssize_t n = X.shape[0], i, k, c
    cdef double acc
    cdef double[:, ::1] D = pairwise_sq_dists(X)
    out = np.empty(n)
    cdef double[::1] scores = out
    cdef double* row = <double*>malloc(n * sizeof(double))
    if row == NULL:
        raise MemoryError()
    try:
        for i in range(n):
            c = 0
            for k in range(n):
                if k != i:
                    row[c] = D[i, k]
                    c += 1
            sort(row, row + c)
            acc = 0.0
            for k in range(m):
                acc += row[k]
            scores[i] = acc
    finally:
        free(row)
    return out


def weiszfeld(const double[:, ::1] X, int iters, double smoothing):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], i, j
    cdef int it
    cdef double dist, diff, w, wsum
    out = column_mean(X)
    cdef double[::1] v = out
    cdef double[::1] acc = np.empty(d)
    for it in range(iters):
        for j in range(d):
            acc[j] = 0.0
        wsum = 0.0
        for i in range(n):
            dist = 0.0
            for j in range(d):
                diff = X[i, j] - v[j]
                dist += diff * diff
            dist = sqrt(dist)
            w = 1.0 / (dist if dist > smoothing else smoothing)
            wsum += w
            for j in range(d):
                acc[j] += X[i, j] * w
        for j in range(d):
            v[j] = acc[j] / wsum
    return out


def centered_clip(const double[:, ::1] X, v0, double tau, int iters):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], i, j
    cdef int it
    cdef double dist, diff, scale
    out = np.array(v0, dtype=np.float64, copy=True)
    cdef double[::1] v = out
    cdef double[::1] acc = np.empty(d)
    for it in range(iters):
        for j in range(d):
            acc[j] = 0.0
        for i in range(n):
            dist = 0.0
            for j in range(d):
                diff = X[i, j] - v[j]
                dist += diff * diff
            dist = sqrt(dist)
            scale = tau / dist if dist > tau else 1.0
            for j in range(d):
                acc[j] += (X[i, j] - v[j]) * scale
        for j in range(d):
            v[j] = v[j] + acc[j] / n
    return out

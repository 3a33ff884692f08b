# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels.

Must stay numerically in lockstep with ``_kernels_py``: distances accumulate
over channels in ascending order in float64 (the extension is compiled with
-ffp-contract=off so no FMA reassociation sneaks in), kernel sums accumulate
over reference index ascending. Metric codes: 0 = L1, 1 = L2.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt

cnp.import_array()

cdef double SQRT_2PI = 2.5066282746310002


def cross_distances(const double[:, ::1] x, const double[:, ::1] ref, int metric):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], nref = ref.shape[0]
    cdef Py_ssize_t i, j, ch
    cdef double acc, d
    out = np.empty((n, nref), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        if metric == 0:
            for i in range(n):
                for j in range(nref):
                    acc = 0.0
                    for ch in range(c):
                        acc += fabs(x[i, ch] - ref[j, ch])
                    o[i, j] = acc
        else:
            for i in range(n):
                for j in range(nref):
                    acc = 0.0
                    for ch in range(c):
                        d = x[i, ch] - ref[j, ch]
                        acc += d * d
                    o[i, j] = sqrt(acc)
    return out


def pairwise_distances(const double[:, ::1] ref, int metric):
    # Distances are symmetric bit-exactly (channel accumulation order does not
    # depend on operand order), so compute the upper triangle and mirror.
    cdef Py_ssize_t n = ref.shape[0], c = ref.shape[1]
    cdef Py_ssize_t i, j, ch
    cdef double acc, d
    out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        if metric == 0:
            for i in range(n):
                for j in range(i + 1, n):
                    acc = 0.0
                    for ch in range(c):
                        acc += fabs(ref[i, ch] - ref[j, ch])
                    o[i, j] = acc
                    o[j, i] = acc
        else:
            for i in range(n):
                for j in range(i + 1, n):
                    acc = 0.0
                    for ch in range(c):
                        d = ref[i, ch] - ref[j, ch]
                        acc += d * d
                    acc = sqrt(acc)
                    o[i, j] = acc
                    o[j, i] = acc
    return out


def kde_kernel_sums(const double[:, ::1] dists, const double[::1] sigmas, const cnp.int64_t[::1] exclude):
    cdef Py_ssize_t n = dists.shape[0], nref = dists.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc, t, s
    cdef cnp.int64_t excl
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            excl = exclude[i]
            acc = 0.0
            for j in range(nref):
                if j == excl:
                    continue
                s = sigmas[j]
                t = dists[i, j] / s
                acc += exp(-0.5 * (t * t)) / (s * SQRT_2PI)
            o[i] = acc
    return out


def fnv1a64(const unsigned char[::1] data):
    cdef unsigned long long h = 0xCBF29CE484222325ULL
    cdef Py_ssize_t i
    with nogil:
        for i in range(data.shape[0]):
            h = (h ^ <unsigned long long>data[i]) * 0x100000001B3ULL
    return h

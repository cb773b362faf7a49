# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled oracle-field reduction kernel (hot path).

Mirrors ``_kernels_np.oracle_reduce`` exactly; see that module for the
contract and the note on centered accumulation.  One fused sweep per query
avoids the [n x K] temporaries of the numpy backend.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

BACKEND = "cython"


def oracle_reduce(points, queries, double alpha, double beta, double log_drop=40.0):
    pts = np.ascontiguousarray(points, dtype=np.float64)
    qs = np.ascontiguousarray(queries, dtype=np.float64)
    cdef const double[:, ::1] p = pts
    cdef const double[:, ::1] x = qs
    cdef Py_ssize_t n = qs.shape[0]
    cdef Py_ssize_t k = pts.shape[0]
    cdef Py_ssize_t d = qs.shape[1]

    m1_arr = np.empty((n, d))
    sq_arr = np.empty(n)
    c_arr = np.empty(n)
    logw_arr = np.empty(k)
    delta_arr = np.empty(d)
    cdef double[:, ::1] m1 = m1_arr
    cdef double[::1] sq = sq_arr
    cdef double[::1] c = c_arr
    cdef double[::1] logw = logw_arr
    cdef double[::1] delta = delta_arr

    cdef double inv2b2 = 1.0 / (2.0 * beta * beta)
    cdef Py_ssize_t i, j, r, jstar
    cdef double best, z, w, diff, acc, dot

    with nogil:
        for i in range(n):
            best = -1e300
            jstar = 0
            for j in range(k):
                acc = 0.0
                for r in range(d):
                    diff = x[i, r] - alpha * p[j, r]
                    acc += diff * diff
                acc = -acc * inv2b2
                logw[j] = acc
                if acc > best:
                    best = acc
                    jstar = j

            # Weights plus the mean offset delta = sum w (p_j - p_jstar),
            # accumulated relative to the heaviest point for stability.
            z = 0.0
            for r in range(d):
                delta[r] = 0.0
            for j in range(k):
                acc = logw[j] - best
                if acc >= -log_drop:
                    w = exp(acc)
                else:
                    w = 0.0
                logw[j] = w
                z += w
                for r in range(d):
                    delta[r] += w * (p[j, r] - p[jstar, r])
            for r in range(d):
                delta[r] /= z
                m1[i, r] = p[jstar, r] + delta[r]

            sq[i] = 0.0
            c[i] = 0.0
            for j in range(k):
                w = logw[j] / z
                acc = 0.0
                dot = 0.0
                for r in range(d):
                    diff = (p[j, r] - p[jstar, r]) - delta[r]
                    acc += diff * diff
                    dot += (alpha * p[j, r] - x[i, r]) * diff
                sq[i] += w * acc
                c[i] += w * dot
    return m1_arr, sq_arr, c_arr

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled diagonal-Gaussian mixture kernels.

Mirrors gmvae._kernels_py; see gmvae.kernels for the dispatching API.
"""

import numpy as np

from libc.math cimport exp, log, INFINITY

cdef double LOG_2PI = 1.8378770664093453


def component_logpdf(const double[:, ::1] points, const double[:, ::1] means, const double[:, ::1] variances):
    cdef Py_ssize_t n = points.shape[0], k = means.shape[0], d = points.shape[1]
    cdef Py_ssize_t i, j, t
    out_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] inv = np.empty((k, d), dtype=np.float64)
    cdef double[::1] norm = np.empty(k, dtype=np.float64)
    cdef double acc, diff
    with nogil:
        for j in range(k):
            acc = -0.5 * d * LOG_2PI
            for t in range(d):
                inv[j, t] = 1.0 / variances[j, t]
                acc -= 0.5 * log(variances[j, t])
            norm[j] = acc
        for i in range(n):
            for j in range(k):
                acc = 0.0
                for t in range(d):
                    diff = points[i, t] - means[j, t]
                    acc += diff * diff * inv[j, t]
                out[i, j] = norm[j] - 0.5 * acc
    return out_arr


def mixture_logpdf(const double[:, ::1] points, const double[:, ::1] means, const double[:, ::1] variances,
                   const double[::1] log_weights):
    cdef Py_ssize_t n = points.shape[0], k = means.shape[0], d = points.shape[1]
    cdef Py_ssize_t i, j, t
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[:, ::1] inv = np.empty((k, d), dtype=np.float64)
    cdef double[::1] norm = np.empty(k, dtype=np.float64)
    cdef double acc, diff, m, s, v
    with nogil:
        for j in range(k):
            acc = -0.5 * d * LOG_2PI + log_weights[j]
            for t in range(d):
                inv[j, t] = 1.0 / variances[j, t]
                acc -= 0.5 * log(variances[j, t])
            norm[j] = acc
        for i in range(n):
            # streaming log-sum-exp over components
            m = -INFINITY
            s = 0.0
            for j in range(k):
                acc = 0.0
                for t in range(d):
                    diff = points[i, t] - means[j, t]
                    acc += diff * diff * inv[j, t]
                v = norm[j] - 0.5 * acc
                if v <= m:
                    s += exp(v - m)
                else:
                    s = s * exp(m - v) + 1.0
                    m = v
            out[i] = m + log(s)
    return out_arr

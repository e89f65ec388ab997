# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled elementwise Gaussian expectations for the Erf and ReLU maps."""

import numpy as np
cimport numpy as cnp
from libc.math cimport asin, acos, sqrt, M_PI

cnp.import_array()

cdef double RHO_MAX = 1.0 - 1e-12


cdef inline double _erf_entry(double k, double a, double b) nogil:
    return (2.0 / M_PI) * asin(2.0 * k / sqrt((1.0 + 2.0 * a) * (1.0 + 2.0 * b)))


cdef inline double _relu_entry(double k, double a, double b) nogil:
    cdef double s, rho, th
    if a == 0.0 or b == 0.0:
        return 0.0
    s = sqrt(a * b)
    rho = k / s
    if rho > RHO_MAX:
        rho = RHO_MAX
    elif rho < -RHO_MAX:
        rho = -RHO_MAX
    th = acos(rho)
    return s * (sqrt(1.0 - rho * rho) + (M_PI - th) * rho) / (2.0 * M_PI)


def erf_map(double[:, ::1] K, double[::1] dr, double[::1] dc, bint symmetric):
    """E[erf(u) erf(v)] for every entry, u, v ~ N(0, [[dr_i, K_ij], [K_ij, dc_j]])."""
    cdef Py_ssize_t n = K.shape[0], m = K.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        if symmetric:
            for i in range(n):
                o[i, i] = _erf_entry(dr[i], dr[i], dr[i])
                for j in range(i + 1, m):
                    o[i, j] = _erf_entry(K[i, j], dr[i], dc[j])
                    o[j, i] = o[i, j]
        else:
            for i in range(n):
                for j in range(m):
                    o[i, j] = _erf_entry(K[i, j], dr[i], dc[j])
    return out


def relu_map(double[:, ::1] K, double[::1] dr, double[::1] dc, bint symmetric):
    """E[relu(u) relu(v)] for every entry; the diagonal is exact when symmetric."""
    cdef Py_ssize_t n = K.shape[0], m = K.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        if symmetric:
            for i in range(n):
                o[i, i] = 0.5 * dr[i]
                for j in range(i + 1, m):
                    o[i, j] = _relu_entry(K[i, j], dr[i], dc[j])
                    o[j, i] = o[i, j]
        else:
            for i in range(n):
                for j in range(m):
                    o[i, j] = _relu_entry(K[i, j], dr[i], dc[j])
    return out

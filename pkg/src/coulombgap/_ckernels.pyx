# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: log-space moment sums and inverse-CDF table lookup."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


def log_moments(double[::1] logw, double[::1] logr, Py_ssize_t j0, Py_ssize_t count):
    """out[i] = log sum_k exp(logw[k] + (2*(j0+i)+1)*logr[k])."""
    cdef Py_ssize_t K = logw.shape[0]
    cdef Py_ssize_t i, k
    cdef double e, peak, acc, v
    out = np.empty(count, dtype=np.float64)
    cdef double[::1] res = out
    with nogil:
        for i in range(count):
            e = 2.0 * (j0 + i) + 1.0
            peak = -INFINITY
            for k in range(K):
                v = logw[k] + e * logr[k]
                if v > peak:
                    peak = v
            if peak == -INFINITY:
                res[i] = -INFINITY
                continue
            acc = 0.0
            for k in range(K):
                v = logw[k] + e * logr[k] - peak
                if v > -746.0:  # below this exp underflows to zero
                    acc += exp(v)
            res[i] = peak + log(acc)
    return out


def invert_tables(double[:, ::1] r_tab, double[:, ::1] key_tab, double[:, ::1] slope_tab,
                  Py_ssize_t[::1] rows, double[::1] u):
    """Cubic Hermite inverse of tabulated ascending keys, one (row, u) pair per output."""
    cdef Py_ssize_t m = u.shape[0]
    cdef Py_ssize_t K = key_tab.shape[1]
    cdef Py_ssize_t i, row, lo, hi, mid
    cdef double c0, c1, h, t, t2, t3, uu
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] res = out
    with nogil:
        for i in range(m):
            row = rows[i]
            uu = u[i]
            lo = 0
            hi = K - 1
            if uu <= key_tab[row, 0]:
                res[i] = r_tab[row, 0]
                continue
            if uu >= key_tab[row, K - 1]:
                res[i] = r_tab[row, K - 1]
                continue
            while hi - lo > 1:
                mid = (lo + hi) >> 1
                if key_tab[row, mid] <= uu:
                    lo = mid
                else:
                    hi = mid
            c0 = key_tab[row, lo]
            c1 = key_tab[row, hi]
            h = c1 - c0
            if h <= 0.0:
                res[i] = r_tab[row, lo]
                continue
            t = (uu - c0) / h
            t2 = t * t
            t3 = t2 * t
            res[i] = ((2.0 * t3 - 3.0 * t2 + 1.0) * r_tab[row, lo]
                      + (t3 - 2.0 * t2 + t) * h * slope_tab[row, lo]
                      + (-2.0 * t3 + 3.0 * t2) * r_tab[row, hi]
                      + (t3 - t2) * h * slope_tab[row, hi])
    return out

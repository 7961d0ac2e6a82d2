# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled two-state scaled forward-backward recursion.

Mirrors ``_kernels_py.fb_batch`` exactly; see that module for the contract.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log

cnp.import_array()


def fb_batch(const double[:, :, ::1] b, const double[::1] pi, const double[:, ::1] trans):
    cdef Py_ssize_t m = b.shape[0]
    cdef Py_ssize_t n = b.shape[1]
    cdef Py_ssize_t s, k
    cdef double a0, a1, c, p0, p1, g0, g1, bb0, bb1, inv
    cdef double t00 = trans[0, 0], t01 = trans[0, 1]
    cdef double t10 = trans[1, 0], t11 = trans[1, 1]

    gamma_arr = np.empty((m, n, 2), dtype=np.float64)
    xi_arr = np.zeros((m, 2, 2), dtype=np.float64)
    ll_arr = np.zeros(m, dtype=np.float64)
    fwd_arr = np.empty((n, 2), dtype=np.float64)
    scale_arr = np.empty(n, dtype=np.float64)

    cdef double[:, :, ::1] gamma = gamma_arr
    cdef double[:, :, ::1] xi = xi_arr
    cdef double[::1] ll = ll_arr
    cdef double[:, ::1] fwd = fwd_arr
    cdef double[::1] scale = scale_arr

    for s in range(m):
        # forward pass
        a0 = pi[0] * b[s, 0, 0]
        a1 = pi[1] * b[s, 0, 1]
        c = a0 + a1
        inv = 1.0 / c
        fwd[0, 0] = a0 * inv
        fwd[0, 1] = a1 * inv
        scale[0] = c
        ll[s] = log(c)
        for k in range(1, n):
            p0 = fwd[k - 1, 0]
            p1 = fwd[k - 1, 1]
            a0 = (p0 * t00 + p1 * t10) * b[s, k, 0]
            a1 = (p0 * t01 + p1 * t11) * b[s, k, 1]
            c = a0 + a1
            inv = 1.0 / c
            fwd[k, 0] = a0 * inv
            fwd[k, 1] = a1 * inv
            scale[k] = c
            ll[s] += log(c)

        # backward pass, fused with posterior and transition accumulation
        g0 = 1.0
        g1 = 1.0
        gamma[s, n - 1, 0] = fwd[n - 1, 0]
        gamma[s, n - 1, 1] = fwd[n - 1, 1]
        for k in range(n - 2, -1, -1):
            inv = 1.0 / scale[k + 1]
            bb0 = b[s, k + 1, 0] * g0 * inv
            bb1 = b[s, k + 1, 1] * g1 * inv
            p0 = fwd[k, 0]
            p1 = fwd[k, 1]
            xi[s, 0, 0] += p0 * t00 * bb0
            xi[s, 0, 1] += p0 * t01 * bb1
            xi[s, 1, 0] += p1 * t10 * bb0
            xi[s, 1, 1] += p1 * t11 * bb1
            g0 = t00 * bb0 + t01 * bb1
            g1 = t10 * bb0 + t11 * bb1
            a0 = p0 * g0
            a1 = p1 * g1
            inv = 1.0 / (a0 + a1)
            gamma[s, k, 0] = a0 * inv
            gamma[s, k, 1] = a1 * inv

    return gamma_arr, xi_arr, ll_arr

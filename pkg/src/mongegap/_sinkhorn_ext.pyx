# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled log-domain Sinkhorn loop for uniform marginals.

Each log-sum-exp is shifted by the potential from the previous sweep, which
is the exact shift at the fixed point; a max-shifted pass is used for the
first sweep and whenever the cheap sum leaves the safe range.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs

cnp.import_array()

cdef double _LO = 1e-250
cdef double _HI = 1e250


cdef void _update_rows(const double[:, ::1] C, const double[::1] g, double[::1] out,
                       double eps, double logb, bint exact) noexcept nogil:
    # out_i = -eps * LSE_j((g_j - C_ij) / eps + logb)
    cdef Py_ssize_t n = C.shape[0], m = C.shape[1], i, j
    cdef double mx, s, v, inv = 1.0 / eps
    cdef const double* row
    for i in range(n):
        row = &C[i, 0]
        s = 0.0
        mx = (-out[i] / eps) - logb
        if not exact:
            for j in range(m):
                s += exp((g[j] - row[j]) * inv - mx)
        if exact or not (s > _LO and s < _HI):
            mx = (g[0] - row[0]) * inv
            for j in range(1, m):
                v = (g[j] - row[j]) * inv
                if v > mx:
                    mx = v
            s = 0.0
            for j in range(m):
                s += exp((g[j] - row[j]) * inv - mx)
        out[i] = -eps * (mx + log(s) + logb)


cdef void _update_cols(const double[:, ::1] C, const double[::1] f, double[::1] out,
                       double[::1] shift, double[::1] acc, double eps, double loga,
                       bint exact) noexcept nogil:
    # out_j = -eps * LSE_i((f_i - C_ij) / eps + loga), row-major sweeps
    cdef Py_ssize_t n = C.shape[0], m = C.shape[1], i, j
    cdef double v, inv = 1.0 / eps
    cdef bint redo = exact
    cdef const double* row
    if not exact:
        for j in range(m):
            shift[j] = (-out[j] / eps) - loga
            acc[j] = 0.0
        for i in range(n):
            row = &C[i, 0]
            for j in range(m):
                acc[j] += exp((f[i] - row[j]) * inv - shift[j])
        for j in range(m):
            if not (acc[j] > _LO and acc[j] < _HI):
                redo = True
                break
    if redo:
        for j in range(m):
            shift[j] = (f[0] - C[0, j]) * inv
            acc[j] = 0.0
        for i in range(1, n):
            row = &C[i, 0]
            for j in range(m):
                v = (f[i] - row[j]) * inv
                if v > shift[j]:
                    shift[j] = v
        for i in range(n):
            row = &C[i, 0]
            for j in range(m):
                acc[j] += exp((f[i] - row[j]) * inv - shift[j])
    for j in range(m):
        out[j] = -eps * (shift[j] + log(acc[j]) + loga)


def sinkhorn_loop(double[:, ::1] C, double eps, double tol, Py_ssize_t max_iter):
    """Run log-domain Sinkhorn; returns (f, g, iterations, row_error) at the best iterate."""
    cdef Py_ssize_t n = C.shape[0], m = C.shape[1], i, it = 0
    cdef double loga = -log(<double>n), logb = -log(<double>m)
    cdef double a = 1.0 / n, err, best = 1e300, e
    f_arr = np.zeros(n)
    g_arr = np.zeros(m)
    fn_arr = np.zeros(n)
    fb_arr = np.zeros(n)
    gb_arr = np.zeros(m)
    sh_arr = np.empty(m)
    acc_arr = np.empty(m)
    cdef double[::1] f = f_arr, g = g_arr, fn = fn_arr, fb = fb_arr, gb = gb_arr
    cdef double[::1] sh = sh_arr, acc = acc_arr
    with nogil:
        _update_cols(C, f, g, sh, acc, eps, loga, True)
        while it < max_iter:
            _update_rows(C, g, fn, eps, logb, it == 0)
            it += 1
            err = 0.0
            for i in range(n):
                e = fabs(a * exp((f[i] - fn[i]) / eps) - a)
                if e > err:
                    err = e
            if err < best:
                best = err
                fb[:] = f
                gb[:] = g
            if err <= tol:
                break
            f[:] = fn
            _update_cols(C, f, g, sh, acc, eps, loga, False)
    return fb_arr, gb_arr, it, best

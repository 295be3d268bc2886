# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pixel kernels; see ``_fallback.py`` for the reference semantics.

Rows are distributed over OpenMP threads.  Within a pixel the summation
order is identical to the numpy fallback, which keeps float64 results
bit-identical across backends (the build disables FP contraction).
"""

from cython.parallel cimport parallel, prange
from libc.math cimport fabs, fabsf, isfinite, isnan, pow, powf
from libc.stdlib cimport free, malloc

import numpy as np

NAME = "cython"

ctypedef fused real:
    float
    double

# what the temporal window may hold: native sensor counts or intensities
ctypedef fused sample:
    unsigned char
    unsigned short
    float
    double


cdef Py_ssize_t _first(Py_ssize_t[::1] rows):
    cdef Py_ssize_t i
    for i in range(rows.shape[0]):
        if rows[i] >= 0:
            return rows[i]
    return -1


def temporal_paired(const sample[:, :, ::1] ring, const long[::1] order,
                    const double[::1] weights, bint symmetric, real[:, ::1] out,
                    int threads=1):
    cdef Py_ssize_t r = weights.shape[0]
    cdef Py_ssize_t H = out.shape[0], W = out.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double *acc
    cdef const sample *xc
    cdef const sample *xb
    cdef const sample *xa
    cdef real d
    cdef double w
    if threads < 1:
        threads = 1
    with nogil, parallel(num_threads=threads):
        acc = <double *> malloc(W * sizeof(double))
        for i in prange(H, schedule="static"):
            xc = &ring[order[r], i, 0]
            for j in range(W):
                acc[j] = 0.0
            for k in range(1, r + 1):
                w = weights[k - 1]
                xb = &ring[order[r - k], i, 0]
                xa = &ring[order[r + k], i, 0]
                # samples are widened to the output type before differencing
                if symmetric:
                    for j in range(W):
                        d = (<real> xb[j] - <real> xc[j]) + (<real> xa[j] - <real> xc[j])
                        acc[j] = acc[j] + w * d
                else:
                    for j in range(W):
                        d = <real> xb[j] - <real> xa[j]
                        acc[j] = acc[j] + w * d
            for j in range(W):
                out[i, j] = <real> acc[j]
        free(acc)


def df1_step(const real[:, ::1] x, real[:, :, ::1] xhist, double[:, :, ::1] yhist,
             const double[::1] nb, const double[::1] na, real[:, ::1] out, int threads=1):
    cdef Py_ssize_t H = x.shape[0], W = x.shape[1]
    cdef Py_ssize_t n = nb.shape[0] - 1
    cdef Py_ssize_t i, j, m
    cdef double y, xv
    cdef real *xs
    cdef double *ys
    cdef Py_ssize_t row_bad
    cdef Py_ssize_t[::1] rows = np.empty(H, dtype=np.intp)
    if threads < 1:
        threads = 1
    for i in prange(H, nogil=True, num_threads=threads, schedule="static"):
        row_bad = -1
        for j in range(W):
            xs = &xhist[i, j, 0]
            ys = &yhist[i, j, 0]
            xv = x[i, j]
            y = nb[0] * xv
            for m in range(1, n + 1):
                y = y + nb[m] * xs[m - 1]
            for m in range(1, n + 1):
                y = y - na[m] * ys[m - 1]
            for m in range(n - 1, 0, -1):
                xs[m] = xs[m - 1]
                ys[m] = ys[m - 1]
            xs[0] = x[i, j]
            ys[0] = y
            out[i, j] = <real> y
            if row_bad < 0 and not isfinite(y):
                row_bad = i * W + j
        rows[i] = row_bad
    return _first(rows)


def sos_step(const real[:, ::1] x, real[:, :, ::1] state, const double[:, ::1] sos,
             real[:, ::1] out, int threads=1):
    cdef Py_ssize_t H = x.shape[0], W = x.shape[1]
    cdef Py_ssize_t S = sos.shape[0]
    cdef Py_ssize_t i, j, s
    cdef double v, y, z1, z2
    cdef real *st
    cdef Py_ssize_t row_bad
    cdef Py_ssize_t[::1] rows = np.empty(H, dtype=np.intp)
    if threads < 1:
        threads = 1
    for i in prange(H, nogil=True, num_threads=threads, schedule="static"):
        row_bad = -1
        for j in range(W):
            st = &state[i, j, 0]
            v = x[i, j]
            for s in range(S):
                z1 = st[2 * s]
                z2 = st[2 * s + 1]
                y = sos[s, 0] * v + z1
                st[2 * s] = <real> ((sos[s, 1] * v - sos[s, 4] * y) + z2)
                st[2 * s + 1] = <real> (sos[s, 2] * v - sos[s, 5] * y)
                v = y
            out[i, j] = <real> v
            if row_bad < 0 and not isfinite(v):
                row_bad = i * W + j
        rows[i] = row_bad
    return _first(rows)


def normalize(const real[:, ::1] x, double alpha, double inv_gamma, real[:, ::1] out,
              int threads=1):
    cdef Py_ssize_t H = x.shape[0], W = x.shape[1]
    cdef Py_ssize_t i, j
    cdef real v, m
    cdef float fa = <float> alpha
    cdef float fg = <float> inv_gamma
    # above this base the power is certainly past 255, so pow can be skipped
    cdef double sat = pow(255.0, 1.0 / inv_gamma) * (1.0 + 1e-5)
    cdef Py_ssize_t row_bad
    cdef Py_ssize_t[::1] rows = np.empty(H, dtype=np.intp)
    if threads < 1:
        threads = 1
    for i in prange(H, nogil=True, num_threads=threads, schedule="static"):
        row_bad = -1
        for j in range(W):
            if real is float:
                m = fa * fabsf(x[i, j])
                v = 255.0 if m > sat else powf(m, fg)
            else:
                m = alpha * fabs(x[i, j])
                v = 255.0 if m > sat else pow(m, inv_gamma)
            if isnan(v):
                if row_bad < 0:
                    row_bad = i * W + j
                v = 0
            out[i, j] = v if v < 255.0 else 255.0
        rows[i] = row_bad
    return _first(rows)

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_fallback``; same signatures and results."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _segment_sse(double n, double sx, double sy, double sxx,
                                double syy, double sxy) nogil:
    cdef double vxx = sxx - sx * sx / n
    cdef double vyy = syy - sy * sy / n
    cdef double vxy = sxy - sx * sy / n
    cdef double out = vyy - vxy * vxy / vxx
    return out if out > 0.0 else 0.0


def knee_sse(const double[::1] xc, const double[::1] yc, int min_side=3):
    cdef Py_ssize_t size = xc.shape[0]
    cdef Py_ssize_t i, b
    cdef double[::1] sx = np.zeros(size + 1)
    cdef double[::1] sy = np.zeros(size + 1)
    cdef double[::1] sxx = np.zeros(size + 1)
    cdef double[::1] syy = np.zeros(size + 1)
    cdef double[::1] sxy = np.zeros(size + 1)
    out = np.full(size, np.inf)
    cdef double[::1] sse = out
    cdef double left, right, nr
    with nogil:
        for i in range(size):
            sx[i + 1] = sx[i] + xc[i]
            sy[i + 1] = sy[i] + yc[i]
            sxx[i + 1] = sxx[i] + xc[i] * xc[i]
            syy[i + 1] = syy[i] + yc[i] * yc[i]
            sxy[i + 1] = sxy[i] + xc[i] * yc[i]
        for b in range(min_side - 1, size - min_side + 1):
            left = _segment_sse(b + 1.0, sx[b + 1], sy[b + 1], sxx[b + 1],
                                syy[b + 1], sxy[b + 1])
            nr = <double>(size - b)
            right = _segment_sse(nr, sx[size] - sx[b], sy[size] - sy[b],
                                 sxx[size] - sxx[b], syy[size] - syy[b],
                                 sxy[size] - sxy[b])
            sse[b] = left + right
    return out


def conv1d_forward(const double[:, :, ::1] x, const double[:, :, ::1] w,
                   const double[::1] bias):
    cdef Py_ssize_t batch = x.shape[0], c_in = x.shape[1], m = x.shape[2]
    cdef Py_ssize_t c_out = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t p = k // 2
    cdef Py_ssize_t bi, o, c, j, n, src, lo, hi
    cdef double wv
    out = np.empty((batch, c_out, m))
    cdef double[:, :, ::1] y = out
    with nogil:
        for bi in range(batch):
            for o in range(c_out):
                for n in range(m):
                    y[bi, o, n] = bias[o]
                for c in range(c_in):
                    for j in range(k):
                        wv = w[o, c, j]
                        # y[n] += x[n - j + p] * w[j] for n with a valid source index
                        lo = j - p if j > p else 0
                        hi = m + j - p if j < p else m
                        for n in range(lo, hi):
                            y[bi, o, n] += x[bi, c, n - j + p] * wv
    return out


def conv1d_backward(const double[:, :, ::1] x, const double[:, :, ::1] w,
                    const double[:, :, ::1] grad_y):
    cdef Py_ssize_t batch = x.shape[0], c_in = x.shape[1], m = x.shape[2]
    cdef Py_ssize_t c_out = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t p = k // 2
    cdef Py_ssize_t bi, o, c, j, n, lo, hi
    cdef double acc, wv, g
    gx_arr = np.zeros((batch, c_in, m))
    gw_arr = np.zeros((c_out, c_in, k))
    gb_arr = np.zeros(c_out)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    with nogil:
        for o in range(c_out):
            acc = 0.0
            for bi in range(batch):
                for n in range(m):
                    acc = acc + grad_y[bi, o, n]
            gb[o] = acc
        for bi in range(batch):
            for o in range(c_out):
                for c in range(c_in):
                    for j in range(k):
                        wv = w[o, c, j]
                        lo = j - p if j > p else 0
                        hi = m + j - p if j < p else m
                        acc = 0.0
                        for n in range(lo, hi):
                            g = grad_y[bi, o, n]
                            acc = acc + g * x[bi, c, n - j + p]
                            gx[bi, c, n - j + p] += g * wv
                        gw[o, c, j] += acc
    return gx_arr, gw_arr, gb_arr

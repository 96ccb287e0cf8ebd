# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels mirroring ``_kernels_py``.

Integer results are bit-identical to the numpy backend.  Float results use a
double accumulator and may differ from numpy in the last ulp.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport nearbyint

cnp.import_array()

BACKEND = "cython"


def conv2d_float(const float[:, :, :, ::1] xp, const float[:, :, :, ::1] w, int stride):
    cdef Py_ssize_t n = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], c = xp.shape[3]
    cdef Py_ssize_t o = w.shape[0], kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1, wo = (wp - kw) // stride + 1
    out_arr = np.empty((n, ho, wo, o), dtype=np.float32)
    cdef float[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, y, x, oc, i, k, y0, x0, span = kw * c
    cdef const float* xrow
    cdef const float* wrow
    cdef double acc
    with nogil:
        for b in range(n):
            for y in range(ho):
                y0 = y * stride
                for x in range(wo):
                    x0 = x * stride
                    for oc in range(o):
                        acc = 0.0
                        for i in range(kh):
                            # one kernel row is kw*c contiguous values in both operands
                            xrow = &xp[b, y0 + i, x0, 0]
                            wrow = &w[oc, i, 0, 0]
                            for k in range(span):
                                acc = acc + xrow[k] * wrow[k]
                        out[b, y, x, oc] = <float>acc
    return out_arr


def conv2d_int(const int[:, :, :, ::1] xp, const signed char[:, :, :, ::1] w, int stride):
    cdef Py_ssize_t n = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], c = xp.shape[3]
    cdef Py_ssize_t o = w.shape[0], kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1, wo = (wp - kw) // stride + 1
    out_arr = np.empty((n, ho, wo, o), dtype=np.int64)
    cdef long long[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, y, x, oc, i, k, y0, x0, span = kw * c
    cdef const int* xrow
    cdef const signed char* wrow
    cdef long long acc
    with nogil:
        for b in range(n):
            for y in range(ho):
                y0 = y * stride
                for x in range(wo):
                    x0 = x * stride
                    for oc in range(o):
                        acc = 0
                        for i in range(kh):
                            xrow = &xp[b, y0 + i, x0, 0]
                            wrow = &w[oc, i, 0, 0]
                            for k in range(span):
                                acc = acc + xrow[k] * wrow[k]
                        out[b, y, x, oc] = acc
    return out_arr


def depthwise_float(const float[:, :, :, ::1] xp, const float[:, :, :, ::1] w, int stride):
    cdef Py_ssize_t n = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], c = xp.shape[3]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1, wo = (wp - kw) // stride + 1
    out_arr = np.zeros((n, ho, wo, c), dtype=np.float32)
    cdef float[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, y, x, ch, i, j, y0, x0
    with nogil:
        for b in range(n):
            for y in range(ho):
                y0 = y * stride
                for x in range(wo):
                    x0 = x * stride
                    for i in range(kh):
                        for j in range(kw):
                            for ch in range(c):
                                out[b, y, x, ch] += xp[b, y0 + i, x0 + j, ch] * w[0, i, j, ch]
    return out_arr


def depthwise_int(const int[:, :, :, ::1] xp, const signed char[:, :, :, ::1] w, int stride):
    cdef Py_ssize_t n = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], c = xp.shape[3]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1, wo = (wp - kw) // stride + 1
    out_arr = np.zeros((n, ho, wo, c), dtype=np.int64)
    cdef long long[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, y, x, ch, i, j, y0, x0
    with nogil:
        for b in range(n):
            for y in range(ho):
                y0 = y * stride
                for x in range(wo):
                    x0 = x * stride
                    for i in range(kh):
                        for j in range(kw):
                            for ch in range(c):
                                out[b, y, x, ch] += xp[b, y0 + i, x0 + j, ch] * w[0, i, j, ch]
    return out_arr


def requantize(acc, double multiplier, int zero_point):
    cdef cnp.ndarray[long long, ndim=1] flat = np.ascontiguousarray(acc, dtype=np.int64).reshape(-1)
    out_arr = np.empty(flat.shape[0], dtype=np.int8)
    cdef signed char[::1] out = out_arr
    cdef Py_ssize_t k, m = flat.shape[0]
    cdef double v
    with nogil:
        for k in range(m):
            v = nearbyint(<double>flat[k] * multiplier) + zero_point
            if v < -128:
                v = -128
            elif v > 127:
                v = 127
            out[k] = <signed char>v
    return out_arr.reshape(np.shape(acc))

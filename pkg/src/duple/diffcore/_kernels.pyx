# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im kernels for the 1-D and 2-D convolutions.

Inputs must already be zero-padded and C-contiguous float64.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col1d(const double[:, :, ::1] x, int k, int stride, int lout):
    cdef Py_ssize_t b, c, t, j, base
    cdef Py_ssize_t nb = x.shape[0], nc = x.shape[1]
    out = np.empty((nb, lout, nc * k), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for b in range(nb):
            for t in range(lout):
                base = t * stride
                for c in range(nc):
                    for j in range(k):
                        o[b, t, c * k + j] = x[b, c, base + j]
    return out


def col2im1d(const double[:, :, ::1] cols, int channels, int length, int k, int stride):
    cdef Py_ssize_t b, c, t, j, base
    cdef Py_ssize_t nb = cols.shape[0], lout = cols.shape[1]
    out = np.zeros((nb, channels, length), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for b in range(nb):
            for t in range(lout):
                base = t * stride
                for c in range(channels):
                    for j in range(k):
                        o[b, c, base + j] += cols[b, t, c * k + j]
    return out


def im2col2d(const double[:, :, :, ::1] x, int kh, int kw, int stride, int hout, int wout):
    cdef Py_ssize_t b, c, i, j, u, v, row, col
    cdef Py_ssize_t nb = x.shape[0], nc = x.shape[1]
    out = np.empty((nb, hout * wout, nc * kh * kw), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for b in range(nb):
            for i in range(hout):
                for j in range(wout):
                    row = i * wout + j
                    col = 0
                    for c in range(nc):
                        for u in range(kh):
                            for v in range(kw):
                                o[b, row, col] = x[b, c, i * stride + u, j * stride + v]
                                col += 1
    return out


def col2im2d(const double[:, :, ::1] cols, int channels, int height, int width,
             int kh, int kw, int stride, int hout, int wout):
    cdef Py_ssize_t b, c, i, j, u, v, row, col
    cdef Py_ssize_t nb = cols.shape[0]
    out = np.zeros((nb, channels, height, width), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    with nogil:
        for b in range(nb):
            for i in range(hout):
                for j in range(wout):
                    row = i * wout + j
                    col = 0
                    for c in range(channels):
                        for u in range(kh):
                            for v in range(kw):
                                o[b, c, i * stride + u, j * stride + v] += cols[b, row, col]
                                col += 1
    return out

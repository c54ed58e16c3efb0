# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col/col2im and 3x3 max-pool kernels.

Array layout is (N, C, H, W), C-contiguous. ``cols`` is (N, C*kh*kw, Ho*Wo)
with the channel-major, then kernel-row, then kernel-column ordering used by
``crossview.nn.conv2d``. Max-pool argmax is the window-local index
``i * k + j``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int kh, int kw, int sy, int sx, int py, int px):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * py - kh) // sy + 1
    cdef Py_ssize_t wo = (w + 2 * px - kw) // sx + 1
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c * kh * kw, ho * wo), dtype=dtype)
    cdef real[:, :, ::1] cols = out
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, ix, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for oy in range(ho):
                            iy = oy * sy + i - py
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(wo):
                                ix = ox * sx + j - px
                                if ix < 0 or ix >= w:
                                    continue
                                cols[b, row, oy * wo + ox] = x[b, ch, iy, ix]
    return out


def col2im(real[:, :, ::1] cols, int c, int h, int w, int kh, int kw,
           int sy, int sx, int py, int px):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t ho = (h + 2 * py - kh) // sy + 1
    cdef Py_ssize_t wo = (w + 2 * px - kw) // sx + 1
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] x = out
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, ix, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for oy in range(ho):
                            iy = oy * sy + i - py
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(wo):
                                ix = ox * sx + j - px
                                if ix < 0 or ix >= w:
                                    continue
                                x[b, ch, iy, ix] += cols[b, row, oy * wo + ox]
    return out


def maxpool_forward(real[:, :, :, ::1] x, int k, int s, int p):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * p - k) // s + 1
    cdef Py_ssize_t wo = (w + 2 * p - k) // s + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, ho, wo), dtype=dtype)
    arg_arr = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef real[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, ch, oy, ox, i, j, iy, ix
    cdef real best, v
    cdef cnp.int64_t best_k
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        best = -INFINITY
                        best_k = 0
                        for i in range(k):
                            iy = oy * s + i - p
                            if iy < 0 or iy >= h:
                                continue
                            for j in range(k):
                                ix = ox * s + j - p
                                if ix < 0 or ix >= w:
                                    continue
                                v = x[b, ch, iy, ix]
                                if v > best:
                                    best = v
                                    best_k = i * k + j
                        out[b, ch, oy, ox] = best
                        arg[b, ch, oy, ox] = best_k
    return out_arr, arg_arr


def maxpool_backward(real[:, :, :, ::1] grad, cnp.int64_t[:, :, :, ::1] arg,
                     int h, int w, int k, int s, int p):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], ho = grad.shape[2], wo = grad.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] gx = out
    cdef Py_ssize_t b, ch, oy, ox, iy, ix
    cdef cnp.int64_t a
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        a = arg[b, ch, oy, ox]
                        iy = oy * s + a // k - p
                        ix = ox * s + a % k - p
                        gx[b, ch, iy, ix] += grad[b, ch, oy, ox]
    return out

"""Pure-numpy versions of the compiled kernels (same signatures, same results)."""

from __future__ import annotations

import numpy as np


def _out_size(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def im2col(x, kh, kw, sy, sx, py, px):
    n, c, h, w = x.shape
    ho, wo = _out_size(h, kh, sy, py), _out_size(w, kw, sx, px)
    xp = np.pad(x, ((0, 0), (0, 0), (py, py), (px, px)))
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + sy * (ho - 1) + 1 : sy, j : j + sx * (wo - 1) + 1 : sx]
    return cols.reshape(n, c * kh * kw, ho * wo)


def col2im(cols, c, h, w, kh, kw, sy, sx, py, px):
    n = cols.shape[0]
    ho, wo = _out_size(h, kh, sy, py), _out_size(w, kw, sx, px)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    xp = np.zeros((n, c, h + 2 * py, w + 2 * px), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + sy * (ho - 1) + 1 : sy, j : j + sx * (wo - 1) + 1 : sx] += cols[:, :, i, j]
    return np.ascontiguousarray(xp[:, :, py : py + h, px : px + w])


def maxpool_forward(x, k, s, p):
    n, c, h, w = x.shape
    ho, wo = _out_size(h, k, s, p), _out_size(w, k, s, p)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf)
    win = np.empty((k * k, n, c, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            win[i * k + j] = xp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s]
    # argmax returns the first maximum, matching the strict '>' scan of the compiled kernel
    arg = np.argmax(win, axis=0)
    out = np.take_along_axis(win, arg[None], axis=0)[0]
    return out, arg.astype(np.int64)


def maxpool_backward(grad, arg, h, w, k, s, p):
    n, c, ho, wo = grad.shape
    gp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=grad.dtype)
    for i in range(k):
        for j in range(k):
            gp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += np.where(
                arg == i * k + j, grad, 0
            )
    return np.ascontiguousarray(gp[:, :, p : p + h, p : p + w])

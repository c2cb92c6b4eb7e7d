"""Low-level array kernels: im2col/col2im and the L1 (adder) patch kernels."""

from __future__ import annotations

import numpy as np
from numba import njit
from numpy.lib.stride_tricks import sliding_window_view


def out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> (N*Ho*Wo, C*k*k), rows ordered (n, ho, wo)."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)


def col2im(cols: np.ndarray, x_shape: tuple[int, ...], k: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    return _col2im(np.ascontiguousarray(cols), n, c, h, w, k, stride, pad)


@njit(cache=True)
def _col2im(cols, n, c, h, w, k, stride, pad):
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    out = np.zeros((n, c, h, w))
    r = 0
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                q = 0
                for ch in range(c):
                    for i in range(k):
                        y = oy * stride + i - pad
                        for j in range(k):
                            xx = ox * stride + j - pad
                            if 0 <= y < h and 0 <= xx < w:
                                out[b, ch, y, xx] += cols[r, q]
                            q += 1
                r += 1
    return out


@njit(cache=True, fastmath=True)
def l1_patch_forward(cols, w):
    """out[r, o] = -sum_k |cols[r, k] - w[o, k]|."""
    r_n, k_n = cols.shape
    o_n = w.shape[0]
    out = np.empty((r_n, o_n))
    for r in range(r_n):
        row = cols[r]
        for o in range(o_n):
            wo = w[o]
            acc = 0.0
            for k in range(k_n):
                acc += abs(row[k] - wo[k])
            out[r, o] = -acc
    return out


@njit(cache=True, fastmath=True)
def l1_patch_backward(cols, w, g):
    """Weight grad uses sign(x - w); input grad uses the clip(w - x, -1, 1) surrogate."""
    r_n, k_n = cols.shape
    o_n = w.shape[0]
    grad_w = np.zeros((o_n, k_n))
    grad_cols = np.zeros((r_n, k_n))
    acc_w = np.zeros(k_n)
    for o in range(o_n):
        wo = w[o]
        acc_w[:] = 0.0
        for r in range(r_n):
            go = g[r, o]
            row = cols[r]
            for k in range(k_n):
                d = row[k] - wo[k]
                acc_w[k] += np.sign(d) * go
        grad_w[o] = acc_w
    acc_c = np.zeros(k_n)
    for r in range(r_n):
        row = cols[r]
        acc_c[:] = 0.0
        for o in range(o_n):
            go = g[r, o]
            wo = w[o]
            for k in range(k_n):
                acc_c[k] -= go * min(max(row[k] - wo[k], -1.0), 1.0)
        grad_cols[r] = acc_c
    return grad_w, grad_cols

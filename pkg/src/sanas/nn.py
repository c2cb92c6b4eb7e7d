"""Differentiable image primitives built on :mod:`sanas.tensor`."""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .errors import DimensionError
from .tensor import Tensor, _node, matmul, parameter


def _check_conv(x: Tensor, w: Tensor) -> None:
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv: expected 4-D input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise DimensionError(f"conv: input {x.shape} does not match weight {w.shape}")


def conv2d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Zero-padded cross-correlation with padding k // 2."""
    _check_conv(x, w)
    n, _, h, wd = x.shape
    o, c, k, _ = w.shape
    pad = k // 2
    ho, wo = K.out_size(h, k, stride, pad), K.out_size(wd, k, stride, pad)
    cols = K.im2col(x.data, k, stride, pad)
    wm = w.data.reshape(o, -1)
    y = (cols @ wm.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def back(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gm.T @ cols).reshape(w.shape)
        gx = K.col2im(gm @ wm, x.shape, k, stride, pad) if x.requires_grad else None
        return gx, gw

    return _node(np.ascontiguousarray(y), (x, w), back)


def adder2d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Negated L1 distance between every input patch and every filter."""
    _check_conv(x, w)
    n, _, h, wd = x.shape
    o, c, k, _ = w.shape
    pad = k // 2
    ho, wo = K.out_size(h, k, stride, pad), K.out_size(wd, k, stride, pad)
    cols = K.im2col(x.data, k, stride, pad)
    wm = np.ascontiguousarray(w.data.reshape(o, -1))
    y = K.l1_patch_forward(cols, wm).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def back(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1).reshape(-1, o))
        gw, gcols = K.l1_patch_backward(cols, wm, gm)
        gx = K.col2im(gcols, x.shape, k, stride, pad) if x.requires_grad else None
        return gx, gw.reshape(w.shape)

    return _node(np.ascontiguousarray(y), (x, w), back)


def depthwise_conv2d(x: Tensor, w: Tensor) -> Tensor:
    """Per-channel k x k convolution, stride 1, padding k // 2. ``w`` is (C, k, k)."""
    n, c, h, wd = x.shape
    k = w.shape[1]
    if w.shape != (c, k, k):
        raise DimensionError(f"depthwise conv: weight {w.shape} for input {x.shape}")
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    y = np.zeros_like(x.data)
    for i in range(k):
        for j in range(k):
            y += xp[:, :, i: i + h, j: j + wd] * w.data[None, :, i, j, None, None]

    def back(g):
        gw = np.empty_like(w.data)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gw[:, i, j] = (g * xp[:, :, i: i + h, j: j + wd]).sum(axis=(0, 2, 3))
                gxp[:, :, i: i + h, j: j + wd] += g * w.data[None, :, i, j, None, None]
        return gxp[:, :, p: p + h, p: p + wd], gw

    return _node(y, (x, w), back)


def avg_pool2x2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"avg_pool2x2 needs even spatial dims, got {x.shape}")
    y = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def back(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return _node(y, (x,), back)


def pad_channels(x: Tensor, channels: int) -> Tensor:
    """Zero-extend the channel axis (axis 1) to ``channels``."""
    c = x.shape[1]
    if channels == c:
        return x
    if channels < c:
        raise DimensionError(f"pad_channels cannot shrink {c} -> {channels}")
    widths = [(0, 0)] * x.ndim
    widths[1] = (0, channels - c)
    return _node(np.pad(x.data, widths), (x,), lambda g: (g[:, :c],))


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return _node(x.data.mean(axis=(2, 3)), (x,),
                 lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y + b if b is not None else y


def straight_through(full: Tensor, forward_value: np.ndarray) -> Tensor:
    """Return ``forward_value`` whose gradient flows unchanged into ``full``."""
    if forward_value.shape != full.shape:
        raise DimensionError(f"straight_through: {forward_value.shape} vs {full.shape}")
    return _node(np.asarray(forward_value, dtype=np.float64), (full,), lambda g: (g,))


class BatchNorm:
    """Per-channel batch normalization over (N, C, H, W) with running statistics."""

    def __init__(self, channels: int, name: str = "bn", momentum: float = 0.1, eps: float = 1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = parameter(np.ones(channels), name=f"{name}.gamma")
        self.beta = parameter(np.zeros(channels), name=f"{name}.beta")
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]

    def __call__(self, x: Tensor, mode: str = "train", store: dict | None = None) -> Tensor:
        """``mode`` is "train" (batch stats, update running stats), "calibrate"
        (batch stats recorded into ``store``) or "eval" (stats from ``store`` if
        present, else running stats)."""
        if mode == "train":
            mu = x.data.mean(axis=(0, 2, 3))
            var = x.data.var(axis=(0, 2, 3))
            m = x.data.size // self.channels
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu
            unbiased = var * m / max(m - 1, 1)
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
            return batch_norm_train(x, self.gamma, self.beta, self.eps)
        if mode == "calibrate":
            if store is None:
                raise ValueError("calibrate mode needs a stats store")
            store[id(self)] = (x.data.mean(axis=(0, 2, 3)), x.data.var(axis=(0, 2, 3)))
            return batch_norm_train(x, self.gamma, self.beta, self.eps)
        if mode != "eval":
            raise ValueError(f"unknown batch-norm mode {mode!r}")
        if store is not None and id(self) in store:
            mu, var = store[id(self)]
        else:
            mu, var = self.running_mean, self.running_var
        return batch_norm_affine(x, self.gamma, self.beta, mu, var, self.eps)


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    axes = (0, 2, 3)
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    ga = gamma.data[None, :, None, None]
    y = ga * xhat + beta.data[None, :, None, None]
    m = x.data.size // x.shape[1]

    def back(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * ga
        gx = inv / m * (m * gxhat - gxhat.sum(axis=axes, keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
        return gx, gg, gb

    return _node(y, (x, gamma, beta), back)


def batch_norm_affine(x: Tensor, gamma: Tensor, beta: Tensor, mu: np.ndarray, var: np.ndarray,
                      eps: float = 1e-5) -> Tensor:
    inv = 1.0 / np.sqrt(np.asarray(var) + eps)
    xhat = (x.data - np.asarray(mu)[None, :, None, None]) * inv[None, :, None, None]
    ga = gamma.data[None, :, None, None]
    y = ga * xhat + beta.data[None, :, None, None]

    def back(g):
        return (g * ga * inv[None, :, None, None], (g * xhat).sum(axis=(0, 2, 3)),
                g.sum(axis=(0, 2, 3)))

    return _node(y, (x, gamma, beta), back)

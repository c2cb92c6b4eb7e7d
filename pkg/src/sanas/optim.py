"""Optimizers that only touch parameters which received a gradient this step."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import Tensor


def cosine_lr(base: float, step: int, total: int, floor: float = 0.0) -> float:
    if total <= 0:
        return base
    return floor + 0.5 * (base - floor) * (1.0 + math.cos(math.pi * min(step, total) / total))


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float = 0.05, momentum: float = 0.9,
                 weight_decay: float = 0.0, lr_scale: dict[int, float] | None = None):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_scale = lr_scale or {}
        self._buf: dict[int, np.ndarray] = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> list[Tensor]:
        touched = []
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            buf = self._buf.get(id(p))
            buf = g.copy() if buf is None else self.momentum * buf + g
            self._buf[id(p)] = buf
            p.data -= self.lr * self.lr_scale.get(id(p), 1.0) * buf
            touched.append(p)
        return touched


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}
        self._t: dict[int, int] = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            k = id(p)
            t = self._t.get(k, 0) + 1
            self._t[k] = t
            m = self.b1 * self._m.get(k, 0.0) + (1 - self.b1) * p.grad
            v = self.b2 * self._v.get(k, 0.0) + (1 - self.b2) * p.grad ** 2
            self._m[k], self._v[k] = m, v
            mhat = m / (1 - self.b1 ** t)
            vhat = v / (1 - self.b2 ** t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

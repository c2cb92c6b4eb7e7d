"""Synthetic fitness landscapes and small spaces shared by the tests."""

import hashlib

import numpy as np

from sanas.space import SearchSpace, Stage
from sanas.tensor import make_rng


def toy_space() -> SearchSpace:
    """176 genes: 8x8 input, two stages, Attn at 4x4 and below."""
    return SearchSpace(stages=(Stage(2, 1, 8, 8), Stage(1, 1, 16, 4)), input_resolution=8,
                       attn_max_resolution=4)


def _hash_unit(text: str, seed: int) -> float:
    h = hashlib.sha256(f"{seed}:{text}".encode()).digest()
    return int.from_bytes(h[:8], "little") / 2.0 ** 64


def additive_fitness(space: SearchSpace, seed: int):
    """Sum of per-(slot, type, flag) scores plus a tiny hash term that breaks ties."""
    table = make_rng(seed, "additive").normal(size=(space.max_depth, 4, 2))

    def f(gene) -> float:
        s = sum(table[i, t, fl] for i, (t, fl, a) in enumerate(zip(gene.types, gene.flags, gene.active)) if a)
        return float(s + 1e-6 * _hash_unit(gene.to_text(), seed))

    return f


def rugged_fitness(space: SearchSpace, seed: int, noise: float = 0.5):
    """Additive signal, adjacent-slot interactions and per-gene hash noise."""
    rng = make_rng(seed, "rugged")
    single = rng.normal(size=(space.max_depth, 4, 2))
    pair = rng.normal(size=(space.max_depth, 4, 4)) * 0.7

    def f(gene) -> float:
        s = 0.0
        act = [i for i in range(len(gene)) if gene.active[i]]
        for i in act:
            s += single[i, gene.types[i], gene.flags[i]]
        for a, b in zip(act, act[1:]):
            s += pair[a, gene.types[a], gene.types[b]]
        return float(s + noise * _hash_unit(gene.to_text(), seed))

    return f


# -- brute-force operator references ------------------------------------------

def _padded(x: np.ndarray, p: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv_loops(x: np.ndarray, w: np.ndarray, stride: int = 1) -> np.ndarray:
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    xp = _padded(x, p)
    ho, wo = -(-h // stride), -(-wd // stride)
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for f in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride: i * stride + k, j * stride: j * stride + k]
                    out[b, f, i, j] = np.sum(patch * w[f])
    return out


def adder_loops(x: np.ndarray, w: np.ndarray, stride: int = 1) -> np.ndarray:
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    xp = _padded(x, p)
    ho, wo = -(-h // stride), -(-wd // stride)
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for f in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride: i * stride + k, j * stride: j * stride + k]
                    out[b, f, i, j] = -np.sum(np.abs(patch - w[f]))
    return out


def attention_loops(x: np.ndarray, wq, wk, wv, wo, heads: int) -> np.ndarray:
    b, n, _ = x.shape
    d = wq.shape[1]
    dk = d // heads
    out = np.zeros((b, n, d))
    for s in range(b):
        ctx = np.zeros((n, d))
        for h in range(heads):
            cols = slice(h * dk, (h + 1) * dk)
            q, k, v = x[s] @ wq[:, cols], x[s] @ wk[:, cols], x[s] @ wv[:, cols]
            for i in range(n):
                scores = np.array([q[i] @ k[j] for j in range(n)]) / np.sqrt(dk)
                e = np.exp(scores - scores.max())
                p = e / e.sum()
                ctx[i, cols] = sum(p[j] * v[j] for j in range(n))
        out[s] = ctx @ wo
    return out

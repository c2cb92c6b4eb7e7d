"""Heterogeneous weight sharing.

One :class:`SharedWeightPool` per layer position feeds three consumers:

* Conv uses the pool tensor directly,
* Shift uses its power-of-two quantization (straight-through gradient),
* Add uses :func:`transform`, a learnable piecewise-linear rescaling of the
  sorted pool that lets the adder view drift toward a Laplacian while the
  pool itself stays Gaussian.

The distribution regularizer compares the Conv view with N(0, 1) and the Add
view with Laplace(0, 1).  Two estimators are available: ``"nll"`` (mean
negative log-density only) and ``"spacing"`` (the same minus an m-spacing
entropy estimate, i.e. a consistent estimate of the KL divergence).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ConfigError
from .operators import ShiftQuant, quantize_pow2
from .tensor import (Tensor, _node, cross_entropy, inverse_permutation, mean, parameter,
                     repeat_segments, reshape, sort_desc_with_permutation, square, tabs, take)

KERNEL_DIM = 200
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
LOG2 = math.log(2.0)


def segment_counts(n: int, d: int) -> np.ndarray:
    """Interval lengths: ``n // d`` each, the last one absorbing the remainder."""
    s = n // d
    counts = np.full(d, s, dtype=np.intp)
    counts[-1] += n - s * d
    return counts


class TransformKernel:
    def __init__(self, n: int, d: int = KERNEL_DIM, name: str = "kernel"):
        if n < 1 or d < 1:
            raise ConfigError(f"transform kernel needs n >= 1 and d >= 1, got n={n}, d={d}")
        self.n = n
        self.d = min(d, n)
        self.counts = segment_counts(n, self.d)
        self.alphas = parameter(np.ones(self.d), name=f"{name}.alphas")

    @property
    def num_parameters(self) -> int:
        return self.d


class SharedWeightPool:
    def __init__(self, weights: Tensor, d: int = KERNEL_DIM, name: str = "pool"):
        self.weights = weights
        self.kernel = TransformKernel(weights.size, d, name=f"{name}.kernel")

    def conv_view(self) -> Tensor:
        return self.weights

    def shift_view(self) -> ShiftQuant:
        return quantize_pow2(self.weights)

    def add_view(self) -> Tensor:
        return transform(self)

    def parameters(self) -> list[Tensor]:
        return [self.weights, self.kernel.alphas]

    @property
    def num_parameters(self) -> int:
        return self.weights.size + self.kernel.num_parameters


def transform(pool: SharedWeightPool) -> Tensor:
    """Sort descending, scale interval i by alpha_i, undo the sort."""
    w = pool.weights
    srt, perm = sort_desc_with_permutation(w)
    scaled = srt * repeat_segments(pool.kernel.alphas, pool.kernel.counts)
    return reshape(take(scaled, inverse_permutation(perm)), w.shape)


def nll_gaussian(w: Tensor) -> Tensor:
    return mean(square(w)) * 0.5 + HALF_LOG_2PI


def nll_laplacian(w: Tensor) -> Tensor:
    return mean(tabs(w)) + LOG2


def spacing_entropy(w: Tensor, m: int | None = None) -> Tensor:
    """Vasicek m-spacing entropy estimate of the sample ``w`` (order held fixed).

    The window defaults to ``round(n ** (1/3))``; the common ``sqrt(n)``
    window over-smooths the tails enough that a gradient optimizer can lower
    the estimate while moving away from the target density.
    """
    flat = w.data.reshape(-1)
    n = flat.size
    if n < 2:
        raise ContractError("spacing entropy needs at least two samples")
    m = m or max(1, int(round(n ** (1.0 / 3.0))))
    m = min(m, n - 1)
    order = np.argsort(flat, kind="stable")
    y = flat[order]
    idx = np.arange(n)
    hi = np.minimum(idx + m, n - 1)
    lo = np.maximum(idx - m, 0)
    gap = y[hi] - y[lo]
    ok = gap > 1e-300
    safe = np.where(ok, gap, 1.0)
    h = float(np.mean(np.log(np.where(ok, safe * n / (2.0 * m), 1e-300))))

    def back(g):
        coef = np.where(ok, float(g) / (n * safe), 0.0)
        gy = np.zeros(n)
        np.add.at(gy, hi, coef)
        np.add.at(gy, lo, -coef)
        gw = np.empty(n)
        gw[order] = gy
        return (gw.reshape(w.shape),)

    return _node(np.asarray(h), (w,), back)


def kl_gaussian(w: Tensor) -> Tensor:
    return nll_gaussian(w) - spacing_entropy(w)


def kl_laplacian(w: Tensor) -> Tensor:
    return nll_laplacian(w) - spacing_entropy(w)


@dataclass(frozen=True)
class LossConfig:
    kl_weight: float = 1.0
    estimator: str = "spacing"
    laplace_scale: float = 1.0  # fixed target scale

    def __post_init__(self):
        if self.kl_weight < 0:
            raise ConfigError(f"kl_weight must be >= 0, got {self.kl_weight}")
        if self.estimator not in ("spacing", "nll"):
            raise ConfigError(f"unknown KL estimator {self.estimator!r}")
        if self.laplace_scale != 1.0:
            raise ConfigError("the Laplacian target scale is fixed at 1")


def distribution_terms(pool: SharedWeightPool, config: LossConfig) -> Tensor:
    """Regularizer of one pool: Conv view vs N(0,1) plus Add view vs Laplace(0,1)."""
    add_view = transform(pool)
    if config.estimator == "nll":
        return nll_gaussian(pool.weights) + nll_laplacian(add_view)
    return kl_gaussian(pool.weights) + kl_laplacian(add_view)


def supernet_loss(logits: Tensor, labels: np.ndarray, pools, config: LossConfig = LossConfig()):
    """Cross-entropy plus the weighted distribution terms of every pool.

    Returns ``(total, ce, kl)``; ``kl`` is the unweighted sum over pools.
    """
    ce = cross_entropy(logits, labels)
    if config.kl_weight == 0 or not pools:
        return ce, ce, Tensor(0.0)
    kl = None
    for pool in pools:
        term = distribution_terms(pool, config)
        kl = term if kl is None else kl + term
    return ce + kl * config.kl_weight, ce, kl


# -- histogram diagnostic ----------------------------------------------------

def _gaussian_cdf(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.vectorize(math.erf)(x / math.sqrt(2.0)))


def _laplace_cdf(x: np.ndarray) -> np.ndarray:
    return np.where(x < 0, 0.5 * np.exp(np.minimum(x, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(x, 0.0)))


TARGET_CDFS = {"gaussian": _gaussian_cdf, "laplacian": _laplace_cdf}


def histogram_range(w: np.ndarray) -> float:
    sd = float(np.std(w))
    return 6.0 * sd if sd > 0 else 6.0


def kl_to_target(w, target: str, bins: int = 64) -> float:
    """Histogram estimate of KL(empirical || target) over [-6 sd, 6 sd].

    Every bin gets one pseudo-count; the target mass is renormalized to the
    histogram range.  A zero-variance sample uses the range [-6, 6].
    """
    data = (w.data if isinstance(w, Tensor) else np.asarray(w, dtype=np.float64)).reshape(-1)
    if data.size < 100:
        raise ContractError(f"kl_to_target needs >= 100 samples, got {data.size}")
    if bins < 16:
        raise ContractError(f"kl_to_target needs >= 16 bins, got {bins}")
    try:
        cdf = TARGET_CDFS[target]
    except KeyError:
        raise ConfigError(f"unknown target {target!r}") from None
    r = histogram_range(data)
    edges = np.linspace(-r, r, bins + 1)
    counts, _ = np.histogram(np.clip(data, -r, r), bins=edges)
    p = (counts + 1.0) / (counts.sum() + bins)
    q = np.diff(cdf(edges))
    q = np.maximum(q, 1e-300)
    q = q / q.sum()
    return float(max(np.sum(p * np.log(p / q)), 0.0))


def storage_report(pool_sizes, d: int = KERNEL_DIM) -> dict:
    """Conv/Shift/Add candidate-weight storage with and without pooling."""
    pooled = sum(n + min(d, n) for n in pool_sizes)
    unpooled = sum(3 * n for n in pool_sizes)
    return {
        "positions": len(pool_sizes),
        "pooled": int(pooled),
        "unpooled": int(unpooled),
        "kernel_params": int(sum(min(d, n) for n in pool_sizes)),
        "reduction": 1.0 - pooled / unpooled if unpooled else 0.0,
    }

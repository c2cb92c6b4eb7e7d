import math

import numpy as np
import pytest

from gradcheck import check
from sanas.errors import ConfigError, ContractError
from sanas.optim import Adam
from sanas.tensor import Tensor, cross_entropy, make_rng, parameter
from sanas.weightshare import (KERNEL_DIM, LossConfig, SharedWeightPool, TransformKernel,
                               kl_laplacian, kl_to_target, nll_gaussian, nll_laplacian, segment_counts,
                               spacing_entropy, storage_report, supernet_loss, transform)


def _pool(w, d=KERNEL_DIM):
    return SharedWeightPool(parameter(np.asarray(w, dtype=np.float64)), d)


def test_segment_counts_remainder_in_last_interval():
    np.testing.assert_array_equal(segment_counts(10, 3), [3, 3, 4])
    assert segment_counts(1000, 200).sum() == 1000


def test_kernel_dim_capped_at_pool_size():
    k = TransformKernel(50, 200)
    assert k.d == 50 and k.num_parameters == 50
    with pytest.raises(ConfigError):
        TransformKernel(0, 200)


def test_identity_transform_is_exact():
    w = make_rng(0).standard_normal((8, 4, 3, 3))
    assert np.array_equal(transform(_pool(w)).data, w)


def test_hand_worked_transform():
    pool = _pool([3.0, 1.0, 4.0, 2.0], d=2)
    pool.kernel.alphas.data = np.array([2.0, 0.5])
    # sorted [4,3,2,1] -> [8,6,1,0.5], mapped back to original positions
    np.testing.assert_array_equal(transform(pool).data, [6.0, 0.5, 8.0, 1.0])


def test_transform_multiset_oracle():
    rng = make_rng(1)
    w = rng.standard_normal(1000)
    pool = _pool(w, d=200)
    pool.kernel.alphas.data = rng.uniform(0.5, 2.0, 200)
    rank = np.empty(1000, dtype=int)
    rank[np.argsort(-w, kind="stable")] = np.arange(1000)
    expected = w * np.repeat(pool.kernel.alphas.data, segment_counts(1000, 200))[rank]
    np.testing.assert_array_equal(np.sort(transform(pool).data), np.sort(expected))


def _distinct_normal(rng, shape, gap=1e-3):
    while True:
        w = rng.standard_normal(shape)
        if np.min(np.diff(np.sort(w.ravel()))) > gap:
            return w


def test_transform_gradients():
    rng = make_rng(2)
    w = _distinct_normal(rng, 30)
    alphas = rng.uniform(0.5, 1.5, 7)

    def f(wt, a):
        pool = SharedWeightPool(wt, 7)
        pool.kernel.alphas = a
        return transform(pool)

    assert check(f, [w, alphas], rng) < 1e-5


def test_nll_analytic_values():
    zero = Tensor(np.zeros(1))
    assert nll_gaussian(zero).item() == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-15)
    assert nll_laplacian(zero).item() == pytest.approx(math.log(2.0), abs=1e-15)
    big = Tensor(make_rng(3).standard_normal(200_000))
    assert nll_gaussian(big).item() == pytest.approx(0.5 * math.log(2 * math.pi) + 0.5, abs=0.01)


def test_laplacian_nll_minimized_at_median():
    w = make_rng(4).standard_normal(501)
    w = np.concatenate([w, -w])
    vals = [nll_laplacian(Tensor(w - s)).item() for s in (-0.2, -0.05, 0.0, 0.05, 0.2)]
    assert np.argmin(vals) == 2


def test_spacing_entropy_of_gaussian():
    w = Tensor(make_rng(5).standard_normal(20_000))
    assert spacing_entropy(w).item() == pytest.approx(0.5 * math.log(2 * math.pi * math.e), abs=0.03)


def test_spacing_kl_near_zero_on_target_samples():
    lap = make_rng(6).laplace(0, 1, 20_000)
    assert abs(kl_laplacian(Tensor(lap)).item()) < 0.03


def test_spacing_entropy_gradient():
    rng = make_rng(7)
    w = _distinct_normal(rng, 60)
    assert check(lambda t: spacing_entropy(t, m=3), [w], rng) < 1e-5


def test_supernet_loss_nll_decomposition():
    rng = make_rng(8)
    logits = rng.standard_normal((4, 3))
    labels = np.array([0, 1, 2, 1])
    pool = _pool(rng.standard_normal(12), d=3)
    pool.kernel.alphas.data = np.array([1.5, 1.0, 0.5])
    cfg = LossConfig(kl_weight=0.7, estimator="nll")
    total, ce, kl = supernet_loss(Tensor(logits), labels, [pool], cfg)
    z = logits - logits.max(axis=1, keepdims=True)
    ref_ce = float(np.mean(np.log(np.exp(z).sum(axis=1)) - z[np.arange(4), labels]))
    add = transform(pool).data
    ref_kl = (np.mean(pool.weights.data ** 2) / 2 + 0.5 * math.log(2 * math.pi)) + (np.mean(np.abs(add)) + math.log(2))
    assert abs(ce.item() - ref_ce) < 1e-12
    assert abs(kl.item() - ref_kl) < 1e-12
    assert abs(total.item() - (ref_ce + 0.7 * ref_kl)) < 1e-12


def test_zero_kl_weight_is_plain_cross_entropy():
    rng = make_rng(9)
    logits = Tensor(rng.standard_normal((4, 3)))
    labels = np.array([0, 1, 2, 1])
    total, _, _ = supernet_loss(logits, labels, [_pool(rng.standard_normal(12))], LossConfig(kl_weight=0.0))
    assert total.item() == cross_entropy(logits, labels).item()


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(kl_weight=-1)
    with pytest.raises(ConfigError):
        LossConfig(estimator="histogram")
    with pytest.raises(ConfigError):
        LossConfig(laplace_scale=2.0)


def test_distribution_terms_touch_every_pool():
    rng = make_rng(10)
    pools = [_pool(rng.standard_normal(20), d=4) for _ in range(3)]
    total, _, _ = supernet_loss(Tensor(np.zeros((1, 2))), np.array([0]), pools, LossConfig())
    total.backward()
    for p in pools:
        assert p.weights.grad is not None and p.kernel.alphas.grad is not None


def test_kl_to_target_properties():
    rng = make_rng(11)
    assert kl_to_target(rng.standard_normal(100_000), "gaussian") < 0.01
    assert kl_to_target(rng.laplace(0, 1, 100_000), "laplacian") < 0.01
    assert kl_to_target(np.zeros(1000), "gaussian") > 1
    g = rng.standard_normal(20_000)
    assert kl_to_target(g, "laplacian") > kl_to_target(g, "gaussian")
    with pytest.raises(ContractError):
        kl_to_target(np.zeros(99), "gaussian")
    with pytest.raises(ContractError):
        kl_to_target(np.zeros(1000), "gaussian", bins=8)


def test_alpha_only_training_moves_add_view_toward_laplacian():
    rng = make_rng(12)
    pool = _pool(rng.standard_normal(10_000))
    before = kl_to_target(transform(pool).data, "laplacian")
    opt = Adam([pool.kernel.alphas], lr=0.05)
    for _ in range(200):
        opt.zero_grad()
        kl_laplacian(transform(pool)).backward()
        opt.step()
    assert kl_to_target(transform(pool).data, "laplacian") < before / 2


def test_storage_report_integer_arithmetic():
    rep = storage_report([1000, 50], d=200)
    assert rep["pooled"] == 1000 + 200 + 50 + 50
    assert rep["unpooled"] == 3 * 1050
    assert rep["kernel_params"] == 250

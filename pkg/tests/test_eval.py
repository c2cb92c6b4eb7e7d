import csv
import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose

from oracles import toy_space
from sanas.data import SyntheticParams, make_synthetic
from sanas.errors import ContractError
from sanas.evaluation import (StudyConfig, average_ranks, correlations, distribution_report, fit_gaussian,
                              fit_laplacian, kendall_tau, pearson_r, pool_distribution, ranking_study, spearman_rho,
                              write_distribution_csv)
from sanas.supernet import Supernet, TrainConfig, train_supernet
from sanas.tensor import Tensor, make_rng
from sanas.weightshare import LossConfig, SharedWeightPool, kl_to_target, transform


def tau_by_pairs(x, y) -> float:
    conc = disc = tx = ty = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        a, b = np.sign(x[i] - x[j]), np.sign(y[i] - y[j])
        tx += a == 0
        ty += b == 0
        conc += a * b > 0
        disc += a * b < 0
    n0 = len(x) * (len(x) - 1) // 2
    return (conc - disc) / np.sqrt((n0 - tx) * (n0 - ty))


def test_kendall_examples():
    assert kendall_tau([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0
    assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    # only the (2, 3) pair is discordant: 5 concordant, 1 discordant over 6 pairs
    assert kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(2 / 3, abs=1e-15)
    assert tau_by_pairs([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(2 / 3, abs=1e-15)


def test_kendall_matches_pair_enumeration():
    rng = make_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 12))
        x = rng.integers(0, 4, n).astype(float)
        y = rng.integers(0, 4, n).astype(float)
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        assert kendall_tau(x, y) == pytest.approx(tau_by_pairs(x, y), abs=1e-15)


@pytest.mark.parametrize("x, y", [([1, 2, 3], [1, 2]), ([1], [1]), ([1, 1, 1], [1, 2, 3])])
def test_kendall_contract_errors(x, y):
    with pytest.raises(ContractError):
        kendall_tau(x, y)


def test_pearson_spearman_examples():
    x = make_rng(1).normal(size=20)
    assert pearson_r(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-15)
    assert spearman_rho(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-15)
    assert pearson_r(x, -x) == pytest.approx(-1.0, abs=1e-15)
    assert spearman_rho(x, -x) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(ContractError):
        pearson_r(x, np.ones(20))


def test_spearman_is_pearson_on_ranks():
    rng = make_rng(2)
    for _ in range(20):
        x, y = rng.normal(size=20), rng.integers(0, 5, 20).astype(float)
        rx = np.argsort(np.argsort(x)) + 1.0
        ry = np.array([np.mean(np.flatnonzero(np.sort(y) == v)) + 1 for v in y])
        xc, yc = rx - rx.mean(), ry - ry.mean()
        ref = xc @ yc / np.sqrt((xc @ xc) * (yc @ yc))
        assert spearman_rho(x, y) == pytest.approx(ref, abs=1e-14)


def test_average_ranks_ties():
    assert_allclose(average_ranks([10, 20, 20, 5]), [2, 3.5, 3.5, 1])


def test_monotone_invariance():
    rng = make_rng(3)
    x, y = rng.normal(size=15), rng.normal(size=15)
    base = correlations(x, y)
    for f in (np.exp, lambda v: v ** 3, lambda v: np.arctan(v) + 7):
        assert kendall_tau(f(x), y) == pytest.approx(base["tau"], abs=1e-15)
        assert spearman_rho(x, f(y)) == pytest.approx(base["spearman"], abs=1e-15)
    assert pearson_r(3 * x + 2, y) == pytest.approx(base["pearson"], abs=1e-13)
    assert pearson_r(x ** 3, y) != pytest.approx(base["pearson"], abs=1e-6)


def test_fits_are_maximum_likelihood():
    w = make_rng(4).laplace(0.5, 2.0, 20001)
    loc, b = fit_laplacian(w)
    assert loc == np.median(w) and b == pytest.approx(np.mean(np.abs(w - np.median(w))))
    mu, sd = fit_gaussian(w)
    assert mu == pytest.approx(np.mean(w)) and sd == pytest.approx(np.std(w))


def test_fresh_gaussian_pool_prefers_gaussian_fit():
    w = make_rng(5).normal(0, 0.1, (16, 8, 3, 3))
    d = pool_distribution("p", w, w)
    assert d.kl_conv_fit_gaussian < d.kl_conv_fit_laplacian


def test_identity_kernel_add_view_equals_conv_view():
    pool = SharedWeightPool(Tensor(make_rng(6).normal(size=(8, 8, 3, 3))))
    d = pool_distribution("p", pool.weights.data, transform(pool).data)
    assert d.gaussian_fit == fit_gaussian(d.add_view)
    assert_allclose(d.add_view, d.conv_view, rtol=0, atol=1e-15)


def small_data():
    return make_synthetic(SyntheticParams(size=8, n_train=256, n_val=128, noise=2.0))


def test_hws_training_pulls_add_view_toward_laplacian():
    sp = toy_space()
    train, _ = small_data()
    net = Supernet(sp, "heterogeneous", 0)
    train_supernet(net, sp, train, TrainConfig(steps=150, batch_size=16), seed=0, loss_cfg=LossConfig(kl_weight=1.0))
    for pool in net.pools.values():
        assert kl_to_target(transform(pool), "laplacian") < kl_to_target(pool.weights, "laplacian")
    rep = distribution_report(net)
    assert [d.name for d in rep] == [f"slots.{i}.pool" for i in sorted(net.pools)]


def test_distribution_csv(tmp_path):
    net = Supernet(toy_space(), "heterogeneous", 0)
    path = tmp_path / "d.csv"
    write_distribution_csv(path, distribution_report(net), bins=32)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["pool", "view", "bin_left", "bin_right", "count", "fitted_gaussian_density",
                             "fitted_laplacian_density"]
    assert len(rows) == len(net.pools) * 2 * 32
    first = [r for r in rows if r["pool"] == "slots.0.pool" and r["view"] == "conv"]
    assert sum(int(r["count"]) for r in first) == net.pools[0].weights.size


def test_study_rejects_small_pool():
    train, val = small_data()
    with pytest.raises(ContractError, match="at least 10"):
        ranking_study(toy_space(), train, val, StudyConfig(pool_size=1))


def test_perfect_ordering_gives_unit_metrics():
    x = [0.1, 0.4, 0.5, 0.9, 0.95]
    assert correlations(x, x) == {"tau": 1.0, "pearson": 1.0, "spearman": 1.0}


def test_study_csv_recomputation(tmp_path):
    train, val = small_data()
    cfg = StudyConfig(pool_size=10, seeds=(0,), supernet=TrainConfig(steps=20, batch_size=16),
                      standalone=TrainConfig(steps=10, batch_size=16), calib_size=64)
    study = ranking_study(toy_space(), train, val, cfg)
    study.write_csv(tmp_path / "s.csv")
    study.write_accuracies(tmp_path / "a.csv")
    with open(tmp_path / "s.csv") as fh:
        rows = list(csv.DictReader(fh))
    with open(tmp_path / "a.csv") as fh:
        acc = list(csv.DictReader(fh))
    assert [r["mode"] for r in rows] == ["naive", "heterogeneous"]
    sa = [float(a["standalone"]) for a in acc]
    for r in rows:
        inh = [float(a[f"{r['mode']}_seed{r['seed']}"]) for a in acc]
        assert all(0 <= v <= 1 for v in inh)
        if len(set(inh)) > 1 and len(set(sa)) > 1:
            assert float(r["tau"]) == kendall_tau(inh, sa)
            assert float(r["pearson"]) == pearson_r(inh, sa)
            assert float(r["spearman"]) == spearman_rho(inh, sa)
    assert set(study.medians()) == {"naive", "heterogeneous"}

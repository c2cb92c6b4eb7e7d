"""Ranking correlation, the sharing-mode ranking study and weight-distribution diagnostics."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ContractError
from .space import ArchGene, SearchSpace, sample_uniform
from .supernet import Supernet, TrainConfig, inherit_and_eval, retrain_subnet, train_supernet
from .tensor import Tensor, make_rng
from .weightshare import LossConfig, histogram_range, kl_to_target, spacing_entropy, transform


# -- correlation -------------------------------------------------------------

def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ContractError(f"correlation needs two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ContractError("correlation needs at least 2 points")
    return x, y


def kendall_tau(x, y) -> float:
    """Tie-corrected Kendall tau-b."""
    x, y = _pair(x, y)
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(len(x), 1)
    sx, sy = dx[iu], dy[iu]
    n0 = len(sx)
    n1 = int(np.sum(sx == 0))
    n2 = int(np.sum(sy == 0))
    denom = math.sqrt((n0 - n1) * (n0 - n2))
    if denom == 0:
        raise ContractError("kendall_tau is undefined when either input is all tied")
    return float(np.sum(sx * sy) / denom)


def pearson_r(x, y) -> float:
    x, y = _pair(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx == 0 or syy == 0:
        raise ContractError("pearson_r is undefined for zero-variance input")
    return float(np.clip((xc @ yc) / math.sqrt(sxx * syy), -1.0, 1.0))


def average_ranks(x) -> np.ndarray:
    """1-based ranks, ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i: j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(x, y) -> float:
    x, y = _pair(x, y)
    return pearson_r(average_ranks(x), average_ranks(y))


def correlations(inherited, standalone) -> dict[str, float]:
    return {"tau": kendall_tau(inherited, standalone), "pearson": pearson_r(inherited, standalone),
            "spearman": spearman_rho(inherited, standalone)}


# -- distribution diagnostics --------------------------------------------------

def gaussian_density(x, mu: float, sd: float) -> np.ndarray:
    return np.exp(-0.5 * ((x - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))


def laplace_density(x, loc: float, b: float) -> np.ndarray:
    return np.exp(-np.abs(x - loc) / b) / (2 * b)


def fit_gaussian(w: np.ndarray) -> tuple[float, float]:
    """Maximum-likelihood (mean, std)."""
    return float(np.mean(w)), float(np.std(w))


def fit_laplacian(w: np.ndarray) -> tuple[float, float]:
    """Maximum-likelihood (median, mean absolute deviation from the median)."""
    loc = float(np.median(w))
    return loc, float(np.mean(np.abs(w - loc)))


@dataclass
class PoolDistribution:
    name: str
    conv_view: np.ndarray
    add_view: np.ndarray
    gaussian_fit: tuple[float, float]
    laplacian_fit: tuple[float, float]
    kl_conv_gaussian: float
    kl_conv_laplacian: float
    kl_add_laplacian: float
    kl_add_gaussian: float
    kl_conv_fit_gaussian: float
    kl_conv_fit_laplacian: float

    def stats(self) -> dict:
        return {"pool": self.name, "conv_mean": self.gaussian_fit[0], "conv_std": self.gaussian_fit[1],
                "add_median": self.laplacian_fit[0], "add_scale": self.laplacian_fit[1],
                "kl_conv_gaussian": self.kl_conv_gaussian, "kl_conv_laplacian": self.kl_conv_laplacian,
                "kl_add_laplacian": self.kl_add_laplacian, "kl_add_gaussian": self.kl_add_gaussian,
                "kl_conv_fit_gaussian": self.kl_conv_fit_gaussian,
                "kl_conv_fit_laplacian": self.kl_conv_fit_laplacian}


def kl_to_fit(w: np.ndarray, family: str) -> float:
    """KL of ``w`` to its own maximum-likelihood ``family`` fit.

    Spacing-entropy estimate minus mean log-density; the entropy term is
    shared, so comparing families compares their likelihoods exactly.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    if family == "gaussian":
        mu, sd = fit_gaussian(w)
        nll = 0.5 * np.mean(((w - mu) / sd) ** 2) + np.log(sd * math.sqrt(2 * math.pi))
    elif family == "laplacian":
        loc, b = fit_laplacian(w)
        nll = np.mean(np.abs(w - loc)) / b + np.log(2 * b)
    else:
        raise ContractError(f"unknown family {family!r}")
    return float(nll - spacing_entropy(Tensor(w)).data)


def pool_distribution(name: str, conv_view: np.ndarray, add_view: np.ndarray) -> PoolDistribution:
    conv_view = np.asarray(conv_view, dtype=np.float64).ravel()
    add_view = np.asarray(add_view, dtype=np.float64).ravel()
    return PoolDistribution(
        name, conv_view, add_view, fit_gaussian(conv_view), fit_laplacian(add_view),
        kl_to_target(conv_view, "gaussian"), kl_to_target(conv_view, "laplacian"),
        kl_to_target(add_view, "laplacian"), kl_to_target(add_view, "gaussian"),
        kl_to_fit(conv_view, "gaussian"), kl_to_fit(conv_view, "laplacian"))


def distribution_report(net: Supernet) -> list[PoolDistribution]:
    """Per shared pool: the Conv view and the Add view the net actually uses."""
    out = []
    for i, pool in sorted(net.pools.items()):
        add = transform(pool).data if net.mode == "heterogeneous" else pool.weights.data
        out.append(pool_distribution(f"slots.{i}.pool", pool.weights.data, add))
    return out


def histogram_rows(d: PoolDistribution, bins: int = 64) -> list[dict]:
    """Histogram of both views, each with its own ML Gaussian and Laplacian fitted densities."""
    rows = []
    for view, w in (("conv", d.conv_view), ("add", d.add_view)):
        r = histogram_range(w)
        counts, edges = np.histogram(np.clip(w, -r, r), bins=np.linspace(-r, r, bins + 1))
        mid = 0.5 * (edges[:-1] + edges[1:])
        mu, sd = fit_gaussian(w)
        loc, b = fit_laplacian(w)
        g = gaussian_density(mid, mu, sd) if sd > 0 else np.zeros(bins)
        lap = laplace_density(mid, loc, b) if b > 0 else np.zeros(bins)
        for k in range(bins):
            rows.append({"pool": d.name, "view": view, "bin_left": edges[k], "bin_right": edges[k + 1],
                         "count": int(counts[k]), "fitted_gaussian_density": g[k],
                         "fitted_laplacian_density": lap[k]})
    return rows


def write_distribution_csv(path, report: list[PoolDistribution], bins: int = 64) -> None:
    cols = ["pool", "view", "bin_left", "bin_right", "count", "fitted_gaussian_density", "fitted_laplacian_density"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for d in report:
            for row in histogram_rows(d, bins):
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


# -- ranking study ----------------------------------------------------------------

@dataclass(frozen=True)
class StudyConfig:
    pool_size: int = 20
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    modes: tuple[str, ...] = ("naive", "heterogeneous")
    supernet: TrainConfig = TrainConfig(steps=2000, batch_size=16)
    standalone: TrainConfig = TrainConfig(steps=200, batch_size=16)
    # unit-scale targets slow BN-normalized training at kl_weight=1 (see README)
    loss: LossConfig = LossConfig(kl_weight=0.01)
    pool_seed: int = 0
    calib_size: int = 256


@dataclass
class RankingStudy:
    genes: list[ArchGene]
    standalone: list[float]
    inherited: dict[str, dict[int, list[float]]]
    rows: list[dict] = field(default_factory=list)
    distributions: dict[str, dict[int, list[PoolDistribution]]] = field(default_factory=dict)

    def medians(self) -> dict[str, dict[str, float]]:
        out = {}
        for mode in self.inherited:
            sel = [r for r in self.rows if r["mode"] == mode]
            out[mode] = {k: float(np.median([r[k] for r in sel])) for k in ("tau", "pearson", "spearman")}
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "seed", "tau", "pearson", "spearman"])
            for r in self.rows:
                w.writerow([r["mode"], r["seed"], repr(r["tau"]), repr(r["pearson"]), repr(r["spearman"])])

    def write_accuracies(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            keys = [(m, s) for m in self.inherited for s in self.inherited[m]]
            w.writerow(["gene", "standalone"] + [f"{m}_seed{s}" for m, s in keys])
            for k, g in enumerate(self.genes):
                w.writerow([g.to_text(), repr(self.standalone[k])] + [repr(self.inherited[m][s][k]) for m, s in keys])


def sample_pool(space: SearchSpace, size: int, seed: int) -> list[ArchGene]:
    rng = make_rng(seed, "gene-pool")
    genes: dict[ArchGene, None] = {}
    for _ in range(1000 * size):
        genes[sample_uniform(space, rng)] = None
        if len(genes) == size:
            return list(genes)
    raise ContractError(f"space too small for {size} distinct genes")


def ranking_study(space: SearchSpace, train: Dataset, val: Dataset, cfg: StudyConfig = StudyConfig(),
                  jobs: int = 1, progress=None) -> RankingStudy:
    """Correlate inherited with standalone accuracy on a fixed gene pool, per sharing mode and seed."""
    if cfg.pool_size < 10:
        raise ContractError(f"ranking study needs a gene pool of at least 10, got {cfg.pool_size}")
    genes = sample_pool(space, cfg.pool_size, cfg.pool_seed)
    calib = train.images[: cfg.calib_size]

    def reference(g: ArchGene) -> float:
        model = retrain_subnet(g, space, train, cfg.standalone, seed=cfg.pool_seed)
        return inherit_and_eval(model, g, val, calib)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            standalone = list(ex.map(reference, genes))
    else:
        standalone = [reference(g) for g in genes]
    study = RankingStudy(genes, standalone, {m: {} for m in cfg.modes}, [], {m: {} for m in cfg.modes})
    for seed in cfg.seeds:
        for mode in cfg.modes:
            net = Supernet(space, mode, seed)
            loss = cfg.loss if mode == "heterogeneous" else LossConfig(kl_weight=0.0)
            train_supernet(net, space, train, cfg.supernet, seed=seed, loss_cfg=loss)
            acc = [inherit_and_eval(net, g, val, calib) for g in genes]
            study.inherited[mode][seed] = acc
            if mode in ("naive", "heterogeneous"):
                study.distributions[mode][seed] = distribution_report(net)
            row = {"mode": mode, "seed": seed, **correlations(acc, standalone)}
            study.rows.append(row)
            if progress:
                progress(row)
    return study

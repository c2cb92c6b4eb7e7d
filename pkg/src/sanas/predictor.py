"""Three-layer MLP that predicts subnet latency from the gene encoding."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from .errors import ContractError, FormatError
from .optim import Adam
from .space import ArchGene, SearchSpace, resolutions, sample_uniform
from .tensor import Tensor, make_rng, matmul, mean, no_grad, parameter, relu, softplus, square, tsum


def gene_features(gene: ArchGene, space: SearchSpace) -> np.ndarray:
    """Per slot: one-hot type, downsample flag, active flag and relative input
    area; then global counts.

    Global counts are the number of active blocks of each type, the number of
    downsampling layers, and per (stage, type) the active blocks weighted by
    their output area and squared output area (relative to the input).
    """
    slots = []
    type_count = np.zeros(4)
    type_area = np.zeros((len(space.stages), 4, 2))
    res = resolutions(gene, space)
    for i in range(len(gene)):
        one_hot = np.zeros(4)
        area = 0.0
        if gene.active[i]:
            area = (res[i][0] / space.input_resolution) ** 2
            one_hot[gene.types[i]] = 1.0
            type_count[gene.types[i]] += 1
            out_area = (res[i][1] / space.input_resolution) ** 2
            type_area[space.stage_of(i), gene.types[i]] += (out_area, out_area ** 2)
        slots.append(np.concatenate([one_hot, [gene.flags[i], gene.active[i], area]]))
    glob = np.concatenate([type_count, [sum(gene.flags)], type_area.ravel()])
    return np.concatenate(slots + [glob])


@dataclass(frozen=True)
class PredictorConfig:
    hidden: int = 64
    steps: int = 3000
    lr: float = 3e-3
    weight_decay: float = 3e-4
    seed: int = 0
    holdout: float = 0.2


class LatencyPredictor:
    def __init__(self, space: SearchSpace, n_features: int, hidden: int = 64, seed: int = 0):
        self.space = space
        rng = make_rng(seed, "predictor")
        self.layers = []
        dims = [n_features, hidden, hidden, 1]
        for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            w = parameter(rng.standard_normal((a, b)) * np.sqrt(2.0 / a), name=f"fc{k}.weight")
            self.layers.append((w, parameter(np.zeros(b), name=f"fc{k}.bias")))
        self.feat_mean = np.zeros(n_features)
        self.feat_std = np.ones(n_features)
        self.scale = 1.0
        self.mape: float | None = None

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer]

    def _raw(self, feats: np.ndarray) -> Tensor:
        h = Tensor((feats - self.feat_mean) / self.feat_std)
        for k, (w, b) in enumerate(self.layers):
            h = matmul(h, w) + b
            if k < len(self.layers) - 1:
                h = relu(h)
        return softplus(h)  # latency / scale, always positive

    def predict(self, genes: Sequence[ArchGene]) -> np.ndarray:
        feats = np.stack([gene_features(g, self.space) for g in genes])
        with no_grad():
            return self._raw(feats).data[:, 0] * self.scale

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {p.name: p.data for p in self.parameters()}
        out.update({"feat_mean": self.feat_mean, "feat_std": self.feat_std, "scale": np.array([self.scale])})
        return out

    def save(self, path: str | Path) -> None:
        checkpoint.save(path, self.state_dict())

    @classmethod
    def load(cls, path: str | Path, space: SearchSpace) -> "LatencyPredictor":
        state = checkpoint.load(path)
        try:
            w0 = state["fc0.weight"]
            pred = cls(space, w0.shape[0], w0.shape[1])
            for p in pred.parameters():
                if state[p.name].shape != p.shape:
                    raise FormatError(f"{path}: tensor {p.name} has shape {state[p.name].shape}")
                p.data = state[p.name].copy()
            pred.feat_mean, pred.feat_std = state["feat_mean"], state["feat_std"]
            pred.scale = float(state["scale"][0])
        except KeyError as e:
            raise FormatError(f"{path}: missing predictor tensor {e}") from None
        if pred.feat_mean.shape[0] != gene_features(_any_gene(space), space).shape[0]:
            raise FormatError(f"{path}: predictor features do not match the search space")
        return pred


def _any_gene(space: SearchSpace) -> ArchGene:
    return sample_uniform(space, make_rng(0))


def mape(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(np.abs(pred - target) / np.abs(target)))


def fit_latency_predictor(samples: Sequence[tuple[ArchGene, float]], space: SearchSpace,
                          cfg: PredictorConfig = PredictorConfig()) -> LatencyPredictor:
    """Fit on a shuffled 80/20 split; the held-out MAPE is stored in ``.mape``."""
    if len(samples) < 200:
        raise ContractError(f"latency predictor needs >= 200 samples, got {len(samples)}")
    y = np.array([s[1] for s in samples], dtype=np.float64)
    if not np.all(np.isfinite(y) & (y > 0)):
        raise ContractError("latency labels must be positive and finite")
    if np.all(y == y[0]):
        warnings.warn("all latency labels are equal; the predictor will learn a constant", stacklevel=2)
    feats = np.stack([gene_features(g, space) for g, _ in samples])
    order = make_rng(cfg.seed, "split").permutation(len(samples))
    n_test = max(1, int(round(cfg.holdout * len(samples))))
    test, train = order[:n_test], order[n_test:]

    pred = LatencyPredictor(space, feats.shape[1], cfg.hidden, cfg.seed)
    # scale every feature into [0, 1]; no centering keeps sparse one-hots small
    peak = np.abs(feats[train]).max(axis=0)
    pred.feat_std = np.where(peak > 0, peak, 1.0)
    pred.scale = float(np.exp(np.mean(np.log(y[train]))))
    target = (y[train] / pred.scale)[:, None]
    opt = Adam(pred.parameters(), lr=cfg.lr)
    for _ in range(cfg.steps):
        opt.zero_grad()
        # squared relative error
        loss = mean(square(pred._raw(feats[train]) * (1.0 / target) - 1.0))
        for w, _ in pred.layers:
            loss = loss + tsum(square(w)) * cfg.weight_decay
        loss.backward()
        opt.step()
    with no_grad():
        p_test = pred._raw(feats[test]).data[:, 0] * pred.scale
    pred.mape = mape(p_test, y[test])
    return pred

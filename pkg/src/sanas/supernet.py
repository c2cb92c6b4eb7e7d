"""Supernet construction, single-path training, weight inheritance and retraining."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint, nn
from .data import Dataset
from .errors import ConfigError, TrainingError
from .operators import (AttnParams, AttnWeights, BlockType, ConvLikeParams, OpCounts, block_forward)
from .optim import SGD, cosine_lr
from .space import ArchGene, SearchSpace, sample_uniform, validate
from .tensor import Tensor, make_rng, no_grad, parameter, relu
from .weightshare import KERNEL_DIM, LossConfig, SharedWeightPool, supernet_loss, transform

MODES = ("heterogeneous", "naive", "none", "standalone")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    kernel_lr_scale: float = 10.0
    cosine: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown optimizer keys: {sorted(unknown)}")
        return cls(**d)


def _init(seed: int, key: str, shape, std: float) -> np.ndarray:
    return make_rng(seed, key).standard_normal(shape) * std


class Supernet:
    """Every candidate block of every slot, executed one path at a time.

    ``mode`` selects how Conv/Shift/Add weights are stored:

    * ``heterogeneous``: one pool per slot; Shift quantizes it, Add sees the
      learned transform of it; distribution terms enter the loss.
    * ``naive``: one pool per slot consumed directly by all three.
    * ``none``: private weights per block type.
    * ``standalone``: a single fixed gene with private weights (retraining).
    """

    def __init__(self, space: SearchSpace, mode: str = "heterogeneous", seed: int = 0,
                 kernel_dim: int = KERNEL_DIM, gene: ArchGene | None = None):
        if mode not in MODES:
            raise ConfigError(f"unknown sharing mode {mode!r}; expected one of {MODES}")
        if mode == "standalone":
            if gene is None:
                raise ConfigError("standalone mode needs a gene")
            validate(gene, space)
        self.space = space
        self.mode = mode
        self.seed = seed
        self.kernel_dim = kernel_dim
        self.gene = gene
        self.params: dict[str, Tensor] = {}
        self.bns: dict[str, nn.BatchNorm] = {}
        self.pools: dict[int, SharedWeightPool] = {}
        self.private: dict[tuple[int, int], Tensor] = {}
        self.attn: dict[int, AttnParams] = {}
        self.history: list[dict] = []

        c0 = space.stem_channels
        cin = space.input_channels
        k = space.kernel_size
        self.stem_w = self._param("stem.weight", _init(seed, "stem", (c0, cin, k, k), math.sqrt(2.0 / (cin * k * k))))
        self.stem_bn = self._bn("stem.bn", c0)
        c_last = space.stages[-1].channels
        self.head_w = self._param("head.weight", _init(seed, "head", (c_last, space.num_classes), 1.0 / math.sqrt(c_last)))
        self.head_b = self._param("head.bias", np.zeros(space.num_classes))

        for i in range(space.max_depth):
            wanted = self._slot_types(i)
            shape = space.pool_shape(i)
            std = math.sqrt(2.0 / (shape[1] * shape[2] * shape[3]))
            conv_like = [t for t in wanted if t != BlockType.ATTN]
            if conv_like and mode in ("heterogeneous", "naive"):
                w = self._param(f"slots.{i}.pool", _init(seed, f"slots.{i}.conv", shape, std))
                pool = SharedWeightPool(w, kernel_dim, name=f"slots.{i}.pool")
                if mode == "heterogeneous":
                    self.params[f"slots.{i}.pool.kernel.alphas"] = pool.kernel.alphas
                self.pools[i] = pool
            elif conv_like:
                for t in conv_like:
                    name = BlockType(t).name.lower()
                    self.private[(i, int(t))] = self._param(
                        f"slots.{i}.{name}.weight", _init(seed, f"slots.{i}.{name}", shape, std))
            for t in conv_like:
                self._bn(f"slots.{i}.bn.{BlockType(t).letter}", shape[0])
            if BlockType.ATTN in wanted:
                self.attn[i] = self._make_attn(i)

    # -- construction helpers ---------------------------------------------
    def _slot_types(self, i: int) -> list[BlockType]:
        if self.mode == "standalone":
            return [BlockType(self.gene.types[i])] if self.gene.active[i] else []
        return list(self.space.block_choices)

    def _param(self, name: str, data) -> Tensor:
        t = parameter(data, name=name)
        self.params[name] = t
        return t

    def _bn(self, name: str, channels: int) -> nn.BatchNorm:
        bn = nn.BatchNorm(channels, name=name)
        self.bns[name] = bn
        self.params[bn.gamma.name] = bn.gamma
        self.params[bn.beta.name] = bn.beta
        return bn

    def _make_attn(self, i: int) -> AttnParams:
        cin, cout = self.space.slot_channels(i)
        s, p = self.seed, f"slots.{i}.attn"
        return AttnParams(
            pos=self._param(f"{p}.pos", _init(s, f"{p}.pos", (cin, 3, 3), 0.1)),
            weights=AttnWeights(
                wq=self._param(f"{p}.wq", _init(s, f"{p}.wq", (cin, cout), 1.0 / math.sqrt(cin))),
                wk=self._param(f"{p}.wk", _init(s, f"{p}.wk", (cin, cout), 1.0 / math.sqrt(cin))),
                wv=self._param(f"{p}.wv", _init(s, f"{p}.wv", (cin, cout), 1.0 / math.sqrt(cin))),
                wo=self._param(f"{p}.wo", _init(s, f"{p}.wo", (cout, cout), 1.0 / math.sqrt(cout))),
            ),
            mlp_w1=self._param(f"{p}.mlp_w1", _init(s, f"{p}.mlp_w1", (cout, 2 * cout), math.sqrt(2.0 / cout))),
            mlp_b1=self._param(f"{p}.mlp_b1", np.zeros(2 * cout)),
            mlp_w2=self._param(f"{p}.mlp_w2", _init(s, f"{p}.mlp_w2", (2 * cout, cout), math.sqrt(1.0 / (2 * cout)))),
            mlp_b2=self._param(f"{p}.mlp_b2", np.zeros(cout)),
            bn=self._bn(f"{p}.bn", cout),
            num_heads=self.space.num_heads(cout),
        )

    # -- views ---------------------------------------------------------------
    def block_params(self, i: int, t: BlockType):
        t = BlockType(t)
        if t == BlockType.ATTN:
            return self.attn[i]
        bn = self.bns[f"slots.{i}.bn.{t.letter}"]
        if i in self.pools:
            pool = self.pools[i]
            w = transform(pool) if (t == BlockType.ADD and self.mode == "heterogeneous") else pool.weights
        else:
            w = self.private[(i, int(t))]
        return ConvLikeParams(w, bn)

    def kl_pools(self) -> list[SharedWeightPool]:
        return list(self.pools.values()) if self.mode == "heterogeneous" else []

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def path_parameters(self, gene: ArchGene) -> set[str]:
        """Names of parameters the forward pass of ``gene`` reads."""
        names = {"stem.weight", "stem.bn.gamma", "stem.bn.beta", "head.weight", "head.bias"}
        for i in range(len(gene)):
            if not gene.active[i]:
                continue
            t = BlockType(gene.types[i])
            if t == BlockType.ATTN:
                names |= {p.name for p in self.attn[i].parameters()}
                continue
            names |= {f"slots.{i}.bn.{t.letter}.gamma", f"slots.{i}.bn.{t.letter}.beta"}
            if i in self.pools:
                names.add(f"slots.{i}.pool")
                if t == BlockType.ADD and self.mode == "heterogeneous":
                    names.add(f"slots.{i}.pool.kernel.alphas")
            else:
                names.add(f"slots.{i}.{t.name.lower()}.weight")
        return names

    # -- forward ---------------------------------------------------------------
    def forward(self, x: np.ndarray | Tensor, gene: ArchGene, mode: str = "train",
                bn_store: dict | None = None) -> tuple[Tensor, OpCounts]:
        x = x if isinstance(x, Tensor) else Tensor(x)
        n = x.shape[0]
        h = relu(self.stem_bn(nn.conv2d(x, self.stem_w), mode, bn_store))
        counts = stem_counts(self.space, n)
        for i in range(len(gene)):
            if not gene.active[i]:
                continue
            t = BlockType(gene.types[i])
            out = block_forward(h, t, self.block_params(i, t), self.space.slot_channels(i)[1],
                                bool(gene.flags[i]), mode, bn_store)
            h = out.activations
            counts = counts + out.op_counts
        logits = nn.linear(nn.global_avg_pool(h), self.head_w, self.head_b)
        c, hh, ww = h.shape[1], h.shape[2], h.shape[3]
        return logits, counts + head_counts(c, hh, ww, self.space.num_classes, n)

    # -- persistence -------------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: t.data for name, t in self.params.items()}
        for name, bn in self.bns.items():
            out[f"{name}.running_mean"] = bn.running_mean
            out[f"{name}.running_var"] = bn.running_var
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if name not in state:
                raise ConfigError(f"checkpoint is missing tensor {name!r}")
            if state[name].shape != t.shape:
                raise ConfigError(f"checkpoint tensor {name!r} has shape {state[name].shape}, expected {t.shape}")
            t.data = np.array(state[name], dtype=np.float64)
        for name, bn in self.bns.items():
            bn.running_mean = np.array(state[f"{name}.running_mean"])
            bn.running_var = np.array(state[f"{name}.running_var"])

    def meta(self) -> dict:
        return {"space": self.space.to_dict(), "mode": self.mode, "seed": self.seed,
                "kernel_dim": self.kernel_dim, "gene": self.gene.to_text() if self.gene else None}

    def save(self, path: str | Path) -> None:
        path = Path(path)
        checkpoint.save(path, self.state_dict())
        Path(str(path) + ".json").write_text(json.dumps(self.meta(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "Supernet":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        meta = json.loads(Path(str(path) + ".json").read_text())
        gene = ArchGene.from_text(meta["gene"]) if meta.get("gene") else None
        net = cls(SearchSpace.from_dict(meta["space"]), meta["mode"], meta["seed"], meta["kernel_dim"], gene)
        net.load_state_dict(checkpoint.load(path))
        return net

    def digest(self, names=None) -> str:
        h = hashlib.sha256()
        for name in sorted(names if names is not None else self.params):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        return h.hexdigest()


def stem_counts(space: SearchSpace, n: int) -> OpCounts:
    r, c0, cin, k = space.input_resolution, space.stem_channels, space.input_channels, space.kernel_size
    macs = n * c0 * r * r * cin * k * k
    el = n * c0 * r * r
    return OpCounts(mult=macs + el, add=macs + el)


def head_counts(channels: int, h: int, w: int, classes: int, n: int) -> OpCounts:
    return OpCounts(mult=n * (channels + channels * classes),
                    add=n * (channels * h * w + channels * classes + classes))


# -- training --------------------------------------------------------------------

def _check_finite(net: Supernet, loss: float, step: int, gene: ArchGene) -> None:
    if math.isfinite(loss):
        return
    for i, pool in net.pools.items():
        for t in pool.parameters():
            if not np.all(np.isfinite(t.data)):
                raise TrainingError(f"non-finite loss at step {step}: {t.name} (layer {i}) is non-finite")
    for name, t in net.params.items():
        if not np.all(np.isfinite(t.data)):
            raise TrainingError(f"non-finite loss at step {step}: parameter {name} is non-finite")
    raise TrainingError(f"non-finite loss at step {step} on gene {gene.to_text()}")


def _train(net: Supernet, dataset: Dataset, cfg: TrainConfig, seed: int,
           next_gene: Callable[[], ArchGene], loss_cfg: LossConfig, metrics_path=None) -> Supernet:
    if cfg.steps <= 0:
        return net
    scale = {id(p.kernel.alphas): cfg.kernel_lr_scale for p in net.pools.values()}
    opt = SGD(net.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay, lr_scale=scale)
    data_rng = make_rng(seed, "data")
    pools = net.kl_pools()
    rows = []
    for step in range(cfg.steps):
        gene = next_gene()
        idx = data_rng.choice(len(dataset), size=min(cfg.batch_size, len(dataset)), replace=False)
        x, y = dataset.batch(idx)
        opt.zero_grad()
        logits, _ = net.forward(x, gene, "train")
        total, ce, kl = supernet_loss(logits, y, pools, loss_cfg)
        _check_finite(net, total.item(), step, gene)
        total.backward()
        opt.lr = cosine_lr(cfg.lr, step, cfg.steps) if cfg.cosine else cfg.lr
        opt.step()
        acc = float(np.mean(np.argmax(logits.data, axis=1) == y))
        rows.append({"step": step, "gene": gene.to_text(), "ce": ce.item(), "kl": kl.item(),
                     "total": total.item(), "acc": acc})
    net.history.extend(rows)
    if metrics_path is not None:
        write_metrics(metrics_path, rows)
    return net


def write_metrics(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "gene", "ce", "kl", "total", "acc"])
        for r in rows:
            w.writerow([r["step"], r["gene"], repr(r["ce"]), repr(r["kl"]), repr(r["total"]), repr(r["acc"])])


def train_supernet(net: Supernet, space: SearchSpace, dataset: Dataset, cfg: TrainConfig = TrainConfig(),
                   seed: int = 0, loss_cfg: LossConfig = LossConfig(), metrics_path=None) -> Supernet:
    """Uniform single-path training: one freshly sampled gene per step."""
    arch_rng = make_rng(seed, "arch")
    return _train(net, dataset, cfg, seed, lambda: sample_uniform(space, arch_rng), loss_cfg, metrics_path)


def retrain_subnet(gene: ArchGene, space: SearchSpace, dataset: Dataset, cfg: TrainConfig = TrainConfig(),
                   seed: int = 0, metrics_path=None) -> Supernet:
    """Fresh private-weight model for ``gene``, trained without distribution terms."""
    net = Supernet(space, "standalone", seed, gene=gene)
    return _train(net, dataset, cfg, seed, lambda: gene, LossConfig(kl_weight=0.0), metrics_path)


# -- evaluation --------------------------------------------------------------------

def calibrate(net: Supernet, gene: ArchGene, images: np.ndarray) -> dict:
    """Batch-norm statistics of ``gene`` on ``images``, without touching the net."""
    store: dict = {}
    with no_grad():
        net.forward(images.astype(np.float64), gene, "calibrate", store)
    return store


def predict(net: Supernet, gene: ArchGene, images: np.ndarray, calib: np.ndarray | None = None,
            batch: int = 256) -> np.ndarray:
    validate(gene, net.space)
    if net.mode == "standalone" and gene != net.gene:
        raise ConfigError("standalone model can only run its own gene")
    store = calibrate(net, gene, calib) if calib is not None else None
    preds = []
    with no_grad():
        for s in range(0, len(images), batch):
            logits, _ = net.forward(images[s: s + batch].astype(np.float64), gene, "eval", store)
            preds.append(np.argmax(logits.data, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def inherit_and_eval(net: Supernet, gene: ArchGene, val_set: Dataset, calib: np.ndarray | None = None) -> float:
    """Validation accuracy of ``gene`` with weights inherited from ``net``.

    ``calib`` (a batch of training images) re-estimates the path's batch-norm
    statistics first; no parameter is changed.
    """
    preds = predict(net, gene, val_set.images, calib)
    return float(np.mean(preds == val_set.labels)) if len(preds) else 0.0

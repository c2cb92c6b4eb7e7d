"""Run configuration: one JSON document drives every stage of the pipeline."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .costmodel import PROFILES
from .data import Dataset, SyntheticParams, load_dataset, make_synthetic
from .errors import ConfigError
from .search import EvoConfig
from .space import SearchSpace, default_space
from .supernet import MODES, TrainConfig
from .weightshare import LossConfig


def _strict(cls, d: dict, what: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{what} must be a JSON object")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigError(f"bad {what}: {e}") from None


@dataclass(frozen=True)
class DatasetConfig:
    """Either synthetic parameters or a pair of SADS1 files."""
    synthetic: SyntheticParams | None = SyntheticParams()
    train_path: str | None = None
    val_path: str | None = None

    def load(self, seed: int | None = None) -> tuple[Dataset, Dataset]:
        if self.train_path is not None:
            if self.val_path is None:
                raise ConfigError("dataset.train_path needs dataset.val_path")
            return load_dataset(self.train_path), load_dataset(self.val_path)
        params = self.synthetic or SyntheticParams()
        return make_synthetic(params if seed is None else replace(params, seed=seed))

    def to_dict(self) -> dict:
        if self.train_path is not None:
            return {"train_path": self.train_path, "val_path": self.val_path}
        return {"synthetic": asdict(self.synthetic or SyntheticParams())}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        unknown = set(d) - {"synthetic", "train_path", "val_path"}
        if unknown:
            raise ConfigError(f"unknown dataset keys: {sorted(unknown)}")
        syn = d.pop("synthetic", None)
        if syn is not None:
            syn = _strict(SyntheticParams, syn, "dataset.synthetic")
        elif "train_path" not in d:
            syn = SyntheticParams()
        return cls(synthetic=syn, **d)


def pipeline_evolution() -> EvoConfig:
    """Reduced evolution budget used by the default pipeline run."""
    return EvoConfig(steps=5, population=20, crossover_count=10, mutation_count=10, mutation_prob=0.2)


@dataclass(frozen=True)
class RunConfig:
    space: SearchSpace = field(default_factory=default_space)
    mode: str = "heterogeneous"
    optimizer: TrainConfig = TrainConfig(steps=400, batch_size=32)
    retrain: TrainConfig = TrainConfig(steps=400, batch_size=32)
    loss: LossConfig = LossConfig()
    dataset: DatasetConfig = DatasetConfig()
    profile: str = "45nm-FIX32"
    evolution: EvoConfig = field(default_factory=pipeline_evolution)
    seed: int = 0
    fitness_val_size: int = 512
    calib_size: int = 256
    kernel_dim: int = 200
    bits: int = 32

    def __post_init__(self):
        if self.mode not in MODES[:3]:
            raise ConfigError(f"mode must be one of {MODES[:3]}, got {self.mode!r}")
        if self.fitness_val_size < 1 or self.calib_size < 1 or self.kernel_dim < 1:
            raise ConfigError("fitness_val_size, calib_size and kernel_dim must be positive")

    def with_seed(self, seed: int | None) -> "RunConfig":
        return self if seed is None else replace(self, seed=seed)

    def to_dict(self) -> dict:
        evo = asdict(self.evolution)
        c = self.evolution.constraint
        evo["constraint"] = f"{c.metric}:{c.budget!r}" if c else None
        return {"space": self.space.to_dict(), "mode": self.mode, "optimizer": asdict(self.optimizer),
                "retrain": asdict(self.retrain), "loss": asdict(self.loss), "dataset": self.dataset.to_dict(),
                "profile": self.profile, "evolution": evo, "seed": self.seed,
                "fitness_val_size": self.fitness_val_size, "calib_size": self.calib_size,
                "kernel_dim": self.kernel_dim, "bits": self.bits}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        if "space" in kw:
            kw["space"] = SearchSpace.from_dict(kw["space"])
        if "optimizer" in kw:
            kw["optimizer"] = TrainConfig.from_dict(kw["optimizer"])
        if "retrain" in kw:
            kw["retrain"] = TrainConfig.from_dict(kw["retrain"])
        if "loss" in kw:
            kw["loss"] = _strict(LossConfig, kw["loss"], "loss")
        if "dataset" in kw:
            kw["dataset"] = DatasetConfig.from_dict(kw["dataset"])
        if "evolution" in kw:
            kw["evolution"] = EvoConfig.from_dict(kw["evolution"])
        if "profile" in kw and kw["profile"] not in PROFILES and not str(kw["profile"]).endswith(".json"):
            raise ConfigError(f"unknown profile {kw['profile']!r}")
        return cls(**kw)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return RunConfig.from_dict(d)


def load_space_arg(path: str | Path | None) -> SearchSpace:
    """A search space from either a bare space JSON or a full run config."""
    if path is None:
        return default_space()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"space file not found: {path}")
    d = json.loads(path.read_text())
    if "stages" in d:
        return SearchSpace.from_dict(d)
    return RunConfig.from_dict(d).space

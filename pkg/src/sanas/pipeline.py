"""End-to-end run: train supernet, search, retrain, report cost."""

from __future__ import annotations

import json
import time
from dataclasses import replace
from pathlib import Path

from .config import RunConfig
from .costmodel import PROFILES, count_ops, energy, get_profile, synthetic_latency
from .predictor import fit_latency_predictor
from .search import evolve, make_cost_fn, write_history
from .space import sample_uniform
from .supernet import Supernet, inherit_and_eval, retrain_subnet, train_supernet
from .tensor import make_rng


class _Stage:
    """Times a stage and prefixes any failure with the stage name."""

    def __init__(self, name: str, timing: dict):
        self.name, self.timing = name, timing

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, et, e, tb):
        self.timing[self.name] = time.perf_counter() - self.t0
        if e is not None and not getattr(e, "_staged", False):
            try:
                new = type(e)(f"stage {self.name}: {e}")
            except Exception:
                return False
            new._staged = True
            raise new from e
        return False


def latency_predictor_for(cfg: RunConfig, table, n: int = 1000, noise_sigma: float = 0.02):
    rng = make_rng(cfg.seed, "latency-samples")
    noise = make_rng(cfg.seed, "latency-noise")
    genes = [sample_uniform(cfg.space, rng) for _ in range(n)]
    samples = [(g, synthetic_latency(count_ops(g, cfg.space, table), table, noise, noise_sigma)) for g in genes]
    return fit_latency_predictor(samples, cfg.space)


def run_pipeline(cfg: RunConfig, out_dir: str | Path, jobs: int = 1, log=None) -> dict:
    """Run every stage and write artifacts into ``out_dir``; returns the summary.

    ``summary.json`` holds only deterministic quantities; wall-clock times go
    to ``timing.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    timing: dict[str, float] = {}
    say = log or (lambda msg: None)
    table = get_profile(cfg.profile)

    with _Stage("dataset", timing):
        train, val = cfg.dataset.load(seed=cfg.seed if cfg.dataset.train_path is None else None)
        if train.image_shape != (cfg.space.input_channels, cfg.space.input_resolution, cfg.space.input_resolution):
            raise ValueError(f"dataset images {train.image_shape} do not match the search-space input")
        calib = train.images[: cfg.calib_size]
        fit_val = val.head(cfg.fitness_val_size)

    with _Stage("train-supernet", timing):
        say(f"training supernet ({cfg.optimizer.steps} steps, {cfg.mode})")
        net = Supernet(cfg.space, cfg.mode, cfg.seed, cfg.kernel_dim)
        train_supernet(net, cfg.space, train, cfg.optimizer, cfg.seed, cfg.loss, out / "supernet_metrics.csv")
        net.save(out / "supernet.ckpt")

    with _Stage("search", timing):
        evo = replace(cfg.evolution, seed=cfg.seed)
        cost = None
        if evo.constraint is not None:
            predictor = None
            if evo.constraint.metric == "latency":
                predictor = latency_predictor_for(cfg, table)
                predictor.save(out / "latency_predictor.ckpt")
            cost = make_cost_fn(cfg.space, evo.constraint.metric, table, predictor)
        say(f"searching ({evo.budget} candidates)")
        result = evolve(cfg.space, evo, lambda g: inherit_and_eval(net, g, fit_val, calib), cost, jobs)
        write_history(out / "search_history.csv", result)
        gene = result.best_gene
        (out / "gene.txt").write_text(gene.to_text() + "\n")

    with _Stage("retrain", timing):
        say(f"retraining {gene.to_text()} ({cfg.retrain.steps} steps)")
        model = retrain_subnet(gene, cfg.space, train, cfg.retrain, cfg.seed, out / "retrain_metrics.csv")
        model.save(out / "retrained.ckpt")
        retrained_acc = inherit_and_eval(model, gene, val)
        inherited_acc = inherit_and_eval(net, gene, val, calib)

    with _Stage("report-cost", timing):
        rep = count_ops(gene, cfg.space, table, cfg.bits)
        cost_doc = {"gene": gene.to_text(), "profile": table.name, **rep.to_dict(),
                    "energy_by_profile": {k: energy(rep, t) for k, t in PROFILES.items()}}
        (out / "cost.json").write_text(json.dumps(cost_doc, indent=2, sort_keys=True) + "\n")

    summary = {
        "seed": cfg.seed,
        "gene": gene.to_text(),
        "accuracy": {"search_fitness": result.best_fitness, "inherited_val": inherited_acc,
                     "retrained_val": retrained_acc},
        "cost": cost_doc,
        "search": {"constraint": None if evo.constraint is None else
                   {"metric": evo.constraint.metric, "budget": evo.constraint.budget},
                   "evaluations": result.evaluations, "unique_evaluations": result.unique_evaluations},
        "phases": {"supernet_train": {"steps": cfg.optimizer.steps, "batch_size": cfg.optimizer.batch_size},
                   "arch_search": {"candidates": result.evaluations, "fitness_calls": result.unique_evaluations,
                                   "val_examples": len(fit_val)},
                   "retrain": {"steps": cfg.retrain.steps}},
        "final_supernet_loss": net.history[-1]["total"] if net.history else None,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    return summary

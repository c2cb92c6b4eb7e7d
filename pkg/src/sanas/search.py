"""Constrained evolutionary architecture search and its baselines."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .costmodel import PROFILES, CostTable, count_ops
from .errors import ConfigError, InfeasibleError
from .space import ArchGene, SearchSpace, crossover, enumerate_genes, mutate, sample_uniform
from .tensor import make_rng

METRICS = ("flops", "energy", "latency")

Fitness = Callable[[ArchGene], float]
CostFn = Callable[[ArchGene], float]


@dataclass(frozen=True)
class Constraint:
    metric: str
    budget: float

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"unknown constraint metric {self.metric!r}; expected one of {METRICS}")
        if not (self.budget > 0 and math.isfinite(self.budget)):
            raise ConfigError(f"constraint budget must be a positive number, got {self.budget}")

    @classmethod
    def parse(cls, text: str) -> "Constraint":
        """``"flops:2e6"`` -> Constraint("flops", 2e6)."""
        metric, sep, budget = text.partition(":")
        if not sep:
            raise ConfigError(f"constraint must look like metric:budget, got {text!r}")
        try:
            value = float(budget)
        except ValueError:
            raise ConfigError(f"constraint budget {budget!r} is not a number") from None
        return cls(metric.strip(), value)


@dataclass(frozen=True)
class EvoConfig:
    steps: int = 20
    population: int = 50
    crossover_count: int = 25
    mutation_count: int = 25
    mutation_prob: float = 0.2
    constraint: Constraint | None = None
    seed: int = 0
    max_initial_samples: int = 10_000
    max_attempts: int = 100

    def __post_init__(self):
        if self.steps < 0 or self.population < 1:
            raise ConfigError("steps must be >= 0 and population >= 1")
        if self.crossover_count < 0 or self.mutation_count < 0:
            raise ConfigError("crossover and mutation counts must be >= 0")
        if self.crossover_count + self.mutation_count > self.population:
            raise ConfigError("crossover_count + mutation_count must not exceed population")
        if not 0 < self.mutation_prob <= 1:
            raise ConfigError(f"mutation_prob must be in (0, 1], got {self.mutation_prob}")

    @classmethod
    def cv(cls, **kw) -> "EvoConfig":
        return cls(**{"steps": 20, "population": 50, "crossover_count": 25, "mutation_count": 25,
                       "mutation_prob": 0.2, **kw})

    @classmethod
    def nlp(cls, **kw) -> "EvoConfig":
        return cls(**{"steps": 30, "population": 125, "crossover_count": 50, "mutation_count": 50,
                      "mutation_prob": 0.3, **kw})

    @property
    def budget(self) -> int:
        """Candidates scored by a full run: the evaluation budget shared with random search."""
        return self.population + self.steps * (self.crossover_count + self.mutation_count)

    @classmethod
    def from_dict(cls, d: dict) -> "EvoConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown search keys: {sorted(unknown)}")
        c = d.get("constraint")
        if isinstance(c, str):
            d["constraint"] = Constraint.parse(c)
        elif isinstance(c, dict):
            d["constraint"] = Constraint(**c)
        return cls(**d)


def make_cost_fn(space: SearchSpace, metric: str, table: CostTable = PROFILES["45nm-FIX32"],
                 predictor=None) -> CostFn:
    """Cost of a gene under ``metric``; latency uses ``predictor`` when given."""
    if metric not in METRICS:
        raise ConfigError(f"unknown constraint metric {metric!r}")

    def cost(gene: ArchGene) -> float:
        if metric == "latency" and predictor is not None:
            return float(predictor.predict([gene])[0])
        rep = count_ops(gene, space, table)
        return {"flops": rep.effective_flops, "energy": rep.energy, "latency": rep.latency_estimate}[metric]

    return cost


@dataclass
class SearchResult:
    best_gene: ArchGene
    best_fitness: float
    history: list[dict] = field(default_factory=list)
    evaluations: int = 0          # candidates scored, cache hits included
    unique_evaluations: int = 0   # distinct fitness calls
    wall_time: float = 0.0

    def best_trace(self) -> list[float]:
        """Best-so-far fitness after each scored candidate."""
        out, best = [], -math.inf
        for row in self.history:
            if row["feasible"]:
                best = max(best, row["fitness"])
                out.append(best)
        return out


class _Scorer:
    """Fitness cache plus history log, with optional parallel evaluation."""

    def __init__(self, fitness: Fitness, cost: CostFn | None, constraint: Constraint | None, jobs: int = 1):
        self.fitness = fitness
        self.cost = cost
        self.constraint = constraint
        self.jobs = max(1, int(jobs))
        self.cache: dict[ArchGene, float] = {}
        self.costs: dict[ArchGene, float] = {}
        self.history: list[dict] = []
        self.evaluations = 0
        self.best: tuple[float, str] | None = None
        self.best_gene: ArchGene | None = None

    def cost_of(self, gene: ArchGene) -> float:
        if self.cost is None:
            return 0.0
        if gene not in self.costs:
            self.costs[gene] = float(self.cost(gene))
        return self.costs[gene]

    def feasible(self, gene: ArchGene) -> bool:
        return self.constraint is None or self.cost_of(gene) <= self.constraint.budget

    def log_infeasible(self, generation: int, gene: ArchGene) -> None:
        self.history.append({"generation": generation, "candidate_gene": gene.to_text(),
                             "fitness": float("nan"), "cost_metric": self.cost_of(gene), "feasible": 0})

    def score(self, generation: int, genes: list[ArchGene]) -> list[float]:
        todo = list(dict.fromkeys(g for g in genes if g not in self.cache))
        if self.jobs > 1 and len(todo) > 1:
            with ThreadPoolExecutor(self.jobs) as ex:
                vals = list(ex.map(self.fitness, todo))
        else:
            vals = [self.fitness(g) for g in todo]
        for g, v in zip(todo, vals):
            self.cache[g] = float(v)
        out = []
        for g in genes:
            f = self.cache[g]
            self.evaluations += 1
            self.history.append({"generation": generation, "candidate_gene": g.to_text(), "fitness": f,
                                 "cost_metric": self.cost_of(g), "feasible": 1})
            key = (f, _neg_text(g))
            if self.best is None or key > self.best:
                self.best, self.best_gene = key, g
            out.append(f)
        return out

    def result(self, t0: float) -> SearchResult:
        return SearchResult(self.best_gene, self.best[0], self.history, self.evaluations,
                            len(self.cache), time.perf_counter() - t0)


def _neg_text(g: ArchGene) -> tuple:
    # ties broken toward the lexicographically smallest gene text
    return tuple(-ord(c) for c in g.to_text())


def _rank_key(scorer: _Scorer):
    return lambda g: (-scorer.cache[g], g.to_text())


def _initial_population(space: SearchSpace, cfg: EvoConfig, scorer: _Scorer, rng) -> list[ArchGene]:
    pop: dict[ArchGene, None] = {}
    min_cost = math.inf
    for _ in range(cfg.max_initial_samples):
        g = sample_uniform(space, rng)
        if scorer.feasible(g):
            pop[g] = None
            if len(pop) >= cfg.population:
                break
        else:
            min_cost = min(min_cost, scorer.cost_of(g))
    if not pop:
        c = cfg.constraint
        raise InfeasibleError(f"no gene meets {c.metric} <= {c.budget:g} in {cfg.max_initial_samples} "
                              f"samples; cheapest sampled cost {min_cost:g}")
    return list(pop)


def _offspring(make: Callable[[], ArchGene], scorer: _Scorer, cfg: EvoConfig, generation: int):
    for _ in range(cfg.max_attempts):
        child = make()
        if scorer.feasible(child):
            return child
        scorer.log_infeasible(generation, child)
    return None


def evolve(space: SearchSpace, cfg: EvoConfig, fitness: Fitness, cost: CostFn | None = None,
           jobs: int = 1) -> SearchResult:
    """Truncation-selection evolution over parents, crossover children and mutants."""
    t0 = time.perf_counter()
    if cfg.constraint is not None and cost is None:
        cost = make_cost_fn(space, cfg.constraint.metric)
    rng = make_rng(cfg.seed, "evolve")
    scorer = _Scorer(fitness, cost, cfg.constraint, jobs)
    pop = _initial_population(space, cfg, scorer, rng)
    scorer.score(0, pop)
    pop = sorted(pop, key=_rank_key(scorer))
    for gen in range(1, cfg.steps + 1):
        children = []
        for _ in range(cfg.crossover_count):
            c = _offspring(lambda: crossover(pop[rng.integers(len(pop))], pop[rng.integers(len(pop))],
                                             rng, space), scorer, cfg, gen)
            if c is not None:
                children.append(c)
        for _ in range(cfg.mutation_count):
            c = _offspring(lambda: mutate(pop[rng.integers(len(pop))], cfg.mutation_prob, rng, space),
                           scorer, cfg, gen)
            if c is not None:
                children.append(c)
        scorer.score(gen, children)
        pool = list(dict.fromkeys(pop + children))
        pop = sorted(pool, key=_rank_key(scorer))[: cfg.population]
    return scorer.result(t0)


def random_search(space: SearchSpace, cfg: EvoConfig, fitness: Fitness, cost: CostFn | None = None,
                  jobs: int = 1, budget: int | None = None) -> SearchResult:
    """Uniform feasible sampling; scores ``budget`` candidates (default: evolve's budget)."""
    t0 = time.perf_counter()
    if cfg.constraint is not None and cost is None:
        cost = make_cost_fn(space, cfg.constraint.metric)
    rng = make_rng(cfg.seed, "random")
    scorer = _Scorer(fitness, cost, cfg.constraint, jobs)
    budget = cfg.budget if budget is None else budget
    found, tries, min_cost = [], 0, math.inf
    while len(found) < budget:
        g = sample_uniform(space, rng)
        tries += 1
        if scorer.feasible(g):
            found.append(g)
        else:
            min_cost = min(min_cost, scorer.cost_of(g))
            scorer.log_infeasible(0, g)
            if not found and tries >= cfg.max_initial_samples:
                c = cfg.constraint
                raise InfeasibleError(f"no gene meets {c.metric} <= {c.budget:g} in {tries} samples; "
                                      f"cheapest sampled cost {min_cost:g}")
    chunk = max(1, cfg.population)
    for s in range(0, len(found), chunk):
        scorer.score(s // chunk, found[s: s + chunk])
    return scorer.result(t0)


def exhaustive_search(space: SearchSpace, fitness: Fitness, cost: CostFn | None = None,
                      constraint: Constraint | None = None, genes: Iterable[ArchGene] | None = None) -> SearchResult:
    """Score every feasible gene; ties go to the smallest gene text."""
    t0 = time.perf_counter()
    if constraint is not None and cost is None:
        cost = make_cost_fn(space, constraint.metric)
    scorer = _Scorer(fitness, cost, constraint)
    cand = [g for g in (genes if genes is not None else enumerate_genes(space)) if scorer.feasible(g)]
    if not cand:
        raise InfeasibleError(f"no gene in the space meets {constraint.metric} <= {constraint.budget:g}")
    scorer.score(0, cand)
    return scorer.result(t0)


def write_history(path, result: SearchResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "candidate_gene", "fitness", "cost_metric", "feasible"])
        for r in result.history:
            fit = "" if not r["feasible"] else repr(r["fitness"])
            w.writerow([r["generation"], r["candidate_gene"], fit, repr(r["cost_metric"]), r["feasible"]])

"""Command-line entry point: ``sanas <command> ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, load_config, load_space_arg
from .costmodel import count_ops, get_profile
from .data import SyntheticParams, make_synthetic, save_dataset
from .errors import ConfigError, SanasError
from .evaluation import StudyConfig, distribution_report, ranking_study, write_distribution_csv
from .pipeline import run_pipeline
from .predictor import LatencyPredictor
from .search import Constraint, EvoConfig, evolve, make_cost_fn, write_history
from .space import ArchGene, validate
from .supernet import Supernet, inherit_and_eval, retrain_subnet, train_supernet


def resolve_seed(flag: int | None, fallback: int = 0) -> int:
    """``--seed`` wins, then ``SANAS_SEED``, then ``fallback``."""
    if flag is not None:
        return flag
    env = os.environ.get("SANAS_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"SANAS_SEED must be an integer, got {env!r}") from None
    return fallback


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2^64), got {v}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


def _gene_arg(text: str) -> ArchGene:
    p = Path(text)
    if p.exists():
        text = p.read_text()
    return ArchGene.from_text(text)


def _config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    return cfg.with_seed(resolve_seed(args.seed, cfg.seed))


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# -- commands ------------------------------------------------------------------

def cmd_gen_dataset(args) -> int:
    params = SyntheticParams(num_classes=args.classes, n_train=args.n_train, n_val=args.n_val,
                             channels=args.channels, size=args.size, noise=args.noise,
                             seed=resolve_seed(args.seed))
    train, val = make_synthetic(params)
    save_dataset(args.out, train)
    if args.val_out:
        save_dataset(args.val_out, val)
    print(f"wrote {len(train)} training images to {args.out}")
    return 0


def cmd_train_supernet(args) -> int:
    cfg = _config(args)
    opt = cfg.optimizer if args.steps is None else replace(cfg.optimizer, steps=args.steps)
    mode = args.mode or cfg.mode
    train, _ = cfg.dataset.load(seed=cfg.seed if cfg.dataset.train_path is None else None)
    net = Supernet(cfg.space, mode, cfg.seed, cfg.kernel_dim)
    metrics = args.metrics or str(args.out) + ".metrics.csv"
    train_supernet(net, cfg.space, train, opt, cfg.seed, cfg.loss if mode == "heterogeneous" else
                   replace(cfg.loss, kl_weight=0.0), metrics)
    net.save(args.out)
    print(f"saved supernet to {args.out}; metrics in {metrics}")
    return 0


def cmd_search(args) -> int:
    cfg = _config(args)
    net = Supernet.load(args.supernet)
    evo = replace(cfg.evolution, seed=cfg.seed)
    if args.constraint:
        evo = replace(evo, constraint=Constraint.parse(args.constraint))
    if args.profile_evo:
        evo = EvoConfig.nlp(constraint=evo.constraint, seed=evo.seed) if args.profile_evo == "nlp" else \
            EvoConfig.cv(constraint=evo.constraint, seed=evo.seed)
    train, val = cfg.dataset.load(seed=cfg.seed if cfg.dataset.train_path is None else None)
    calib = train.images[: cfg.calib_size]
    fit_val = val.head(cfg.fitness_val_size)
    cost = None
    if evo.constraint is not None:
        predictor = LatencyPredictor.load(args.predictor, net.space) if args.predictor else None
        cost = make_cost_fn(net.space, evo.constraint.metric, get_profile(cfg.profile), predictor)
    result = evolve(net.space, evo, lambda g: inherit_and_eval(net, g, fit_val, calib), cost, args.jobs)
    Path(args.out).write_text(result.best_gene.to_text() + "\n")
    history = args.history or str(args.out) + ".history.csv"
    write_history(history, result)
    print(f"best {result.best_gene.to_text()} fitness {result.best_fitness:.4f} "
          f"({result.evaluations} candidates, {result.unique_evaluations} evaluated)")
    return 0


def cmd_retrain(args) -> int:
    cfg = _config(args)
    gene = _gene_arg(args.gene)
    validate(gene, cfg.space)
    rt = cfg.retrain if args.steps is None else replace(cfg.retrain, steps=args.steps)
    train, val = cfg.dataset.load(seed=cfg.seed if cfg.dataset.train_path is None else None)
    metrics = args.metrics or str(args.out) + ".metrics.csv"
    model = retrain_subnet(gene, cfg.space, train, rt, cfg.seed, metrics)
    model.save(args.out)
    acc = inherit_and_eval(model, gene, val)
    print(f"retrained {gene.to_text()}: val accuracy {acc:.4f}; saved to {args.out}")
    return 0


def cmd_report_cost(args) -> int:
    space = load_space_arg(args.space)
    gene = _gene_arg(args.gene)
    table = get_profile(args.profile)
    rep = count_ops(gene, space, table, args.bits)
    _print_json({"gene": gene.to_text(), "profile": table.name, **rep.to_dict()})
    return 0


def cmd_eval_ranking(args) -> int:
    cfg = _config(args)
    space = load_space_arg(args.space) if args.space else cfg.space
    seed = cfg.seed
    study_cfg = StudyConfig(
        pool_size=args.pool, seeds=tuple(seed + k for k in range(args.seeds)),
        modes=tuple(args.modes.split(",")),
        supernet=replace(cfg.optimizer, steps=args.supernet_steps),
        standalone=replace(cfg.retrain, steps=args.standalone_steps),
        loss=replace(cfg.loss, kl_weight=args.kl_weight), pool_seed=seed, calib_size=cfg.calib_size)
    train, val = cfg.dataset.load(seed=seed if cfg.dataset.train_path is None else None)
    study = ranking_study(space, train, val, study_cfg, jobs=args.jobs,
                          progress=lambda r: print(f"{r['mode']} seed {r['seed']}: tau {r['tau']:.3f}",
                                                   file=sys.stderr))
    study.write_csv(args.out)
    _print_json(study.medians())
    return 0


def cmd_export_dist(args) -> int:
    net = Supernet.load(args.supernet)
    report = distribution_report(net)
    write_distribution_csv(args.out, report, args.bins)
    stats = [d.stats() for d in report]
    if args.stats:
        Path(args.stats).write_text(json.dumps(stats, indent=2) + "\n")
    print(f"wrote {len(report)} pools to {args.out}")
    return 0


def cmd_run_pipeline(args) -> int:
    cfg = _config(args)
    summary = run_pipeline(cfg, args.out, args.jobs, log=lambda m: print(m, file=sys.stderr))
    _print_json(summary)
    return 0


# -- parser ---------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Usage errors as one ``error[usage]: ...`` line, exit code 2."""

    def error(self, message):
        self.exit(2, f"error[usage]: {self.prog}: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sanas", description="Hybrid shift/add/attention architecture search.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(fn=fn)
        sp.add_argument("--seed", type=_u64, default=None,
                        help="random seed (default: $SANAS_SEED, else the config seed, else 0)")
        return sp

    g = add("gen-dataset", cmd_gen_dataset, "Write the synthetic dataset in SADS1 format.")
    g.add_argument("--out", required=True, help="training-split output file")
    g.add_argument("--val-out", help="validation-split output file")
    g.add_argument("--classes", type=int, default=4, help="number of classes (>= 2)")
    g.add_argument("--n-train", type=int, default=2048, help="training images")
    g.add_argument("--n-val", type=int, default=512, help="validation images")
    g.add_argument("--channels", type=int, default=3, help="image channels")
    g.add_argument("--size", type=int, default=16, help="image height and width")
    g.add_argument("--noise", type=float, default=1.0, help="Gaussian noise std")

    t = add("train-supernet", cmd_train_supernet, "Train a supernet with uniform single-path sampling.")
    t.add_argument("--config", help="run-config JSON")
    t.add_argument("--steps", type=_positive, help="training steps (overrides the config)")
    t.add_argument("--mode", choices=["heterogeneous", "naive", "none"], help="weight-sharing mode")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--metrics", help="per-step CSV (default: <out>.metrics.csv)")

    s = add("search", cmd_search, "Evolutionary search over a trained supernet.")
    s.add_argument("--supernet", required=True, help="supernet checkpoint")
    s.add_argument("--config", help="run-config JSON (dataset, evolution, profile)")
    s.add_argument("--constraint", help="metric:budget, metric one of flops, energy, latency")
    s.add_argument("--evo-profile", dest="profile_evo", choices=["cv", "nlp"], help="use a stock evolution config")
    s.add_argument("--predictor", help="latency-predictor checkpoint for latency constraints")
    s.add_argument("--out", required=True, help="file for the best gene text")
    s.add_argument("--history", help="history CSV (default: <out>.history.csv)")
    s.add_argument("--jobs", type=int, default=1, help="concurrent fitness evaluations")

    r = add("retrain", cmd_retrain, "Train one architecture from scratch with private weights.")
    r.add_argument("--gene", required=True, help="gene text (e.g. C0,S1,A0,-) or a file containing it")
    r.add_argument("--config", help="run-config JSON")
    r.add_argument("--steps", type=_positive, help="training steps (overrides the config)")
    r.add_argument("--out", required=True, help="checkpoint path")
    r.add_argument("--metrics", help="per-step CSV (default: <out>.metrics.csv)")

    c = add("report-cost", cmd_report_cost, "Print the operation counts and energy of a gene as JSON.")
    c.add_argument("--gene", required=True, help="gene text or a file containing it")
    c.add_argument("--space", help="search-space or run-config JSON (default space if omitted)")
    c.add_argument("--profile", default="45nm-FIX32", help="built-in profile name or cost-table JSON")
    c.add_argument("--bits", type=int, default=32, help="bit width for effective FLOPs")

    e = add("eval-ranking", cmd_eval_ranking, "Ranking-correlation study across weight-sharing modes.")
    e.add_argument("--config", help="run-config JSON (dataset, optimizer)")
    e.add_argument("--space", help="search-space JSON (overrides the config space)")
    e.add_argument("--pool", type=int, default=20, help="gene-pool size (>= 10)")
    e.add_argument("--seeds", type=int, default=5, help="number of supernet seeds")
    e.add_argument("--modes", default="naive,heterogeneous", help="comma-separated sharing modes")
    e.add_argument("--supernet-steps", type=_positive, default=2000, help="steps per supernet")
    e.add_argument("--standalone-steps", type=_positive, default=200, help="steps per standalone reference")
    e.add_argument("--kl-weight", type=float, default=0.01, help="distribution-loss weight for heterogeneous sharing")
    e.add_argument("--out", required=True, help="study CSV")
    e.add_argument("--jobs", type=int, default=1, help="concurrent standalone trainings")

    x = add("export-dist", cmd_export_dist, "Export weight histograms and fitted densities of every pool.")
    x.add_argument("--supernet", required=True, help="supernet checkpoint")
    x.add_argument("--out", required=True, help="histogram CSV")
    x.add_argument("--stats", help="optional JSON with per-pool fit statistics")
    x.add_argument("--bins", type=int, default=64, help="histogram bins")

    rp = add("run-pipeline", cmd_run_pipeline, "Train, search, retrain and report in one run.")
    rp.add_argument("--config", help="run-config JSON (defaults if omitted)")
    rp.add_argument("--out", required=True, help="artifact directory")
    rp.add_argument("--jobs", type=int, default=1, help="concurrent fitness evaluations")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SanasError as e:
        print(f"error[{e.category}]: {e}", file=sys.stderr)
        return 1
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as e:
        print(f"error[io]: {e}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error[input]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

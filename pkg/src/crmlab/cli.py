"""Command-line entry point: ``crmlab {generate,train,evaluate,experiment,plot}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .bandit_env import SyntheticEnvironment, dataset_filename, parse_tag
from .errors import ConfigurationError, DataError
from .harness import (
    ALL_METHODS,
    ExperimentResult,
    ExperimentSpec,
    LoggingPolicy,
    cell_data,
    cell_environment,
    cell_seeds,
    emit_plot_data,
    evaluate_policy,
    preset,
    run_experiment,
)
from .harness.experiment import train_config
from .learners import SoftmaxPolicy, train

log = logging.getLogger("crmlab")


def _env_args(p):
    p.add_argument("--env", default="synt-25-15", help="environment tag synt-K-d")
    p.add_argument("--seed", type=int, default=0, help="run index (selects environment, data and init seeds)")
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--beta", type=float, default=5.0, help="logging policy inverse temperature")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crmlab", description="Off-policy learning experiments on synthetic bandits.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write train/validation/test logged datasets")
    _env_args(g)
    g.add_argument("--size", type=int, default=10_000, help="rows per split")
    g.add_argument("--out", default="data")

    t = sub.add_parser("train", help="train one policy on one generated split")
    _env_args(t)
    t.add_argument("--size", type=int, default=10_000)
    t.add_argument("--method", default="ips", choices=[m for m in ALL_METHODS if m != "logging"])
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--fgan-epochs", type=int, default=10)
    t.add_argument("--batch-size", type=int, default=10_000)
    t.add_argument("--architecture", default="synthetic_1x15")
    t.add_argument("--out", default="run")

    e = sub.add_parser("evaluate", help="EXP of a saved policy (or of the logging policy)")
    _env_args(e)
    e.add_argument("--policy", help="policy JSON written by 'train'; omit for the logging policy")
    e.add_argument("--n-eval", type=int, default=10_000)

    x = sub.add_parser("experiment", help="run a full multi-seed sweep")
    x.add_argument("--config", help="JSON file with ExperimentSpec fields")
    x.add_argument("--preset", choices=["divergence", "multiclass"])
    x.add_argument("--env", action="append", help="environment tag; repeatable")
    x.add_argument("--size", type=int, action="append", help="dataset size; repeatable")
    x.add_argument("--method", action="append", help="method name; repeatable")
    x.add_argument("--runs", type=int)
    x.add_argument("--alpha", type=float)
    x.add_argument("--seed", type=int, help="base seed")
    x.add_argument("--epochs", type=int)
    x.add_argument("--workers", type=int)
    x.add_argument("--out")

    pl = sub.add_parser("plot", help="re-emit plot data from a sweep directory")
    pl.add_argument("--out", required=True, help="directory containing scores.csv")
    pl.add_argument("--figure", choices=["divergence", "multiclass"])
    pl.add_argument("--alpha", type=float, default=0.05)
    return parser


def _environment(args) -> SyntheticEnvironment:
    k, d = parse_tag(args.env)
    return cell_environment(args.base_seed, k, d, args.seed, args.beta)


def cmd_generate(args) -> int:
    env = _environment(args)
    split = cell_data(env, args.base_seed, args.size, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "environment.json").write_text(env.to_json(), encoding="utf-8")
    stem = Path(dataset_filename(env, args.seed, args.size)).stem
    for name in ("train", "validation", "test"):
        path = out / f"{stem}_{name}.csv"
        getattr(split, name).to_csv(path)
        print(path)
    return 0


def cmd_train(args) -> int:
    k, d = parse_tag(args.env)
    env = _environment(args)
    split = cell_data(env, args.base_seed, args.size, args.seed)
    seeds = cell_seeds(args.base_seed, env.tag, args.size, args.seed)
    init = SoftmaxPolicy.create(d, k, np.random.default_rng(seeds.init), args.architecture)
    spec = ExperimentSpec(environments=[(k, d)], dataset_sizes=[args.size], methods=[args.method], runs=2,
                          epochs=args.epochs, fgan_epochs=args.fgan_epochs, batch_size=args.batch_size,
                          beta=args.beta, architecture=args.architecture)
    cfg = train_config(spec, args.method, seeds.train)
    policy, trace = train(init, split, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "policy.json").write_text(policy.to_json(), encoding="utf-8")
    (out / "environment.json").write_text(env.to_json(), encoding="utf-8")
    trace.to_csv(out / "trace.csv")
    exp = evaluate_policy(policy, env, 10_000, np.random.default_rng(seeds.evaluation))
    print(json.dumps({"environment": env.tag, "size": args.size, "method": args.method, "seed": args.seed, "exp": exp}))
    return 0


def cmd_evaluate(args) -> int:
    env = _environment(args)
    if args.policy:
        policy_path = Path(args.policy)
        env_path = policy_path.with_name("environment.json")
        if env_path.exists():
            env = SyntheticEnvironment.from_json(env_path.read_text(encoding="utf-8"))
        policy = SoftmaxPolicy.from_json(policy_path.read_text(encoding="utf-8"))
    else:
        policy = LoggingPolicy(env)
    seeds = cell_seeds(args.base_seed, env.tag, 0, args.seed)
    exp = evaluate_policy(policy, env, args.n_eval, np.random.default_rng(seeds.evaluation))
    print(json.dumps({"environment": env.tag, "seed": args.seed, "exp": exp}))
    return 0


def _experiment_spec(args) -> ExperimentSpec:
    if args.config and args.preset:
        raise ConfigurationError("give either --config or --preset, not both")
    if args.config:
        spec = ExperimentSpec.from_file(args.config)
    elif args.preset:
        spec = preset(args.preset)
    else:
        spec = ExperimentSpec()
    overrides = {
        "environments": args.env,
        "dataset_sizes": args.size,
        "methods": args.method,
        "runs": args.runs,
        "alpha": args.alpha,
        "base_seed": args.seed,
        "epochs": args.epochs,
        "workers": args.workers,
        "output_dir": args.out,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides.get("methods") and spec.baseline not in overrides["methods"]:
        overrides["baseline"] = None
    data = spec.to_dict()
    data.update(overrides)
    return ExperimentSpec.from_dict(data)


def cmd_experiment(args) -> int:
    spec = _experiment_spec(args)

    def progress(done, total, row):
        log.info("[%d/%d] %s %d %s seed=%d exp=%.5f %s", done, total, row.environment, row.size,
                 row.method, row.seed, row.exp, row.status)

    result = run_experiment(spec, progress=progress)
    print(f"{'environment':<12} {'size':>7} {'method':<26} {'mean':>8} {'std':>8} {'p':>8} sig")
    for r in result.aggregates:
        print(f"{r.environment:<12} {r.size:>7} {r.method:<26} {r.mean:8.4f} {r.std:8.4f} {r.p_value:8.4f} {int(r.significant)}")
    print(f"wrote {spec.output_dir} in {result.seconds:.1f}s")
    return 0


def cmd_plot(args) -> int:
    result = ExperimentResult.from_dir(args.out, alpha=args.alpha)
    figure = args.figure or (result.spec.figure if result.spec is not None else None)
    if figure is None:
        raise ConfigurationError("cannot infer the figure; pass --figure")
    for path in emit_plot_data(result, figure, args.out):
        print(path)
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    kernels.tune_allocator()
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, DataError, OSError) as exc:
        print(f"crmlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

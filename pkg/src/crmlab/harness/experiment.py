"""Multi-seed sweeps: seeding, per-cell training, evaluation and persistence."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import kernels
from ..bandit_env import DatasetSplit, SyntheticEnvironment, env_tag, make_environment, make_split, parse_tag
from ..diffnet import GumbelConfig
from ..errors import ConfigurationError, DataError
from ..estimators import ObjectiveConfig, policy_probs
from ..learners import ARCHITECTURES, METHODS, SoftmaxPolicy, TrainConfig, train
from .stats import paired_t_test

log = logging.getLogger(__name__)

DEFAULT_SIZES = (10_000, 25_000, 50_000, 100_000, 150_000)
DIVERGENCE_ENVIRONMENTS = ((10, 5), (25, 15), (50, 25))
FIGURES = ("divergence", "multiclass")

# harness-level names on top of the learner methods
EXTRA_METHODS = {
    "logging": None,
    "vrcrm_hard": ("vrcrm", {"gumbel": GumbelConfig(hard=True)}),
    "divergence_only_fgan_hard": ("divergence_only_fgan", {"gumbel": GumbelConfig(hard=True)}),
}
ALL_METHODS = tuple(METHODS) + tuple(EXTRA_METHODS)


class LoggingPolicy:
    """The environment's own logging policy, exposed through ``action_probs``."""

    def __init__(self, env: SyntheticEnvironment):
        self.env = env

    def action_probs(self, contexts) -> np.ndarray:
        return self.env.logging_probs(contexts)

    __call__ = action_probs


def evaluate_policy(policy, env: SyntheticEnvironment, n_eval_contexts: int = 10_000,
                    rng: np.random.Generator | None = None, contexts=None) -> float:
    """EXP: mean over fresh contexts of sum_a pi(a|x) q(x, a) under the true reward model."""
    if contexts is None:
        if n_eval_contexts < 1:
            raise ConfigurationError("n_eval_contexts must be at least 1")
        rng = np.random.default_rng() if rng is None else rng
        contexts = env.sample_contexts(n_eval_contexts, rng)
    probs = policy_probs(policy, contexts)
    return float(np.mean(np.sum(probs * env.expected_rewards(contexts), axis=1)))


# -- seeding ------------------------------------------------------------------


def derive_seed(base_seed: int, *parts) -> int:
    """``base_seed`` XOR a CRC32 of the joined parts; stable across processes and runs."""
    key = "|".join(str(p) for p in parts).encode("utf-8")
    return (int(base_seed) ^ zlib.crc32(key)) & 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class CellSeeds:
    environment: int
    data: int
    init: int
    train: int
    evaluation: int


def cell_seeds(base_seed: int, tag: str, size: int, run: int) -> CellSeeds:
    """Seeds for one (environment, size, run); the method never enters them."""
    return CellSeeds(
        environment=derive_seed(base_seed, tag, "environment", run),
        data=derive_seed(base_seed, tag, size, run, "data"),
        init=derive_seed(base_seed, tag, size, run, "init"),
        train=derive_seed(base_seed, tag, size, run, "train"),
        evaluation=derive_seed(base_seed, tag, "evaluation", run),
    )


def cell_environment(base_seed: int, n_actions: int, context_dim: int, run: int, beta: float = 5.0):
    return make_environment(n_actions, context_dim, beta, cell_seeds(base_seed, env_tag(n_actions, context_dim), 0, run).environment)


def cell_data(env: SyntheticEnvironment, base_seed: int, size: int, run: int) -> DatasetSplit:
    return make_split(env, size, np.random.default_rng(cell_seeds(base_seed, env.tag, size, run).data))


# -- sweep configuration ----------------------------------------------------------


def _parse_env(item) -> tuple[int, int]:
    if isinstance(item, str):
        return parse_tag(item)
    k, d = item
    return int(k), int(d)


@dataclass
class ExperimentSpec:
    environments: list = field(default_factory=lambda: [(25, 15)])
    dataset_sizes: list = field(default_factory=lambda: list(DEFAULT_SIZES))
    methods: list = field(default_factory=lambda: ["logging", "ips"])
    runs: int = 10
    alpha: float = 0.05
    base_seed: int = 0
    output_dir: str = "results"
    figure: str | None = None
    baseline: str | None = None
    epochs: int = 100
    fgan_epochs: int = 10
    batch_size: int = 10_000
    beta: float = 5.0
    n_eval_contexts: int = 10_000
    architecture: str = "synthetic_1x15"
    divergence_threshold: float = 0.0
    leak_bug_mode: bool = False
    workers: int = 1

    def __post_init__(self):
        self.environments = [_parse_env(e) for e in self.environments]
        self.dataset_sizes = [int(n) for n in self.dataset_sizes]
        self.methods = list(self.methods)
        if not self.environments or not self.dataset_sizes or not self.methods:
            raise ConfigurationError("environments, dataset_sizes and methods must be non-empty")
        if self.runs < 2:
            raise ConfigurationError("runs must be at least 2 for significance testing")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if any(n < 2 for n in self.dataset_sizes):
            raise ConfigurationError("dataset sizes must be at least 2")
        unknown = [m for m in self.methods if m not in ALL_METHODS]
        if unknown:
            raise ConfigurationError(f"unknown methods {unknown}; expected names from {ALL_METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigurationError("methods must be distinct")
        if self.figure is not None and self.figure not in FIGURES:
            raise ConfigurationError(f"figure must be one of {FIGURES}")
        if self.baseline is None and self.figure is not None:
            self.baseline = "logging" if self.figure == "divergence" else "ips"
        if self.baseline is not None and self.baseline not in self.methods:
            raise ConfigurationError(f"baseline {self.baseline!r} is not among the methods")
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(f"architecture must be one of {ARCHITECTURES}")
        if self.workers < 1 or self.n_eval_contexts < 1:
            raise ConfigurationError("workers and n_eval_contexts must be positive")

    @property
    def tags(self) -> list[str]:
        return [env_tag(k, d) for k, d in self.environments]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["environments"] = self.tags
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigurationError(f"unknown experiment fields {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_file(cls, path) -> "ExperimentSpec":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def divergence(cls, **overrides) -> "ExperimentSpec":
        """Divergence-only sweep over three environments against the logging policy."""
        base = dict(
            environments=list(DIVERGENCE_ENVIRONMENTS),
            dataset_sizes=list(DEFAULT_SIZES),
            methods=["logging", "divergence_only_direct", "divergence_only_fgan", "untrained"],
            figure="divergence",
            output_dir="results/divergence",
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def multiclass(cls, **overrides) -> "ExperimentSpec":
        """IPS-family comparison on synt-25-15 against IPS."""
        base = dict(
            environments=[(25, 15)],
            dataset_sizes=[100_000],
            methods=["logging", "ips", "poem", "direct", "vrcrm"],
            figure="multiclass",
            output_dir="results/multiclass",
        )
        base.update(overrides)
        return cls(**base)


def preset(name: str, **overrides) -> ExperimentSpec:
    if name not in FIGURES:
        raise ConfigurationError(f"unknown preset {name!r}; expected one of {FIGURES}")
    return getattr(ExperimentSpec, name)(**overrides)


# -- results ------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreRow:
    environment: str
    size: int
    method: str
    seed: int
    exp: float
    status: str = "ok"


@dataclass(frozen=True)
class AggregateRow:
    environment: str
    size: int
    method: str
    n_runs: int
    mean: float
    std: float
    baseline: str
    mean_difference: float
    t_statistic: float
    p_value: float
    significant: bool


@dataclass
class ExperimentResult:
    scores: list
    aggregates: list
    spec: ExperimentSpec | None = None
    seconds: float = 0.0

    def score_vector(self, environment: str, size: int, method: str) -> np.ndarray:
        rows = sorted(
            (r for r in self.scores if (r.environment, r.size, r.method) == (environment, size, method)),
            key=lambda r: r.seed,
        )
        return np.array([r.exp for r in rows])

    def aggregate(self, environment: str, size: int, method: str) -> AggregateRow:
        for row in self.aggregates:
            if (row.environment, row.size, row.method) == (environment, size, method):
                return row
        raise KeyError((environment, size, method))

    @classmethod
    def from_dir(cls, path, alpha: float = 0.05, baseline: str | None = None) -> "ExperimentResult":
        """Reload ``scores.csv`` and rebuild the aggregates from it."""
        path = Path(path)
        spec = None
        if (path / "spec.json").exists():
            spec = ExperimentSpec.from_file(path / "spec.json")
            alpha = spec.alpha
            baseline = spec.baseline if baseline is None else baseline
        scores = read_scores(path / "scores.csv")
        return cls(scores, aggregate_scores(scores, alpha, baseline), spec)


def _fmt(value: float) -> str:
    return repr(float(value))


def write_scores(path, scores) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["environment", "size", "method", "seed", "exp", "status"])
        for r in scores:
            w.writerow([r.environment, r.size, r.method, r.seed, _fmt(r.exp), r.status])


def read_scores(path) -> list[ScoreRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            ScoreRow(r["environment"], int(r["size"]), r["method"], int(r["seed"]), float(r["exp"]), r.get("status", "ok"))
            for r in csv.DictReader(fh)
        ]


def aggregate_scores(scores, alpha: float = 0.05, baseline: str | None = None) -> list[AggregateRow]:
    """Mean, sample std and a paired test against ``baseline`` per (environment, size, method)."""
    groups: dict = {}
    for r in scores:
        groups.setdefault((r.environment, r.size, r.method), {})[r.seed] = r.exp
    rows = []
    for (tag, size, method), by_seed in groups.items():
        vals = np.array([v for v in by_seed.values() if math.isfinite(v)])
        mean = float(vals.mean()) if vals.size else float("nan")
        std = float(vals.std(ddof=1)) if vals.size > 1 else float("nan")
        diff = t = p = float("nan")
        significant = False
        ref = groups.get((tag, size, baseline)) if baseline is not None else None
        if ref is not None and method != baseline:
            seeds = sorted(s for s in by_seed if s in ref and math.isfinite(by_seed[s]) and math.isfinite(ref[s]))
            if len(seeds) >= 2:
                report = paired_t_test([by_seed[s] for s in seeds], [ref[s] for s in seeds], alpha)
                diff, t, p, significant = report.mean_difference, report.t_statistic, report.p_value, report.significant
        rows.append(AggregateRow(tag, size, method, int(vals.size), mean, std, baseline or "", diff, t, p, significant))
    return rows


def write_aggregates(path, aggregates) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["environment", "size", "method", "n_runs", "mean", "std", "significant", "p_value"])
        for r in aggregates:
            w.writerow([r.environment, r.size, r.method, r.n_runs, _fmt(r.mean), _fmt(r.std), int(r.significant), _fmt(r.p_value)])


def write_significance(path, aggregates) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["environment", "size", "method", "baseline", "mean_difference", "t_statistic", "p_value", "significant"])
        for r in aggregates:
            if r.baseline and r.method != r.baseline:
                w.writerow([r.environment, r.size, r.method, r.baseline, _fmt(r.mean_difference),
                            _fmt(r.t_statistic), _fmt(r.p_value), int(r.significant)])


# -- execution ----------------------------------------------------------------


def train_config(spec: ExperimentSpec, method: str, seed: int) -> TrainConfig:
    overrides = {}
    if method in EXTRA_METHODS:
        method, overrides = EXTRA_METHODS[method]
    cfg = TrainConfig(
        method=method,
        epochs=spec.epochs,
        fgan_epochs=spec.fgan_epochs,
        batch_size=spec.batch_size,
        objective=ObjectiveConfig(divergence_threshold=spec.divergence_threshold),
        seed=seed,
        leak_bug_mode=spec.leak_bug_mode,
    )
    return replace(cfg, **overrides)


def run_cell(spec: ExperimentSpec, n_actions: int, context_dim: int, size: int, method: str, run: int) -> ScoreRow:
    """Train and evaluate one (environment, size, method, run); failures become NaN rows."""
    tag = env_tag(n_actions, context_dim)
    seeds = cell_seeds(spec.base_seed, tag, size, run)
    env = make_environment(n_actions, context_dim, spec.beta, seeds.environment)
    eval_rng = np.random.default_rng(seeds.evaluation)
    try:
        if method == "logging":
            policy = LoggingPolicy(env)
        else:
            split = make_split(env, size, np.random.default_rng(seeds.data))
            init = SoftmaxPolicy.create(context_dim, n_actions, np.random.default_rng(seeds.init), spec.architecture)
            policy, _ = train(init, split, train_config(spec, method, seeds.train))
        exp = evaluate_policy(policy, env, spec.n_eval_contexts, eval_rng)
        status = "ok"
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        log.warning("cell %s/%d/%s/%d failed: %s", tag, size, method, run, exc)
        exp, status = float("nan"), f"failed: {type(exc).__name__}: {exc}"
    return ScoreRow(tag, size, method, run, exp, status)


def _run_cell_args(args) -> ScoreRow:
    kernels.tune_allocator()
    return run_cell(*args)


def _cells(spec: ExperimentSpec):
    for k, d in spec.environments:
        for size in spec.dataset_sizes:
            for method in spec.methods:
                for run in range(spec.runs):
                    yield spec, k, d, size, method, run


def run_experiment(spec: ExperimentSpec, write: bool = True, progress=None) -> ExperimentResult:
    """Run every cell of ``spec``, aggregate, and (optionally) write all outputs."""
    kernels.tune_allocator()
    out = Path(spec.output_dir)
    if write:
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {out}: {exc}") from exc
        if not os.access(out, os.W_OK):
            raise OSError(f"output directory {out} is not writable")
    start = time.perf_counter()
    cells = list(_cells(spec))
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            scores = list(pool.map(_run_cell_args, cells))
    else:
        scores = []
        for i, args in enumerate(cells):
            scores.append(run_cell(*args))
            if progress is not None:
                progress(i + 1, len(cells), scores[-1])
    result = ExperimentResult(scores, aggregate_scores(scores, spec.alpha, spec.baseline), spec,
                              time.perf_counter() - start)
    if write:
        (out / "spec.json").write_text(spec.to_json(), encoding="utf-8")
        write_scores(out / "scores.csv", scores)
        write_aggregates(out / "aggregate.csv", result.aggregates)
        write_significance(out / "significance.csv", result.aggregates)
        if spec.figure is not None:
            from .plots import emit_plot_data

            emit_plot_data(result, spec.figure, out)
    return result

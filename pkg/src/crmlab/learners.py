"""Softmax policies and the off-policy training loops."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bandit_env import DatasetSplit, LoggedDataset
from .diffnet import AdamState, GumbelConfig, Network
from .errors import ConfigurationError
from .estimators import (
    ObjectiveConfig,
    divergence_value_and_grad,
    estimate_divergence_direct,
    estimate_ips,
    ips_value_and_grad,
    objective_value_and_grad,
    sqrt_penalty,
    vrcrm_objective,
)
from .fgan import FganState, fgan_step

ARCHITECTURES = ("synthetic_1x15", "vrcrm_32_8")
METHODS = (
    "ips",
    "direct",
    "poem",
    "vrcrm",
    "divergence_only_fgan",
    "divergence_only_direct",
    "untrained",
)
POEM_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


class SoftmaxPolicy:
    """pi_theta(a | x): a network whose last layer is a softmax over actions."""

    def __init__(self, network: Network, architecture: str = "custom"):
        if network.layers[-1].kind != "softmax":
            raise ConfigurationError("a softmax policy must end in a softmax layer")
        self.network = network
        self.architecture = architecture

    @classmethod
    def create(cls, context_dim: int, n_actions: int, rng: np.random.Generator,
               architecture: str = "synthetic_1x15") -> "SoftmaxPolicy":
        if architecture == "synthetic_1x15":
            net = Network.mlp(context_dim, [15], n_actions, rng)
        elif architecture == "vrcrm_32_8":
            net = Network.mlp(context_dim, [32, 8], n_actions, rng, batchnorm=True)
        else:
            raise ConfigurationError(f"unknown architecture {architecture!r}")
        return cls(net, architecture)

    @property
    def n_actions(self) -> int:
        return self.network.output_width

    @property
    def parameters(self) -> np.ndarray:
        return self.network.parameters

    def forward(self, contexts) -> np.ndarray:
        """Training-mode probabilities; keeps intermediates for ``backward``."""
        return self.network.forward(contexts)

    def backward(self, grad_probs) -> np.ndarray:
        return self.network.backward(grad_probs, input_gradient=False)

    def action_probs(self, contexts) -> np.ndarray:
        """Evaluation-mode probabilities, leaving training state untouched."""
        net = self.network
        mode, cache = net.mode, net._cache
        net.mode = "eval"
        try:
            return net.forward(contexts, update_stats=False)
        finally:
            net.mode, net._cache = mode, cache

    __call__ = action_probs

    def copy(self) -> "SoftmaxPolicy":
        return SoftmaxPolicy(self.network.copy(), self.architecture)

    def to_dict(self) -> dict:
        return {"architecture": self.architecture, **self.network.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "SoftmaxPolicy":
        return cls(Network.from_dict(data), data.get("architecture", "custom"))

    @classmethod
    def from_json(cls, text: str) -> "SoftmaxPolicy":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TrainConfig:
    method: str = "ips"
    epochs: int = 100
    fgan_epochs: int = 10
    batch_size: int = 10_000
    lr_ips: float | None = None
    lr_fgan: float = 0.01
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    seed: int = 0
    gumbel: GumbelConfig = field(default_factory=GumbelConfig)
    leak_bug_mode: bool = False
    poem_lambda: float | None = None
    poem_grid: tuple = POEM_GRID

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.epochs < 0 or self.fgan_epochs < 0:
            raise ConfigurationError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be positive")
        if self.lr_ips is not None and not self.lr_ips > 0:
            raise ConfigurationError("lr_ips must be positive")
        if not self.lr_fgan >= 0:
            raise ConfigurationError("lr_fgan must be non-negative")
        if self.method == "poem" and self.poem_lambda is None and not self.poem_grid:
            raise ConfigurationError("poem needs poem_lambda or a non-empty poem_grid")

    @property
    def learning_rate(self) -> float:
        if self.lr_ips is not None:
            return self.lr_ips
        return 0.001 if self.method == "vrcrm" else 0.01


@dataclass
class EpochRecord:
    epoch: int
    ips: float
    divergence: float
    objective: float
    fgan_bound: float = float("nan")
    fgan_iterations: int = 0


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "ips", "divergence", "objective", "fgan_bound"])
            for r in self.records:
                writer.writerow([r.epoch] + [repr(float(v)) for v in (r.ips, r.divergence, r.objective, r.fgan_bound)])


def _streams(entropy) -> tuple[np.random.Generator, ...]:
    """Independent generators for batch order, Gumbel noise and discriminator init."""
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(entropy).spawn(3))


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _nanmean(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return float(np.mean(vals)) if vals else float("nan")


def _record(epoch, rows, bounds=(), iterations=0) -> EpochRecord:
    return EpochRecord(
        epoch,
        _nanmean([r[0] for r in rows]),
        _nanmean([r[1] for r in rows]),
        _nanmean([r[2] for r in rows]),
        _nanmean(bounds),
        iterations,
    )


def _gradient_descent(policy, train_data, cfg, regularizer, lam, order_rng):
    obj = replace(cfg.objective, lam=lam)
    opt = AdamState.for_network(policy.network, cfg.learning_rate)
    trace = TrainTrace()
    for epoch in range(cfg.epochs):
        rows = []
        for idx in _batches(len(train_data), cfg.batch_size, order_rng):
            batch = train_data.subset(idx)
            probs = policy.forward(batch.contexts)
            ev, g = objective_value_and_grad(probs, batch, obj, regularizer=regularizer)
            opt.apply(policy.network, policy.backward(g))
            rows.append((ev.ips, ev.divergence, ev.objective))
        trace.records.append(_record(epoch, rows))
    return trace


def _entropy(cfg: TrainConfig, rng):
    return cfg.seed if rng is None else int(rng.integers(0, 2**63 - 1))


def train(policy: SoftmaxPolicy, data: DatasetSplit, cfg: TrainConfig, rng: np.random.Generator | None = None):
    """Train a copy of ``policy`` with ``cfg.method``; returns ``(policy, trace)``.

    Randomness comes from ``cfg.seed`` unless an explicit ``rng`` is given, in
    which case one integer is drawn from it to seed the run.
    """
    policy = policy.copy()
    entropy = _entropy(cfg, rng)
    method = cfg.method
    if method == "untrained":
        return policy, TrainTrace()
    if method == "vrcrm":
        return train_vrcrm(policy, data, cfg, entropy=entropy)
    if method.startswith("divergence_only"):
        return train_divergence_only(policy, data, cfg, entropy=entropy)
    order_rng, _, _ = _streams(entropy)
    if method == "ips":
        return policy, _gradient_descent(policy, data.train, cfg, "none", cfg.objective.lam, order_rng)
    if method == "direct":
        return policy, _gradient_descent(policy, data.train, cfg, "direct", cfg.objective.lambda_, order_rng)
    # poem
    if cfg.poem_lambda is not None:
        trace = _gradient_descent(policy, data.train, cfg, "poem_variance", cfg.poem_lambda, order_rng)
        trace.info["poem_lambda"] = cfg.poem_lambda
        return policy, trace
    best = None
    for lam in cfg.poem_grid:
        candidate = policy.copy()
        order_rng, _, _ = _streams(entropy)
        trace = _gradient_descent(candidate, data.train, cfg, "poem_variance", lam, order_rng)
        score = estimate_ips(candidate, data.validation)
        if best is None or score < best[0]:
            best = (score, lam, candidate, trace)
    score, lam, candidate, trace = best
    trace.info.update(poem_lambda=lam, validation_ips=score)
    return candidate, trace


def _fgan_loop(fg, policy, batch, cfg: TrainConfig, rng, bounds: list) -> int:
    """Up to ``fgan_epochs`` f-GAN steps on one batch; stops once d_hat < t / N (t = 0 never stops)."""
    threshold = cfg.objective.divergence_threshold
    for i in range(cfg.fgan_epochs):
        if threshold > 0 and estimate_divergence_direct(policy, batch) < threshold / len(batch):
            return i
        bounds.append(fgan_step(fg, policy, batch, rng)[2])
    return cfg.fgan_epochs


def train_vrcrm(policy: SoftmaxPolicy, data: DatasetSplit, cfg: TrainConfig, rng=None, entropy=None):
    """Alternate one IPS step with up to ``fgan_epochs`` f-GAN steps per batch.

    The f-GAN loop stops early once the direct divergence estimate on the
    batch drops below ``t / N``; ``t = 0`` disables the check.
    """
    if entropy is None:
        policy = policy.copy()
        entropy = _entropy(cfg, rng)
    order_rng, gumbel_rng, disc_rng = _streams(entropy)
    train_data = data.train
    k = policy.n_actions
    d = train_data.contexts.shape[1]
    ips_opt = AdamState.for_network(policy.network, cfg.learning_rate)
    fg = FganState.create(policy, d, k, disc_rng, cfg.lr_fgan, cfg.gumbel, cfg.leak_bug_mode, ips_opt)
    trace = TrainTrace()
    for epoch in range(cfg.epochs):
        rows, bounds, iterations = [], [], 0
        for idx in _batches(len(train_data), cfg.batch_size, order_rng):
            batch = train_data.subset(idx)
            probs = policy.forward(batch.contexts)
            ev, g = objective_value_and_grad(probs, batch, cfg.objective, regularizer="none")
            ips_opt.apply(policy.network, policy.backward(g))
            obj = vrcrm_objective(ev.ips, ev.divergence, ev.n, cfg.objective) if not math.isnan(ev.divergence) else ev.ips
            rows.append((ev.ips, ev.divergence, obj))
            iterations += _fgan_loop(fg, policy, batch, cfg, gumbel_rng, bounds)
        trace.records.append(_record(epoch, rows, bounds, iterations))
    trace.info["fgan_state"] = fg
    return policy, trace


def train_divergence_only(policy: SoftmaxPolicy, data: DatasetSplit, cfg: TrainConfig, rng=None, entropy=None):
    """Minimize only the divergence term.

    ``divergence_only_direct`` descends ``lambda * sqrt(d_hat / N)`` with a
    learning rate of ``cfg.learning_rate``; ``divergence_only_fgan`` runs the
    same per-batch f-GAN loop as VRCRM (``cfg.fgan_epochs`` steps at
    ``cfg.lr_fgan``) with the IPS step removed.
    """
    if cfg.method not in ("divergence_only_fgan", "divergence_only_direct"):
        raise ConfigurationError(f"{cfg.method!r} is not a divergence-only method")
    if entropy is None:
        policy = policy.copy()
        entropy = _entropy(cfg, rng)
    order_rng, gumbel_rng, disc_rng = _streams(entropy)
    train_data = data.train
    trace = TrainTrace()
    if cfg.method == "divergence_only_direct":
        if train_data.logging_probs is None:
            raise ConfigurationError("direct divergence training needs logging probabilities for every action")
        lam = cfg.objective.lambda_
        opt = AdamState.for_network(policy.network, cfg.learning_rate)
        for epoch in range(cfg.epochs):
            rows = []
            for idx in _batches(len(train_data), cfg.batch_size, order_rng):
                batch = train_data.subset(idx)
                probs = policy.forward(batch.contexts)
                div, g_div = divergence_value_and_grad(probs, batch.logging_probs)
                pen, slope = sqrt_penalty(div, len(batch), lam)
                opt.apply(policy.network, policy.backward(slope * g_div))
                rows.append((ips_value_and_grad(probs, batch)[0], div, pen))
            trace.records.append(_record(epoch, rows))
        return policy, trace

    k = policy.n_actions
    d = train_data.contexts.shape[1]
    fg = FganState.create(policy, d, k, disc_rng, cfg.lr_fgan, cfg.gumbel)
    for epoch in range(cfg.epochs):
        rows, bounds, iterations = [], [], 0
        for idx in _batches(len(train_data), cfg.batch_size, order_rng):
            batch = train_data.subset(idx)
            done = _fgan_loop(fg, policy, batch, cfg, gumbel_rng, bounds)
            iterations += done
            rows.append((float("nan"), float("nan"), bounds[-1] if done else float("nan")))
        trace.records.append(_record(epoch, rows, bounds, iterations))
    trace.info["fgan_state"] = fg
    return policy, trace

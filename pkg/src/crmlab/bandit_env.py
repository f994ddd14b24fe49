"""Synthetic contextual bandit with logistic rewards and a softmax logging policy.

Contexts are i.i.d. standard normal. Each action ``a`` has a weight vector and
bias; its success probability is ``sigmoid(<x, w_a> + b_a)``. The logging
policy is a softmax over ``beta * q(x, .)`` and rewards are Bernoulli(q).
"""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .diffnet import softmax

TAG_PATTERN = re.compile(r"^synt-(\d+)-(\d+)$", re.IGNORECASE)


def env_tag(n_actions: int, context_dim: int) -> str:
    return f"synt-{n_actions}-{context_dim}"


def parse_tag(tag: str) -> tuple[int, int]:
    """``"synt-25-15"`` -> ``(25, 15)``."""
    m = TAG_PATTERN.match(tag.strip())
    if m is None:
        raise ConfigurationError(f"environment tag must look like synt-K-d, got {tag!r}")
    return int(m.group(1)), int(m.group(2))


def sigmoid(z):
    with np.errstate(over="ignore", under="ignore"):
        return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class SyntheticEnvironment:
    n_actions: int
    context_dim: int
    beta: float
    seed: int
    reward_weights: np.ndarray = field(repr=False)
    reward_biases: np.ndarray = field(repr=False)

    @property
    def tag(self) -> str:
        return env_tag(self.n_actions, self.context_dim)

    def _as_batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.context_dim:
            raise ConfigurationError(
                f"{self.tag} expects contexts of dimension {self.context_dim}, got shape {x.shape}"
            )
        return x

    def expected_rewards(self, contexts) -> np.ndarray:
        """Matrix of q(x, a), one row per context."""
        x = self._as_batch(contexts)
        return sigmoid(x @ self.reward_weights.T + self.reward_biases)

    def logging_probs(self, contexts) -> np.ndarray:
        """Matrix of pi_0(a | x), one row per context."""
        return softmax(self.beta * self.expected_rewards(contexts))

    def sample_contexts(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.context_dim))

    def to_dict(self) -> dict:
        return {
            "n_actions": self.n_actions,
            "context_dim": self.context_dim,
            "beta": self.beta,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticEnvironment":
        return make_environment(data["n_actions"], data["context_dim"], data["beta"], data["seed"])

    @classmethod
    def from_json(cls, text: str) -> "SyntheticEnvironment":
        return cls.from_dict(json.loads(text))


def make_environment(n_actions: int, context_dim: int, beta: float = 5.0, seed: int = 0) -> SyntheticEnvironment:
    if n_actions < 2:
        raise ConfigurationError("need at least two actions")
    if context_dim < 1:
        raise ConfigurationError("context dimension must be at least one")
    rng = np.random.default_rng(seed)
    weights = rng.standard_normal((n_actions, context_dim))
    biases = rng.standard_normal(n_actions)
    weights.setflags(write=False)
    biases.setflags(write=False)
    return SyntheticEnvironment(n_actions, context_dim, float(beta), int(seed), weights, biases)


def true_reward(env: SyntheticEnvironment, x) -> np.ndarray:
    q = env.expected_rewards(x)
    return q[0] if np.ndim(x) == 1 else q


def logging_policy(env: SyntheticEnvironment, x) -> np.ndarray:
    p = env.logging_probs(x)
    return p[0] if np.ndim(x) == 1 else p


@dataclass(eq=False)
class LoggedDataset:
    """Bandit feedback ``(x_i, a_i, pi_0(a_i|x_i), r_i)``.

    ``logging_probs`` holds the full logging distribution per row; it is not
    part of the CSV format and is recomputed from the environment on load.
    """

    contexts: np.ndarray
    actions: np.ndarray
    propensities: np.ndarray
    rewards: np.ndarray
    environment_tag: str = ""
    logging_probs: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.contexts = np.asarray(self.contexts, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.propensities = np.asarray(self.propensities, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        n = self.contexts.shape[0]
        if n < 1:
            raise ConfigurationError("a dataset needs at least one row")
        if not (self.actions.shape == self.propensities.shape == self.rewards.shape == (n,)):
            raise ConfigurationError("dataset columns must have identical length")
        if self.logging_probs is not None:
            self.logging_probs = np.asarray(self.logging_probs, dtype=np.float64)

    def __len__(self) -> int:
        return self.contexts.shape[0]

    @property
    def n_actions(self) -> int | None:
        if self.logging_probs is not None:
            return self.logging_probs.shape[1]
        if self.environment_tag:
            return parse_tag(self.environment_tag)[0]
        return None

    @property
    def losses(self) -> np.ndarray:
        """delta(x, a) = -reward, so lower objectives mean more reward."""
        return -self.rewards

    def subset(self, index) -> "LoggedDataset":
        lp = None if self.logging_probs is None else self.logging_probs[index]
        return LoggedDataset(
            self.contexts[index], self.actions[index], self.propensities[index],
            self.rewards[index], self.environment_tag, lp,
        )

    def with_logging_probs(self, env: SyntheticEnvironment) -> "LoggedDataset":
        return LoggedDataset(
            self.contexts, self.actions, self.propensities, self.rewards,
            self.environment_tag, env.logging_probs(self.contexts),
        )

    def to_csv(self, path) -> None:
        d = self.contexts.shape[1]
        header = [f"context_{j}" for j in range(d)] + ["action", "propensity", "reward"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for x, a, p, r in zip(self.contexts, self.actions, self.propensities, self.rewards):
                writer.writerow([f"{v:.17g}" for v in x] + [int(a), f"{p:.17g}", int(r)])

    @classmethod
    def from_csv(cls, path, env: SyntheticEnvironment | None = None, environment_tag: str = "") -> "LoggedDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        d = sum(1 for name in header if name.startswith("context_"))
        if header[d:] != ["action", "propensity", "reward"]:
            raise ConfigurationError(f"unexpected dataset header in {path}")
        contexts = np.array([[float(v) for v in row[:d]] for row in rows])
        actions = np.array([int(row[d]) for row in rows])
        props = np.array([float(row[d + 1]) for row in rows])
        rewards = np.array([float(row[d + 2]) for row in rows])
        if env is not None:
            environment_tag = env.tag
        elif not environment_tag:
            m = re.match(r"(synt-\d+-\d+)", Path(path).name, re.IGNORECASE)
            environment_tag = m.group(1).lower() if m else ""
        data = cls(contexts, actions, props, rewards, environment_tag)
        return data.with_logging_probs(env) if env is not None else data


@dataclass(eq=False)
class DatasetSplit:
    train: LoggedDataset
    validation: LoggedDataset
    test: LoggedDataset

    def __post_init__(self):
        if not len(self.train) == len(self.validation) == len(self.test):
            raise ConfigurationError("train, validation and test splits must be the same size")


def sample_logged_data(env: SyntheticEnvironment, n: int, rng: np.random.Generator) -> LoggedDataset:
    if n < 1:
        raise ConfigurationError("sample size must be at least one")
    x = env.sample_contexts(n, rng)
    q = env.expected_rewards(x)
    probs = softmax(env.beta * q)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(n)
    actions = np.minimum((cdf < u[:, None]).sum(axis=1), env.n_actions - 1)
    rows = np.arange(n)
    props = probs[rows, actions]
    rewards = (rng.random(n) < q[rows, actions]).astype(np.float64)
    return LoggedDataset(x, actions, props, rewards, env.tag, probs)


def make_split(env: SyntheticEnvironment, n_per_split: int, rng: np.random.Generator) -> DatasetSplit:
    return DatasetSplit(
        sample_logged_data(env, n_per_split, rng),
        sample_logged_data(env, n_per_split, rng),
        sample_logged_data(env, n_per_split, rng),
    )


def dataset_filename(env: SyntheticEnvironment, seed: int, n: int) -> str:
    return f"{env.tag}_seed{seed}_{n}.csv"

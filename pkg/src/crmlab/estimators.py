"""Counterfactual objectives for softmax policies.

Every objective has a probability-level kernel returning ``(value, d value /
d probs)`` so that learners can push the gradient through the policy network.
The policy-level wrappers (``estimate_ips`` and friends) accept anything with
an ``action_probs(contexts)`` method, a callable, or a precomputed
probability matrix.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .bandit_env import LoggedDataset, SyntheticEnvironment
from .errors import ConfigurationError, DataError, NumericError

REGULARIZERS = ("none", "direct", "fgan", "poem_variance")


def compute_lambda(loss_bound: float, confidence: float) -> float:
    """sqrt(2 L ln(1/phi))."""
    if not 0.0 < confidence < 1.0:
        raise ConfigurationError(f"confidence must lie in (0, 1), got {confidence}")
    if not loss_bound > 0:
        raise ConfigurationError("loss bound must be positive")
    return math.sqrt(2.0 * loss_bound * math.log(1.0 / confidence))


@dataclass(frozen=True)
class ObjectiveConfig:
    loss_bound: float = 1.0
    confidence: float = 0.5
    lam: float | None = None
    divergence_threshold: float = 0.0
    divergence_bound: float | None = None  # bookkeeping only
    regularizer: str = "none"

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ConfigurationError(f"unknown regularizer {self.regularizer!r}")
        if self.lam is not None and self.lam < 0:
            raise ConfigurationError("lambda must be non-negative")
        if self.divergence_threshold < 0:
            raise ConfigurationError("divergence threshold must be non-negative")
        if self.divergence_bound is not None and not self.divergence_bound > 0:
            raise ConfigurationError("divergence bound must be positive")
        # validates L and phi even when lambda is given explicitly
        compute_lambda(self.loss_bound, self.confidence)

    @property
    def lambda_(self) -> float:
        if self.lam is not None:
            return float(self.lam)
        return compute_lambda(self.loss_bound, self.confidence)


@dataclass
class PolicyEvaluation:
    ips: float
    divergence: float
    variance: float
    objective: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def policy_probs(policy, contexts) -> np.ndarray:
    if isinstance(policy, np.ndarray):
        return policy
    if hasattr(policy, "action_probs"):
        return policy.action_probs(contexts)
    if callable(policy):
        return np.asarray(policy(contexts), dtype=np.float64)
    raise TypeError(f"cannot obtain action probabilities from {type(policy).__name__}")


def _check_propensities(data: LoggedDataset) -> None:
    if np.any(data.propensities <= 0):
        raise DataError("logged propensities must be strictly positive")


def _logging_matrix(data: LoggedDataset, logging_probs=None) -> np.ndarray:
    lp = data.logging_probs if logging_probs is None else np.asarray(logging_probs, dtype=np.float64)
    if lp is None:
        raise DataError("the direct divergence estimate needs pi_0(a|x) for every action")
    if np.any(lp <= 0):
        raise DataError("logging probabilities must be strictly positive for every action")
    return lp


# -- probability-level kernels -----------------------------------------------


def importance_weights(probs: np.ndarray, data: LoggedDataset) -> np.ndarray:
    _check_propensities(data)
    w = probs[np.arange(len(data)), data.actions] / data.propensities
    if not np.isfinite(w).all():
        raise NumericError("non-finite importance weight")
    return w


def ips_value_and_grad(probs: np.ndarray, data: LoggedDataset) -> tuple[float, np.ndarray]:
    n = len(data)
    w = importance_weights(probs, data)
    value = float(np.dot(w, data.losses)) / n
    grad = np.zeros_like(probs)
    grad[np.arange(n), data.actions] = data.losses / (data.propensities * n)
    return value, grad


def divergence_value_and_grad(probs: np.ndarray, logging_probs: np.ndarray) -> tuple[float, np.ndarray]:
    """(1/N) sum_i sum_a pi(a|x_i)^2 / pi_0(a|x_i) and its gradient."""
    return kernels.divergence_value_grad(probs, logging_probs)


def weighted_loss_variance_and_grad(probs: np.ndarray, data: LoggedDataset) -> tuple[float, np.ndarray]:
    n = len(data)
    if n < 2:
        raise ConfigurationError("sample variance needs at least two rows")
    w = importance_weights(probs, data)
    u = w * data.losses
    resid = u - u.mean()
    value = float(np.dot(resid, resid)) / (n - 1)
    grad = np.zeros_like(probs)
    grad[np.arange(n), data.actions] = (2.0 / (n - 1)) * resid * data.losses / data.propensities
    return value, grad


def sqrt_penalty(value: float, n: int, lam: float) -> tuple[float, float]:
    """lam * sqrt(value / n) and its derivative with respect to ``value``."""
    v = max(value, 0.0)
    pen = lam * math.sqrt(v / n)
    slope = lam / (2.0 * math.sqrt(v * n)) if v > 0 else 0.0
    return pen, slope


def objective_value_and_grad(
    probs: np.ndarray, data: LoggedDataset, cfg: ObjectiveConfig, regularizer: str | None = None
) -> tuple[PolicyEvaluation, np.ndarray]:
    """Evaluate IPS plus the configured square-root penalty on one batch.

    ``regularizer`` overrides ``cfg.regularizer``. ``'fgan'`` is treated as
    ``'none'`` here: its penalty is handled adversarially by the learner.
    """
    reg = cfg.regularizer if regularizer is None else regularizer
    n = len(data)
    lam = cfg.lambda_
    ips, grad = ips_value_and_grad(probs, data)
    div = float("nan")
    var = float("nan")
    objective = ips
    if data.logging_probs is not None:
        div, g_div = divergence_value_and_grad(probs, data.logging_probs)
    if reg == "direct":
        if data.logging_probs is None:
            _logging_matrix(data)
        pen, slope = sqrt_penalty(div, n, lam)
        objective = ips + pen
        grad = grad + slope * g_div
    elif reg == "poem_variance":
        var, g_var = weighted_loss_variance_and_grad(probs, data)
        pen, slope = sqrt_penalty(var, n, lam)
        objective = ips + pen
        grad = grad + slope * g_var
    return PolicyEvaluation(ips, div, var, objective, n), grad


# -- policy-level estimators --------------------------------------------------


def estimate_ips(policy, data: LoggedDataset) -> float:
    probs = policy_probs(policy, data.contexts)
    return ips_value_and_grad(probs, data)[0]


def exact_divergence(policy, env: SyntheticEnvironment, contexts, weights=None) -> float:
    """E_x[sum_a pi(a|x)^2 / pi_0(a|x)] over ``contexts``.

    ``weights`` optionally gives the probability of each context (defaults to
    uniform), which makes small enumerable worlds exact.
    """
    contexts = np.asarray(contexts, dtype=np.float64)
    if contexts.shape[0] < 1:
        raise ConfigurationError("need at least one context")
    p0 = env.logging_probs(contexts)
    if np.any(p0 <= 0):
        raise DataError("logging probabilities must be strictly positive")
    probs = policy_probs(policy, contexts)
    per_context = np.sum(probs * probs / p0, axis=1)
    if weights is None:
        return float(per_context.mean())
    return float(np.dot(np.asarray(weights, dtype=np.float64), per_context))


def estimate_divergence_direct(policy, data: LoggedDataset, logging_probs=None) -> float:
    lp = _logging_matrix(data, logging_probs)
    probs = policy_probs(policy, data.contexts)
    return divergence_value_and_grad(probs, lp)[0]


def vrcrm_objective(ips: float, divergence: float, n: int, cfg: ObjectiveConfig) -> float:
    """ips + lambda * sqrt(divergence / n)."""
    if divergence < -1e-12:
        raise NumericError("divergence must be non-negative")
    if n < 1:
        raise ConfigurationError("n must be at least one")
    return ips + sqrt_penalty(divergence, n, cfg.lambda_)[0]


def direct_objective(policy, data: LoggedDataset, cfg: ObjectiveConfig) -> float:
    probs = policy_probs(policy, data.contexts)
    _logging_matrix(data)
    return objective_value_and_grad(probs, data, cfg, regularizer="direct")[0].objective


def poem_variance_penalty(policy, data: LoggedDataset) -> float:
    """Unbiased sample variance of the weighted losses w_i * delta_i."""
    probs = policy_probs(policy, data.contexts)
    return weighted_loss_variance_and_grad(probs, data)[0]


def poem_objective(policy, data: LoggedDataset, cfg: ObjectiveConfig) -> float:
    probs = policy_probs(policy, data.contexts)
    return objective_value_and_grad(probs, data, cfg, regularizer="poem_variance")[0].objective


def evaluate_objective(policy, data: LoggedDataset, cfg: ObjectiveConfig) -> PolicyEvaluation:
    probs = policy_probs(policy, data.contexts)
    reg = "none" if cfg.regularizer == "fgan" else cfg.regularizer
    ev = objective_value_and_grad(probs, data, cfg, regularizer=reg)[0]
    if cfg.regularizer == "fgan" and np.isfinite(ev.divergence):
        ev.objective = vrcrm_objective(ev.ips, ev.divergence, ev.n, cfg)
    if not np.isfinite(ev.variance) and len(data) >= 2:
        ev.variance = weighted_loss_variance_and_grad(probs, data)[0]
    return ev

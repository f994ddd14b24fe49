"""Adversarial estimation of the second-moment divergence.

With ``f(u) = u**2`` the variational bound

    sup_T  E_{pi_theta}[T(x, a)] - E_{pi_0}[f*(T(x, a))],   f*(s) = s**2 / 4

equals ``E_x sum_a pi_theta(a|x)**2 / pi_0(a|x)``, attained at
``T = 2 pi_theta / pi_0``. The discriminator sees the context concatenated with
an action vector: one-hot for logged actions, a Gumbel-softmax sample for
actions drawn from the policy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .bandit_env import LoggedDataset, SyntheticEnvironment
from .diffnet import AdamState, GumbelConfig, Network, column_sums, gumbel_softmax_sample
from .errors import ConfigurationError, DataError, NumericError
from .estimators import policy_probs

PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class FDivergenceSpec:
    name: str = "pearson_like"

    @staticmethod
    def f(u):
        return np.square(u)

    @staticmethod
    def conjugate(s):
        return 0.25 * np.square(s)

    @staticmethod
    def conjugate_grad(s):
        return 0.5 * np.asarray(s)


PEARSON_LIKE = FDivergenceSpec()


def hidden_width(context_dim: int, n_actions: int) -> int:
    return (context_dim + 2 * n_actions) // 2


def one_hot(actions, n_actions: int) -> np.ndarray:
    out = np.zeros((len(actions), n_actions))
    out[np.arange(len(actions)), actions] = 1.0
    return out


class Discriminator:
    """T(x, y): one ReLU hidden layer, unconstrained scalar output.

    Parameters live in a plain diffnet :class:`Network` (dense, relu, dense).
    The training path avoids concatenating inputs: the first-layer weight is
    split into a context block and an action block, the context product is
    shared between logged and sampled rows, and one-hot logged actions become
    a row gather.
    """

    def __init__(self, network: Network, context_dim: int, n_actions: int):
        kinds = [layer.kind for layer in network.layers]
        if kinds != ["dense", "relu", "dense"]:
            raise ConfigurationError("discriminator network must be dense -> relu -> dense")
        if network.input_width != context_dim + n_actions or network.output_width != 1:
            raise ConfigurationError("discriminator network must map d + K inputs to one output")
        self.network = network
        self.context_dim = context_dim
        self.n_actions = n_actions

    @classmethod
    def create(cls, context_dim: int, n_actions: int, rng: np.random.Generator, width: int | None = None):
        width = hidden_width(context_dim, n_actions) if width is None else width
        net = Network.mlp(context_dim + n_actions, [max(width, 1)], 1, rng, head=None)
        return cls(net, context_dim, n_actions)

    @property
    def width(self) -> int:
        return self.network.layers[0].output_width

    def __call__(self, contexts, action_vectors) -> np.ndarray:
        out = self.network.forward(np.hstack([contexts, action_vectors]))[:, 0]
        if not np.isfinite(out).all():
            raise NumericError("non-finite discriminator output")
        return out

    def all_actions(self, contexts) -> np.ndarray:
        """T(x, e_a) for every context and every one-hot action, shape (n, K)."""
        contexts = np.asarray(contexts, dtype=np.float64)
        n, k = contexts.shape[0], self.n_actions
        x = np.repeat(contexts, k, axis=0)
        y = np.tile(np.eye(k), (n, 1))
        return self(x, y).reshape(n, k)

    # -- batched training path ---------------------------------------------

    def _weights(self):
        p = self.network.parameters
        d, k, h = self.context_dim, self.n_actions, self.width
        n_w1 = (d + k) * h
        w1 = p[:n_w1].reshape(d + k, h)
        return w1[:d], w1[d:], p[n_w1:n_w1 + h], p[n_w1 + h:n_w1 + 2 * h], p[n_w1 + 2 * h]

    def paired_pass(self, contexts, sampled, actions) -> dict:
        """Outputs on (x, sampled action vector) and (x, logged one-hot) rows."""
        wx, wy, b1, w2, b2 = self._weights()
        xw = contexts @ wx
        xw += b1
        h_s = sampled @ wy
        h_s += xw
        t_s = kernels.relu_dot(h_s, w2, b2)
        h_l, t_l = kernels.gather_relu_dot(xw, wy, actions, w2, b2)
        if not (np.isfinite(t_s).all() and np.isfinite(t_l).all()):
            raise NumericError("non-finite discriminator output")
        return {"x": contexts, "y": sampled, "a": actions, "h_s": h_s, "h_l": h_l, "t_s": t_s, "t_l": t_l}

    def parameter_grad(self, cache: dict, g_s, g_l) -> np.ndarray:
        """Parameter gradient given d(loss)/d(t_s) and d(loss)/d(t_l)."""
        _, _, _, w2, _ = self._weights()
        d, k, h = self.context_dim, self.n_actions, self.width
        h_s, h_l = cache["h_s"], cache["h_l"]
        gh_s = kernels.masked_outer(h_s, g_s, w2)
        gh_l = kernels.masked_outer(h_l, g_l, w2)
        grads = np.empty(self.network.n_params)
        n_w1 = (d + k) * h
        gw1 = grads[:n_w1].reshape(d + k, h)
        gh = gh_s + gh_l
        gw1[:d] = cache["x"].T @ gh
        gw1[d:] = cache["y"].T @ gh_s
        gw1[d:] += kernels.scatter_add_rows(gh_l, cache["a"], k)
        grads[n_w1:n_w1 + h] = column_sums(gh)
        grads[n_w1 + h:n_w1 + 2 * h] = h_s.T @ g_s + h_l.T @ g_l
        grads[n_w1 + 2 * h] = g_s.sum() + g_l.sum()
        return grads

    def sampled_input_grad(self, cache: dict, g_s) -> np.ndarray:
        """d(loss)/d(sampled action vectors) given d(loss)/d(t_s)."""
        _, wy, _, w2, _ = self._weights()
        return kernels.masked_outer(cache["h_s"], g_s, w2) @ wy.T


def enumerated_bound(probs, logging_probs, witness, weights=None, spec: FDivergenceSpec = PEARSON_LIKE) -> float:
    """Exact value of the variational bound for a given witness matrix T(x, a)."""
    per_context = np.sum(probs * witness - logging_probs * spec.conjugate(witness), axis=1)
    if weights is None:
        return float(per_context.mean())
    return float(np.dot(np.asarray(weights, dtype=np.float64), per_context))


def exact_lower_bound(policy, disc: Discriminator, env: SyntheticEnvironment, contexts, weights=None) -> float:
    contexts = np.asarray(contexts, dtype=np.float64)
    return enumerated_bound(
        policy_probs(policy, contexts), env.logging_probs(contexts), disc.all_actions(contexts), weights
    )


def optimal_witness_value(policy, env: SyntheticEnvironment, contexts, weights=None) -> float:
    contexts = np.asarray(contexts, dtype=np.float64)
    p0 = env.logging_probs(contexts)
    if np.any(p0 <= 0):
        raise DataError("logging probabilities must be strictly positive")
    probs = policy_probs(policy, contexts)
    return enumerated_bound(probs, p0, 2.0 * probs / p0, weights)


def _bound_from_outputs(t_sampled, t_logged) -> float:
    return float(t_sampled.mean() - PEARSON_LIKE.conjugate(t_logged).mean())


def lower_bound(policy, disc: Discriminator, data: LoggedDataset, gumbel: GumbelConfig, rng) -> float:
    """Monte-Carlo bound: policy actions via Gumbel-softmax, logged pairs for f*."""
    probs = policy_probs(policy, data.contexts)
    sample = gumbel_softmax_sample(np.log(np.maximum(probs, PROB_FLOOR)), gumbel, rng)
    out = disc.paired_pass(data.contexts, sample.value, data.actions)
    return _bound_from_outputs(out["t_s"], out["t_l"])


def _output_grads(out: dict):
    """d(bound)/d(t) for the sampled and logged rows."""
    n = out["t_s"].shape[0]
    return np.full(n, 1.0 / n), -PEARSON_LIKE.conjugate_grad(out["t_l"]) / n


def lower_bound_and_grads(policy, disc: Discriminator, data: LoggedDataset, gumbel: GumbelConfig, noise):
    """Bound value plus gradients for the policy and the discriminator.

    The Gumbel ``noise`` is passed in explicitly so the value is a
    deterministic function of both parameter vectors.
    """
    probs = policy.forward(data.contexts)
    sample = gumbel_softmax_sample(np.log(np.maximum(probs, PROB_FLOOR)), gumbel, noise=noise)
    out = disc.paired_pass(data.contexts, sample.value, data.actions)
    g_s, g_l = _output_grads(out)
    g_disc = disc.parameter_grad(out, g_s, g_l)
    g_y = disc.sampled_input_grad(out, g_s)
    g_policy = policy.backward(sample.backward(g_y) / np.maximum(probs, PROB_FLOOR))
    return _bound_from_outputs(out["t_s"], out["t_l"]), g_policy, g_disc


@dataclass
class FganState:
    discriminator: Discriminator
    disc_optimizer: AdamState
    gen_optimizer: AdamState
    gumbel: GumbelConfig = GumbelConfig()
    leak_bug_mode: bool = False

    @classmethod
    def create(
        cls,
        policy,
        context_dim: int,
        n_actions: int,
        rng: np.random.Generator,
        learning_rate: float = 0.01,
        gumbel: GumbelConfig = GumbelConfig(),
        leak_bug_mode: bool = False,
        ips_optimizer: AdamState | None = None,
    ) -> "FganState":
        """Fresh discriminator plus its optimizer and a generator optimizer.

        In ``leak_bug_mode`` the generator reuses ``ips_optimizer``,
        so its Adam moments mix IPS and f-GAN gradients.
        """
        disc = Discriminator.create(context_dim, n_actions, rng)
        disc_opt = AdamState.for_network(disc.network, learning_rate)
        if leak_bug_mode and ips_optimizer is not None:
            gen_opt = ips_optimizer
        else:
            gen_opt = AdamState.for_network(policy.network, learning_rate)
        return cls(disc, disc_opt, gen_opt, gumbel, leak_bug_mode)


def fgan_step(state: FganState, policy, data: LoggedDataset, rng: np.random.Generator):
    """One discriminator ascent step followed by one policy descent step.

    Both half-steps share one Gumbel sample. Returns ``(state, policy, bound)``
    where ``bound`` is the batch estimate after the discriminator update, i.e.
    the value the policy step descends.
    """
    disc = state.discriminator
    x = data.contexts
    probs = policy.forward(x)
    sample = gumbel_softmax_sample(np.log(np.maximum(probs, PROB_FLOOR)), state.gumbel, rng)

    out = disc.paired_pass(x, sample.value, data.actions)
    g_s, g_l = _output_grads(out)
    state.disc_optimizer.apply(disc.network, -disc.parameter_grad(out, g_s, g_l))

    out = disc.paired_pass(x, sample.value, data.actions)
    bound = _bound_from_outputs(out["t_s"], out["t_l"])
    g_y = disc.sampled_input_grad(out, g_s)
    g_theta = policy.backward(sample.backward(g_y) / np.maximum(probs, PROB_FLOOR))
    state.gen_optimizer.apply(policy.network, g_theta)
    return state, policy, bound

"""Small sequential networks with hand-written reverse-mode gradients.

Everything runs on float64 numpy arrays. A :class:`Network` owns one flat
parameter vector; each layer reads and writes views into it, so optimizers can
update the whole model with a single in-place vector operation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ConfigurationError, NumericError, StateError

LAYER_KINDS = ("dense", "relu", "batchnorm", "softmax", "log_softmax")

BATCHNORM_EPS = 1e-5
BATCHNORM_MOMENTUM = 0.1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    input_width: int
    output_width: int

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.input_width < 1 or self.output_width < 1:
            raise ConfigurationError(f"{self.kind} layer needs positive widths")
        if self.kind != "dense" and self.input_width != self.output_width:
            raise ConfigurationError(
                f"{self.kind} layer must preserve width, got "
                f"{self.input_width} -> {self.output_width}"
            )

    @property
    def n_params(self) -> int:
        if self.kind == "dense":
            return (self.input_width + 1) * self.output_width
        if self.kind == "batchnorm":
            # scale, shift, running mean, running variance
            return 4 * self.input_width
        return 0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "input_width": self.input_width, "output_width": self.output_width}


def dense(n_in: int, n_out: int) -> LayerSpec:
    return LayerSpec("dense", n_in, n_out)


def activation(kind: str, width: int) -> LayerSpec:
    return LayerSpec(kind, width, width)


_softmax = kernels.softmax_rows
_log_softmax = kernels.log_softmax_rows


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 2-D array."""
    return _softmax(np.asarray(z, dtype=np.float64))


def log_softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax of a 2-D array."""
    return _log_softmax(np.asarray(z, dtype=np.float64))


def softmax_backward(probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of row-wise softmax, given its output."""
    return kernels.softmax_backward(probs, upstream)


def column_sums(matrix) -> np.ndarray:
    """Sum over rows as a BLAS matrix-vector product, much faster than ``sum(axis=0)`` on tall inputs."""
    return np.ones(matrix.shape[0]) @ matrix


class Network:
    """A feed-forward stack of :class:`LayerSpec` layers.

    ``forward`` retains the intermediates needed by ``backward``. In train mode
    batchnorm normalizes with batch statistics and (optionally) updates its
    running statistics; in eval mode it applies the stored running statistics.
    """

    def __init__(self, layers: Sequence[LayerSpec], parameters=None, mode: str = "train"):
        layers = tuple(layers)
        if not layers:
            raise ConfigurationError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.output_width != nxt.input_width:
                raise ConfigurationError(
                    f"width mismatch between {prev.kind}({prev.output_width}) "
                    f"and {nxt.kind}({nxt.input_width})"
                )
        if mode not in ("train", "eval"):
            raise ConfigurationError(f"mode must be 'train' or 'eval', got {mode!r}")
        self.layers = layers
        self.mode = mode
        self._offsets = []
        total = 0
        for layer in layers:
            self._offsets.append(total)
            total += layer.n_params
        if parameters is None:
            self.parameters = np.zeros(total)
        else:
            self.parameters = np.array(parameters, dtype=np.float64)
            if self.parameters.shape != (total,):
                raise ConfigurationError(
                    f"expected {total} parameters, got {self.parameters.size}"
                )
        self._cache = None

    # -- construction -----------------------------------------------------

    @classmethod
    def initialized(cls, layers: Sequence[LayerSpec], rng: np.random.Generator) -> "Network":
        """Glorot-uniform dense weights, zero biases, identity batchnorm."""
        net = cls(layers)
        for i, layer in enumerate(net.layers):
            views = net._views(i)
            if layer.kind == "dense":
                bound = math.sqrt(6.0 / (layer.input_width + layer.output_width))
                views["weight"][...] = rng.uniform(-bound, bound, size=views["weight"].shape)
            elif layer.kind == "batchnorm":
                views["scale"][...] = 1.0
                views["running_var"][...] = 1.0
        return net

    @classmethod
    def mlp(
        cls,
        input_width: int,
        hidden: Sequence[int],
        output_width: int,
        rng: np.random.Generator,
        batchnorm: bool = False,
        head: str | None = "softmax",
    ) -> "Network":
        layers = []
        width = input_width
        for h in hidden:
            layers.append(dense(width, h))
            if batchnorm:
                layers.append(activation("batchnorm", h))
            layers.append(activation("relu", h))
            width = h
        layers.append(dense(width, output_width))
        if head is not None:
            layers.append(activation(head, output_width))
        return cls.initialized(layers, rng)

    @property
    def n_params(self) -> int:
        return self.parameters.size

    @property
    def input_width(self) -> int:
        return self.layers[0].input_width

    @property
    def output_width(self) -> int:
        return self.layers[-1].output_width

    def trainable_mask(self) -> np.ndarray:
        """Boolean mask that is False on batchnorm running statistics."""
        mask = np.ones(self.n_params, dtype=bool)
        for i, layer in enumerate(self.layers):
            if layer.kind == "batchnorm":
                w = layer.input_width
                start = self._offsets[i] + 2 * w
                mask[start:start + 2 * w] = False
        return mask

    def _views(self, i: int) -> dict:
        layer = self.layers[i]
        start = self._offsets[i]
        p = self.parameters
        if layer.kind == "dense":
            n_w = layer.input_width * layer.output_width
            return {
                "weight": p[start:start + n_w].reshape(layer.input_width, layer.output_width),
                "bias": p[start + n_w:start + n_w + layer.output_width],
            }
        if layer.kind == "batchnorm":
            w = layer.input_width
            return {
                "scale": p[start:start + w],
                "shift": p[start + w:start + 2 * w],
                "running_mean": p[start + 2 * w:start + 3 * w],
                "running_var": p[start + 3 * w:start + 4 * w],
            }
        return {}

    def train(self) -> "Network":
        self.mode = "train"
        return self

    def eval(self) -> "Network":
        self.mode = "eval"
        return self

    def copy(self) -> "Network":
        return Network(self.layers, self.parameters.copy(), self.mode)

    # -- computation ------------------------------------------------------

    def forward(self, batch, update_stats: bool = True) -> np.ndarray:
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ConfigurationError(
                f"expected a (rows, {self.input_width}) batch, got shape {x.shape}"
            )
        cache = []
        for i, layer in enumerate(self.layers):
            kind = layer.kind
            if kind == "dense":
                v = self._views(i)
                out = x @ v["weight"]
                out += v["bias"]
                cache.append(x)
            elif kind == "relu":
                out = np.maximum(x, 0.0)
                cache.append(x > 0.0)
            elif kind == "batchnorm":
                v = self._views(i)
                if self.mode == "train":
                    mean = x.mean(axis=0)
                    var = x.var(axis=0)
                    if update_stats:
                        n = x.shape[0]
                        unbiased = var * n / (n - 1) if n > 1 else var
                        v["running_mean"][...] = (1 - BATCHNORM_MOMENTUM) * v["running_mean"] + BATCHNORM_MOMENTUM * mean
                        v["running_var"][...] = (1 - BATCHNORM_MOMENTUM) * v["running_var"] + BATCHNORM_MOMENTUM * unbiased
                else:
                    mean = v["running_mean"].copy()
                    var = v["running_var"].copy()
                inv_std = 1.0 / np.sqrt(var + BATCHNORM_EPS)
                xhat = (x - mean) * inv_std
                out = xhat * v["scale"] + v["shift"]
                cache.append((xhat, inv_std, self.mode))
            elif kind == "softmax":
                out = _softmax(x)
                cache.append(out)
            else:  # log_softmax
                out = _log_softmax(x)
                cache.append(out)
            x = out
        if not np.isfinite(x).all():
            raise NumericError("network produced non-finite output")
        self._cache = cache
        return x

    __call__ = forward

    def backward(self, upstream_gradient, input_gradient: bool = True) -> np.ndarray:
        """Return d(loss)/d(parameters) given d(loss)/d(output).

        The gradient with respect to the network input is left in
        ``self.input_gradient`` (None when ``input_gradient`` is false).
        """
        if self._cache is None:
            raise StateError("backward called before forward")
        g = np.asarray(upstream_gradient, dtype=np.float64)
        grads = np.zeros(self.n_params)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            saved = self._cache[i]
            kind = layer.kind
            if kind == "dense":
                v = self._views(i)
                start = self._offsets[i]
                n_w = layer.input_width * layer.output_width
                grads[start:start + n_w] = (saved.T @ g).ravel()
                grads[start + n_w:start + n_w + layer.output_width] = column_sums(g)
                if i == 0 and not input_gradient:
                    g = None
                    break
                g = g @ v["weight"].T
            elif kind == "relu":
                g = g * saved
            elif kind == "batchnorm":
                v = self._views(i)
                xhat, inv_std, mode = saved
                w = layer.input_width
                start = self._offsets[i]
                grads[start:start + w] = column_sums(g * xhat)
                grads[start + w:start + 2 * w] = column_sums(g)
                dxhat = g * v["scale"]
                if mode == "train":
                    n = g.shape[0]
                    g = (inv_std / n) * (
                        n * dxhat - column_sums(dxhat) - xhat * column_sums(dxhat * xhat)
                    )
                else:
                    g = dxhat * inv_std
            elif kind == "softmax":
                g = softmax_backward(saved, g)
            else:
                g = kernels.log_softmax_backward(saved, g)
        if not np.isfinite(grads).all():
            raise NumericError("non-finite parameter gradient")
        self.input_gradient = g
        return grads

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "layers": [layer.to_dict() for layer in self.layers],
            "parameters": self.parameters.tolist(),
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Network":
        layers = [LayerSpec(**spec) for spec in data["layers"]]
        return cls(layers, data["parameters"], data.get("mode", "train"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Network":
        return cls.from_dict(json.loads(text))


def forward(net: Network, batch) -> np.ndarray:
    return net.forward(batch)


def backward(net: Network, upstream_gradient, input_gradient: bool = True) -> np.ndarray:
    return net.backward(upstream_gradient, input_gradient)


# -- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected Adam moments for one parameter vector."""

    n_params: int
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moments: np.ndarray = field(default=None, repr=False)
    second_moments: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigurationError("learning rate must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in (0, 1)")
        if self.first_moments is None:
            self.first_moments = np.zeros(self.n_params)
        if self.second_moments is None:
            self.second_moments = np.zeros(self.n_params)

    @classmethod
    def for_network(cls, net: Network, learning_rate: float = 0.001, **kwargs) -> "AdamState":
        return cls(net.n_params, learning_rate, **kwargs)

    def apply(self, net: Network, gradients) -> None:
        g = np.asarray(gradients, dtype=np.float64)
        if g.shape != (self.n_params,) or net.n_params != self.n_params:
            raise ConfigurationError(
                f"Adam tracks {self.n_params} parameters, got gradient of length "
                f"{g.size} for a network with {net.n_params}"
            )
        self.step += 1
        m, v = self.first_moments, self.second_moments
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * (g * g)
        m_hat = m / (1.0 - self.beta1 ** self.step)
        v_hat = v / (1.0 - self.beta2 ** self.step)
        net.parameters -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)

    def copy(self) -> "AdamState":
        return AdamState(
            self.n_params, self.learning_rate, self.beta1, self.beta2, self.epsilon,
            self.step, self.first_moments.copy(), self.second_moments.copy(),
        )


def adam_step(state: AdamState, net: Network, gradients) -> tuple[Network, AdamState]:
    """Apply one Adam update in place; returns ``(net, state)`` for chaining."""
    state.apply(net, gradients)
    return net, state


# -- Gumbel-softmax -----------------------------------------------------------


@dataclass(frozen=True)
class GumbelConfig:
    temperature: float = 1.0
    hard: bool = False

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigurationError("Gumbel-softmax temperature must be positive")


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    """-log(-log(u)) with u uniform, clamped to [1e-12, 1 - 1e-12]."""
    return kernels.gumbel_noise(rng.random(shape))


class GumbelSample:
    """A relaxed categorical sample that remembers how to backpropagate."""

    def __init__(self, soft: np.ndarray, temperature: float, hard: bool):
        self.soft = soft
        self.temperature = temperature
        self.hard = hard
        if hard:
            onehot = np.zeros_like(soft)
            onehot[np.arange(soft.shape[0]), soft.argmax(axis=1)] = 1.0
            self.value = onehot
        else:
            self.value = soft

    def backward(self, upstream) -> np.ndarray:
        """Gradient with respect to the log-probabilities.

        Hard samples use the straight-through estimator: the gradient of the
        relaxed sample is passed through unchanged.
        """
        return softmax_backward(self.soft, np.asarray(upstream)) / self.temperature


def gumbel_softmax_sample(
    log_probs, cfg: GumbelConfig, rng: np.random.Generator | None = None, noise=None
) -> GumbelSample:
    lp = np.asarray(log_probs, dtype=np.float64)
    if not np.isfinite(lp).all():
        raise NumericError("log-probabilities must be finite")
    if noise is None:
        if rng is None:
            raise ConfigurationError("need an rng or explicit noise")
        noise = gumbel_noise(lp.shape, rng)
    soft = kernels.perturbed_softmax(lp, noise, cfg.temperature)
    return GumbelSample(soft, cfg.temperature, cfg.hard)


# -- gradient checking --------------------------------------------------------


@dataclass
class GradientReport:
    max_relative_error: float
    passed: bool
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)


def gradient_check(
    net: Network,
    loss: Callable[[Network], tuple[float, np.ndarray]],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    floor: float | None = None,
) -> GradientReport:
    """Compare analytic gradients against central finite differences.

    ``loss(net)`` must return ``(value, gradient)``. The relative error uses
    ``max(|analytic|, |numeric|, floor)`` as denominator so that entries whose
    true gradient is zero are judged on an absolute scale. The default floor,
    ``1e-5 * max(1, |loss|)``, sits above the rounding noise of a central
    difference with ``h = 1e-5`` (about ``eps * |loss| / h``). Parameters are
    restored to their original values after every evaluation, which also
    undoes batchnorm running-statistic updates. Running statistics themselves
    are not perturbed.
    """
    original = net.parameters.copy()
    value, analytic = loss(net)
    net.parameters[...] = original
    if not np.isfinite(value):
        raise NumericError("loss is not finite")
    analytic = np.asarray(analytic, dtype=np.float64).copy()
    if floor is None:
        floor = 1e-5 * max(1.0, abs(float(value)))
    numeric = np.zeros_like(analytic)
    mask = net.trainable_mask()
    for i in np.flatnonzero(mask):
        net.parameters[i] = original[i] + h
        plus = loss(net)[0]
        net.parameters[...] = original
        net.parameters[i] = original[i] - h
        minus = loss(net)[0]
        net.parameters[...] = original
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericError("loss is not finite near the current parameters")
        numeric[i] = (plus - minus) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric)[mask] / denom[mask]
    worst = float(rel.max()) if rel.size else 0.0
    return GradientReport(worst, worst < tolerance, analytic, numeric)

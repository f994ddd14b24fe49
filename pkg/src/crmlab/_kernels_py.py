"""Pure-numpy reference implementations of the row kernels."""
import numpy as np

CLAMP = 1e-12


def softmax_rows(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    e /= e.sum(axis=1, keepdims=True)
    return e


def log_softmax_rows(z):
    s = z - z.max(axis=1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def softmax_backward(p, g):
    return p * (g - (g * p).sum(axis=1, keepdims=True))


def log_softmax_backward(lp, g):
    return g - np.exp(lp) * g.sum(axis=1, keepdims=True)


def gumbel_noise(u):
    return -np.log(-np.log(np.clip(u, CLAMP, 1.0 - CLAMP)))


def perturbed_softmax(logp, noise, tau):
    return softmax_rows((logp + noise) / tau)


def divergence_value_grad(p, p0):
    n = p.shape[0]
    ratio = p / p0
    return float(np.sum(ratio * p)) / n, (2.0 / n) * ratio


def relu_dot(pre, w, b):
    np.maximum(pre, 0.0, out=pre)
    return pre @ w + b


def gather_relu_dot(xw, wy, actions, w, b):
    h = np.maximum(xw + wy[actions], 0.0)
    return h, h @ w + b


def masked_outer(hid, g, w):
    out = np.multiply.outer(g, w)
    out[hid <= 0.0] = 0.0
    return out


def scatter_add_rows(rows, index, k):
    out = np.zeros((k, rows.shape[1]))
    np.add.at(out, index, rows)
    return out

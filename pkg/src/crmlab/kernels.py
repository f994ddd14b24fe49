"""Row-kernel dispatch: compiled Cython extension if importable, numpy otherwise.

Set ``CRMLAB_PURE_PYTHON=1`` before import to force the numpy backend. Both
backends are deterministic; they agree to rounding error but not bit-for-bit,
since the compiled kernels are built with reassociating float optimizations.
"""
import ctypes
import ctypes.util
import os
import sys

import numpy as np

from . import _kernels_py

_compiled = None
if os.environ.get("CRMLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def compiled_module():
    """The compiled kernel module, or None when it is not built."""
    if _compiled is not None:
        return _compiled
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_M_TRIM_THRESHOLD, _M_TOP_PAD, _M_MMAP_THRESHOLD = -1, -2, -3
_allocator_tuned = False


def tune_allocator(threshold: int = 256 << 20) -> bool:
    """Serve large temporaries from the heap instead of fresh mmaps (glibc only).

    Training allocates and frees batch-sized arrays thousands of times; with
    the default thresholds every one of them is a new mapping and pays page
    faults on first touch. Process-wide, idempotent, returns whether applied.
    """
    global _allocator_tuned
    if _allocator_tuned:
        return True
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        ok = all(
            libc.mallopt(param, value)
            for param, value in (
                (_M_MMAP_THRESHOLD, threshold),
                (_M_TRIM_THRESHOLD, 4 * threshold),
                (_M_TOP_PAD, threshold),
            )
        )
    except (OSError, AttributeError):
        return False
    _allocator_tuned = bool(ok)
    return _allocator_tuned


def python_module():
    return _kernels_py


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def softmax_rows(z):
    return _impl.softmax_rows(_c(z))


def log_softmax_rows(z):
    return _impl.log_softmax_rows(_c(z))


def softmax_backward(p, g):
    return _impl.softmax_backward(_c(p), _c(g))


def log_softmax_backward(lp, g):
    return _impl.log_softmax_backward(_c(lp), _c(g))


def gumbel_noise(u):
    return _impl.gumbel_noise(_c(u))


def perturbed_softmax(logp, noise, tau):
    return _impl.perturbed_softmax(_c(logp), _c(noise), float(tau))


def divergence_value_grad(p, p0):
    value, grad = _impl.divergence_value_grad(_c(p), _c(p0))
    return float(value), grad


def relu_dot(pre, w, b):
    """ReLU ``pre`` in place (must be C-contiguous float64) and return ``pre @ w + b``."""
    return _impl.relu_dot(pre, _c(w), float(b))


def gather_relu_dot(xw, wy, actions, w, b):
    return _impl.gather_relu_dot(_c(xw), _c(wy), np.ascontiguousarray(actions, dtype=np.int64), _c(w), float(b))


def masked_outer(hid, g, w):
    return _impl.masked_outer(_c(hid), _c(g), _c(w))


def scatter_add_rows(rows, index, k):
    return _impl.scatter_add_rows(_c(rows), np.ascontiguousarray(index, dtype=np.int64), int(k))

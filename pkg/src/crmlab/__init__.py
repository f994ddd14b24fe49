"""Off-policy learning for contextual bandits with divergence regularization.

Modules: ``diffnet`` (networks, Adam, Gumbel-softmax), ``bandit_env``
(synthetic logged data), ``estimators`` (IPS, divergences, penalized
objectives), ``fgan`` (adversarial divergence bound), ``learners`` (training
loops) and ``harness`` (evaluation, t-tests, sweeps, figures).
"""
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

"""Time the compiled row kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--rows 10000] [--actions 25] [--repeat 20] [--json out.json]

Kernel timings use batch-sized inputs (one training batch of the 25-action,
15-feature environment by default). The last rows time a whole f-GAN step and
a whole IPS step under each backend, each in a fresh interpreter because the
backend is chosen at import.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from crmlab import kernels

STEP_SNIPPET = """
import json, timeit, numpy as np
from crmlab import kernels
kernels.tune_allocator()
from crmlab.bandit_env import make_environment, sample_logged_data
from crmlab.diffnet import AdamState
from crmlab.estimators import objective_value_and_grad, ObjectiveConfig
from crmlab.fgan import FganState, fgan_step
from crmlab.learners import SoftmaxPolicy
env = make_environment({k}, {d}, seed=0)
data = sample_logged_data(env, {n}, np.random.default_rng(0))
policy = SoftmaxPolicy.create({d}, {k}, np.random.default_rng(1))
state = FganState.create(policy, {d}, {k}, np.random.default_rng(2))
opt = AdamState.for_network(policy.network, 0.01)
cfg = ObjectiveConfig()
rng = np.random.default_rng(3)
def ips_step():
    probs = policy.forward(data.contexts)
    _, g = objective_value_and_grad(probs, data, cfg, "direct")
    opt.apply(policy.network, policy.backward(g))
fgan = min(timeit.repeat(lambda: fgan_step(state, policy, data, rng), number=1, repeat={r}))
ips = min(timeit.repeat(ips_step, number=1, repeat={r}))
print(json.dumps([kernels.BACKEND, fgan, ips]))
"""


def kernel_cases(n, k, width, rng):
    z = rng.normal(0, 2, (n, k))
    p = kernels.python_module().softmax_rows(z)
    p0 = kernels.python_module().softmax_rows(rng.normal(0, 1, (n, k)))
    g = rng.normal(0, 1, (n, k))
    u = rng.random((n, k))
    xw, wy = rng.normal(0, 1, (n, width)), rng.normal(0, 1, (k, width))
    w = rng.normal(0, 1, width)
    actions = rng.integers(0, k, n).astype(np.int64)
    hid = np.maximum(xw, 0.0)
    gn = rng.normal(0, 1, n)
    return {
        "softmax_rows": lambda m: m.softmax_rows(z),
        "log_softmax_rows": lambda m: m.log_softmax_rows(z),
        "softmax_backward": lambda m: m.softmax_backward(p, g),
        "gumbel_noise": lambda m: m.gumbel_noise(u),
        "perturbed_softmax": lambda m: m.perturbed_softmax(np.log(p), g, 1.0),
        "divergence_value_grad": lambda m: m.divergence_value_grad(p, p0),
        "relu_dot": lambda m: m.relu_dot(xw.copy(), w, 0.1),
        "gather_relu_dot": lambda m: m.gather_relu_dot(xw, wy, actions, w, 0.1),
        "masked_outer": lambda m: m.masked_outer(hid, gn, w),
        "scatter_add_rows": lambda m: m.scatter_add_rows(hid, actions, k),
    }


def best_time(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def step_times(backend, n, k, d, repeat):
    env = dict(os.environ)
    if backend == "python":
        env["CRMLAB_PURE_PYTHON"] = "1"
    else:
        env.pop("CRMLAB_PURE_PYTHON", None)
    code = STEP_SNIPPET.format(n=n, k=k, d=d, r=repeat)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=10_000)
    parser.add_argument("--actions", type=int, default=25)
    parser.add_argument("--features", type=int, default=15)
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--json", help="also write results here")
    args = parser.parse_args(argv)

    kernels.tune_allocator()
    compiled = kernels.compiled_module()
    reference = kernels.python_module()
    width = (args.features + 2 * args.actions) // 2
    cases = kernel_cases(args.rows, args.actions, width, np.random.default_rng(0))
    rows = []
    for name, fn in cases.items():
        t_py = best_time(lambda: fn(reference), args.repeat)
        t_c = best_time(lambda: fn(compiled), args.repeat) if compiled is not None else float("nan")
        rows.append((name, t_c, t_py))
    backends = ["python"] + (["cython"] if compiled is not None else [])
    steps = {b: step_times(b, args.rows, args.actions, args.features, args.repeat) for b in backends}
    for label, idx in (("fgan_step", 1), ("direct_step", 2)):
        t_c = steps["cython"][idx] if "cython" in steps else float("nan")
        rows.append((label, t_c, steps["python"][idx]))

    print(f"rows={args.rows} K={args.actions} d={args.features} (best of {args.repeat}, milliseconds)")
    print(f"{'kernel':<24} {'cython':>9} {'numpy':>9} {'speedup':>8}")
    for name, t_c, t_py in rows:
        print(f"{name:<24} {1e3 * t_c:9.3f} {1e3 * t_py:9.3f} {t_py / t_c:7.2f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump([{"kernel": n, "cython_s": c, "numpy_s": p} for n, c, p in rows], fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())

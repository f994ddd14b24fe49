import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crmlab.diffnet import (
    AdamState,
    GumbelConfig,
    LayerSpec,
    Network,
    activation,
    adam_step,
    backward,
    dense,
    forward,
    gradient_check,
    gumbel_noise,
    gumbel_softmax_sample,
    log_softmax,
    softmax,
)
from crmlab.errors import ConfigurationError, NumericError, StateError

finite_rows = arrays(
    np.float64,
    st.tuples(st.integers(1, 6), st.integers(2, 7)),
    elements=st.floats(-30, 30, allow_nan=False),
)


def _quadratic_loss(target):
    # 0.5 * ||out - target||^2 averaged over rows
    def loss(net):
        out = net.forward(target["x"])
        diff = out - target["y"]
        n = out.shape[0]
        return 0.5 * float(np.sum(diff * diff)) / n, net.backward(diff / n)

    return loss


def _probe(rng, d_in, d_out, n=7):
    return {"x": rng.standard_normal((n, d_in)), "y": rng.standard_normal((n, d_out))}


class TestLayerSpec:
    def test_param_counts(self):
        assert dense(3, 4).n_params == 16
        assert activation("batchnorm", 5).n_params == 20
        assert activation("relu", 5).n_params == 0

    def test_rejects_bad_kind_and_widths(self):
        with pytest.raises(ConfigurationError):
            LayerSpec("conv", 2, 2)
        with pytest.raises(ConfigurationError):
            LayerSpec("relu", 2, 3)
        with pytest.raises(ConfigurationError):
            dense(0, 3)

    def test_network_rejects_width_mismatch(self):
        with pytest.raises(ConfigurationError):
            Network([dense(3, 4), dense(5, 2)])

    def test_wrong_parameter_length(self):
        with pytest.raises(ConfigurationError):
            Network([dense(2, 2)], parameters=np.zeros(5))


class TestSoftmax:
    @given(finite_rows)
    def test_rows_are_distributions(self, z):
        p = softmax(z)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    @given(finite_rows, st.floats(-50, 50))
    def test_shift_invariance(self, z, c):
        np.testing.assert_allclose(softmax(z), softmax(z + c), atol=1e-12)

    @given(finite_rows)
    def test_log_softmax_matches_log_of_softmax(self, z):
        np.testing.assert_allclose(log_softmax(z), np.log(softmax(z)), atol=1e-9)

    def test_extreme_logits_stay_finite(self):
        p = softmax(np.array([[1000.0, -1000.0, 0.0]]))
        np.testing.assert_allclose(p, [[1.0, 0.0, 0.0]], atol=1e-300)


class TestForwardBackward:
    def test_dense_forward_matches_matmul(self, rng):
        net = Network.initialized([dense(3, 2)], rng)
        x = rng.standard_normal((4, 3))
        w = net.parameters[:6].reshape(3, 2)
        b = net.parameters[6:]
        np.testing.assert_allclose(net(x), x @ w + b, atol=1e-14)

    def test_backward_before_forward(self, rng):
        net = Network.initialized([dense(3, 2)], rng)
        with pytest.raises(StateError):
            net.backward(np.zeros((1, 2)))

    def test_bad_input_shape(self, rng):
        net = Network.initialized([dense(3, 2)], rng)
        with pytest.raises(ConfigurationError):
            net.forward(np.zeros((2, 4)))

    def test_non_finite_output_raises(self):
        net = Network([dense(1, 1)], parameters=[np.inf, 0.0])
        with pytest.raises(NumericError):
            net.forward(np.ones((1, 1)))

    @pytest.mark.parametrize("head", [None, "softmax", "log_softmax"])
    @pytest.mark.parametrize("batchnorm", [False, True])
    def test_gradient_check(self, rng, head, batchnorm):
        net = Network.mlp(4, [6, 3], 5, rng, batchnorm=batchnorm, head=head)
        report = gradient_check(net, _quadratic_loss(_probe(rng, 4, 5)))
        assert report.passed, report.max_relative_error

    def test_input_gradient_matches_finite_differences(self, rng):
        net = Network.mlp(3, [4], 2, rng, head="softmax")
        x = rng.standard_normal((2, 3))
        g = rng.standard_normal((2, 2))
        net.forward(x)
        net.backward(g)
        analytic = net.input_gradient
        h = 1e-6
        numeric = np.zeros_like(x)
        for idx in np.ndindex(*x.shape):
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            numeric[idx] = (np.sum(net.forward(xp) * g) - np.sum(net.forward(xm) * g)) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, atol=1e-8)

    def test_skip_input_gradient_keeps_parameter_gradient(self, rng):
        net = Network.mlp(3, [4], 2, rng)
        x, g = rng.standard_normal((5, 3)), rng.standard_normal((5, 2))
        net.forward(x)
        full = net.backward(g)
        net.forward(x)
        lean = net.backward(g, input_gradient=False)
        np.testing.assert_array_equal(full, lean)
        assert net.input_gradient is None

    def test_module_level_wrappers(self, rng):
        net = Network.mlp(2, [3], 2, rng)
        x = rng.standard_normal((3, 2))
        np.testing.assert_array_equal(forward(net, x), net.forward(x))
        assert backward(net, np.ones((3, 2))).shape == (net.n_params,)


class TestBatchnorm:
    def test_train_mode_normalizes_against_numpy(self, rng):
        net = Network.initialized([activation("batchnorm", 3)], rng)
        x = rng.standard_normal((50, 3)) * 4 + 2
        out = net.forward(x)
        expected = (x - x.mean(0)) / np.sqrt(x.var(0) + 1e-5)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_running_stats_update(self, rng):
        net = Network.initialized([activation("batchnorm", 2)], rng)
        x = rng.standard_normal((10, 2)) + 3
        net.forward(x)
        running_mean = net.parameters[4:6]
        running_var = net.parameters[6:8]
        np.testing.assert_allclose(running_mean, 0.1 * x.mean(0), atol=1e-14)
        np.testing.assert_allclose(running_var, 0.9 + 0.1 * x.var(0, ddof=1), atol=1e-14)

    def test_eval_mode_uses_running_stats(self, rng):
        net = Network.initialized([activation("batchnorm", 2)], rng)
        net.parameters[4:6] = [1.0, -1.0]
        net.parameters[6:8] = [4.0, 9.0]
        net.eval()
        x = np.array([[3.0, 2.0]])
        np.testing.assert_allclose(net(x), [[2.0 / math.sqrt(4 + 1e-5), 3.0 / math.sqrt(9 + 1e-5)]])

    def test_running_stats_not_trainable(self, rng):
        net = Network.mlp(2, [3], 2, rng, batchnorm=True)
        mask = net.trainable_mask()
        assert mask.sum() == net.n_params - 6


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        # bias correction makes the first step lr * g / (|g| + eps)
        net = Network([dense(1, 2)], parameters=[0.0, 0.0, 0.0, 0.0])
        opt = AdamState.for_network(net, learning_rate=0.1)
        g = np.array([2.0, -0.5, 0.0, 1e-3])
        opt.apply(net, g)
        expected = -0.1 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(net.parameters, expected, rtol=1e-12)

    def test_matches_scalar_reference_over_many_steps(self, rng):
        # independent loop-based Adam on each coordinate
        grads = rng.standard_normal((25, 3))
        net = Network([dense(2, 1)], parameters=[0.3, -0.2, 0.7])
        opt = AdamState.for_network(net, learning_rate=0.05)
        ref = [0.3, -0.2, 0.7]
        m = [0.0] * 3
        v = [0.0] * 3
        for t, g in enumerate(grads, start=1):
            opt.apply(net, g)
            for i in range(3):
                m[i] = 0.9 * m[i] + 0.1 * g[i]
                v[i] = 0.999 * v[i] + 0.001 * g[i] ** 2
                mh = m[i] / (1 - 0.9 ** t)
                vh = v[i] / (1 - 0.999 ** t)
                ref[i] -= 0.05 * mh / (math.sqrt(vh) + 1e-8)
        np.testing.assert_allclose(net.parameters, ref, rtol=1e-12, atol=1e-15)

    def test_length_mismatch(self):
        net = Network([dense(1, 1)])
        opt = AdamState.for_network(net)
        with pytest.raises(ConfigurationError):
            opt.apply(net, np.zeros(3))

    def test_adam_step_returns_pair_and_copy_is_independent(self):
        net = Network([dense(1, 1)])
        opt = AdamState.for_network(net, 0.1)
        snapshot = opt.copy()
        net2, opt2 = adam_step(opt, net, np.ones(2))
        assert net2 is net and opt2 is opt
        assert snapshot.step == 0 and np.all(snapshot.first_moments == 0)

    def test_bad_hyperparameters(self):
        with pytest.raises(ConfigurationError):
            AdamState(2, learning_rate=-1.0)
        with pytest.raises(ConfigurationError):
            AdamState(2, beta1=1.0)

    def test_descends_a_quadratic(self, rng):
        net = Network.initialized([dense(3, 1)], rng)
        target = np.array([1.0, -2.0, 0.5, 0.25])
        opt = AdamState.for_network(net, 0.05)
        for _ in range(2000):
            opt.apply(net, net.parameters - target)
        np.testing.assert_allclose(net.parameters, target, atol=1e-3)


class TestGumbel:
    def test_noise_clamped_and_finite(self):
        class Extreme:
            def random(self, shape):
                out = np.zeros(shape)
                out.flat[1::2] = 1.0
                return out

        noise = gumbel_noise((2, 3), Extreme())
        assert np.isfinite(noise).all()
        np.testing.assert_allclose(noise.flat[0], -math.log(-math.log(1e-12)))

    def test_gumbel_max_reproduces_probabilities(self):
        # argmax(log p + G) ~ Categorical(p)
        p = np.array([0.5, 0.3, 0.15, 0.05])
        n = 200_000
        noise = gumbel_noise((n, 4), np.random.default_rng(0))
        counts = np.bincount(np.argmax(np.log(p) + noise, axis=1), minlength=4) / n
        se = np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(counts - p) < 4 * se)

    def test_soft_sample_is_distribution_and_temperature_sharpens(self, rng):
        lp = np.log(softmax(rng.standard_normal((50, 6))))
        noise = gumbel_noise(lp.shape, rng)
        warm = gumbel_softmax_sample(lp, GumbelConfig(5.0), noise=noise).value
        cold = gumbel_softmax_sample(lp, GumbelConfig(0.05), noise=noise).value
        np.testing.assert_allclose(warm.sum(1), 1.0, atol=1e-12)
        assert cold.max(1).mean() > warm.max(1).mean()

    def test_hard_sample_is_one_hot_with_straight_through_gradient(self, rng):
        lp = np.log(softmax(rng.standard_normal((8, 4))))
        noise = gumbel_noise(lp.shape, rng)
        hard = gumbel_softmax_sample(lp, GumbelConfig(1.0, hard=True), noise=noise)
        soft = gumbel_softmax_sample(lp, GumbelConfig(1.0), noise=noise)
        assert set(np.unique(hard.value)) <= {0.0, 1.0}
        np.testing.assert_array_equal(hard.value.sum(1), 1.0)
        np.testing.assert_array_equal(hard.value.argmax(1), soft.value.argmax(1))
        g = rng.standard_normal(lp.shape)
        np.testing.assert_array_equal(hard.backward(g), soft.backward(g))

    def test_soft_backward_matches_finite_differences(self, rng):
        lp = rng.standard_normal((3, 4))
        noise = gumbel_noise(lp.shape, rng)
        cfg = GumbelConfig(0.7)
        g = rng.standard_normal(lp.shape)
        analytic = gumbel_softmax_sample(lp, cfg, noise=noise).backward(g)
        h = 1e-6
        numeric = np.zeros_like(lp)
        for idx in np.ndindex(*lp.shape):
            a, b = lp.copy(), lp.copy()
            a[idx] += h
            b[idx] -= h
            fa = np.sum(gumbel_softmax_sample(a, cfg, noise=noise).value * g)
            fb = np.sum(gumbel_softmax_sample(b, cfg, noise=noise).value * g)
            numeric[idx] = (fa - fb) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, atol=1e-8)

    def test_config_validation(self, rng):
        with pytest.raises(ConfigurationError):
            GumbelConfig(0.0)
        with pytest.raises(ConfigurationError):
            gumbel_softmax_sample(np.zeros((1, 2)), GumbelConfig())
        with pytest.raises(NumericError):
            gumbel_softmax_sample(np.array([[-np.inf, 0.0]]), GumbelConfig(), rng)


class TestSerialization:
    def test_json_roundtrip(self, rng):
        net = Network.mlp(3, [4, 2], 3, rng, batchnorm=True)
        net.forward(rng.standard_normal((6, 3)))
        clone = Network.from_json(net.to_json())
        assert clone.layers == net.layers
        np.testing.assert_array_equal(clone.parameters, net.parameters)
        x = rng.standard_normal((2, 3))
        np.testing.assert_array_equal(clone.eval()(x), net.copy().eval()(x))

    def test_format_fields(self, rng):
        data = json.loads(Network.mlp(2, [2], 2, rng).to_json())
        assert set(data) == {"layers", "parameters", "mode"}
        assert data["layers"][0] == {"kind": "dense", "input_width": 2, "output_width": 2}


class TestGradientCheck:
    def test_detects_a_wrong_gradient(self, rng):
        net = Network.mlp(2, [3], 2, rng, head=None)
        probe = _probe(rng, 2, 2)
        good = _quadratic_loss(probe)

        def bad(n):
            value, grad = good(n)
            return value, grad * 1.1

        assert gradient_check(net, good).passed
        assert not gradient_check(net, bad).passed

    def test_restores_parameters(self, rng):
        net = Network.mlp(2, [3], 2, rng, batchnorm=True)
        before = net.parameters.copy()
        gradient_check(net, _quadratic_loss(_probe(rng, 2, 2)))
        np.testing.assert_array_equal(net.parameters, before)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_policy_outputs_are_distributions(seed):
    r = np.random.default_rng(seed)
    net = Network.mlp(4, [5], 6, r)
    p = net(r.standard_normal((9, 4)) * 10)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-12)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crmlab.bandit_env import LoggedDataset, make_environment, sample_logged_data
from crmlab.diffnet import softmax
from crmlab.errors import ConfigurationError, DataError, NumericError
from crmlab.estimators import (
    ObjectiveConfig,
    PolicyEvaluation,
    compute_lambda,
    direct_objective,
    divergence_value_and_grad,
    estimate_divergence_direct,
    estimate_ips,
    evaluate_objective,
    exact_divergence,
    importance_weights,
    ips_value_and_grad,
    objective_value_and_grad,
    poem_objective,
    poem_variance_penalty,
    sqrt_penalty,
    vrcrm_objective,
    weighted_loss_variance_and_grad,
)


def _random_policy(k, seed):
    w = np.random.default_rng(seed).standard_normal((3, k))

    def policy(x):
        return softmax(x[:, :3] @ w)

    return policy


def _fd_grad(fn, probs, h=1e-6):
    out = np.zeros_like(probs)
    for idx in np.ndindex(*probs.shape):
        a, b = probs.copy(), probs.copy()
        a[idx] += h
        b[idx] -= h
        out[idx] = (fn(a) - fn(b)) / (2 * h)
    return out


class TestLambda:
    def test_default_value_frozen(self):
        # sqrt(2 * 1 * ln 2)
        assert compute_lambda(1.0, 0.5) == pytest.approx(1.1774100225154747, abs=1e-15)
        assert ObjectiveConfig().lambda_ == pytest.approx(1.1774100225154747, abs=1e-15)

    def test_uses_natural_log(self):
        assert compute_lambda(2.0, math.exp(-1)) == pytest.approx(2.0, abs=1e-12)

    def test_explicit_lambda_wins(self):
        assert ObjectiveConfig(lam=0.0).lambda_ == 0.0

    @pytest.mark.parametrize("kwargs", [dict(confidence=0.0), dict(confidence=1.0), dict(loss_bound=0.0),
                                        dict(lam=-1.0), dict(regularizer="l2"), dict(divergence_threshold=-1.0)])
    def test_invalid_configs(self, kwargs):
        with pytest.raises(ConfigurationError):
            ObjectiveConfig(**kwargs)


class TestIps:
    def test_logging_policy_gives_negative_mean_reward(self, small_env, small_data):
        value = estimate_ips(lambda x: small_env.logging_probs(x), small_data)
        assert value == pytest.approx(-small_data.rewards.mean(), abs=1e-12)

    def test_unbiased_for_true_risk(self):
        env = make_environment(6, 4, seed=3)
        data = sample_logged_data(env, 200_000, np.random.default_rng(8))
        policy = _random_policy(6, 1)
        probs = policy(data.contexts)
        truth = -float(np.mean(np.sum(probs * env.expected_rewards(data.contexts), axis=1)))
        w = importance_weights(probs, data)
        se = float(np.std(w * data.losses, ddof=1)) / math.sqrt(len(data))
        assert abs(estimate_ips(policy, data) - truth) < 4 * se

    def test_hand_computed_example(self):
        data = LoggedDataset(np.zeros((3, 1)), [0, 1, 1], [0.5, 0.25, 0.5], [1, 0, 1])
        probs = np.array([[0.2, 0.8], [0.6, 0.4], [0.1, 0.9]])
        # -(0.2/0.5 * 1 + 0.4/0.25 * 0 + 0.9/0.5 * 1) / 3
        value, grad = ips_value_and_grad(probs, data)
        assert value == pytest.approx(-2.2 / 3, abs=1e-15)
        np.testing.assert_allclose(grad, [[-2 / 3, 0], [0, 0], [0, -2 / 3]], atol=1e-15)

    def test_rejects_zero_propensity(self):
        data = LoggedDataset(np.zeros((1, 1)), [0], [0.0], [1])
        with pytest.raises(DataError):
            estimate_ips(np.array([[1.0, 0.0]]), data)

    def test_gradient(self, small_data):
        probs = _random_policy(5, 2)(small_data.contexts)[:20]
        data = small_data.subset(np.arange(20))
        _, grad = ips_value_and_grad(probs, data)
        np.testing.assert_allclose(grad, _fd_grad(lambda p: ips_value_and_grad(p, data)[0], probs), atol=1e-8)


class TestDivergence:
    def test_identity_is_one(self, small_env, rng):
        x = rng.standard_normal((500, small_env.context_dim))
        assert abs(exact_divergence(small_env.logging_probs, small_env, x) - 1.0) < 1e-12

    def test_deterministic_against_uniform_is_k(self, rng):
        env = make_environment(7, 2, beta=0.0, seed=1)
        x = rng.standard_normal((40, 2))
        onehot = np.zeros((40, 7))
        onehot[np.arange(40), rng.integers(0, 7, 40)] = 1.0
        assert exact_divergence(onehot, env, x) == pytest.approx(7.0, abs=1e-12)

    def test_weighted_contexts(self, small_env, rng):
        x = rng.standard_normal((2, small_env.context_dim))
        policy = _random_policy(5, 0)
        p, p0 = policy(x), small_env.logging_probs(x)
        per = np.sum(p * p / p0, axis=1)
        assert exact_divergence(policy, small_env, x, weights=[0.25, 0.75]) == pytest.approx(0.25 * per[0] + 0.75 * per[1])

    def test_direct_estimator_unbiased(self):
        env = make_environment(5, 3, seed=4)
        policy = _random_policy(5, 3)
        truth = exact_divergence(policy, env, env.sample_contexts(400_000, np.random.default_rng(0)))
        estimates = [
            estimate_divergence_direct(policy, sample_logged_data(env, 2_000, np.random.default_rng(100 + i)))
            for i in range(50)
        ]
        se = np.std(estimates, ddof=1) / math.sqrt(50)
        assert abs(np.mean(estimates) - truth) < 3 * se

    def test_direct_estimator_needs_logging_probs(self, small_data):
        bare = LoggedDataset(small_data.contexts, small_data.actions, small_data.propensities, small_data.rewards)
        with pytest.raises(DataError):
            estimate_divergence_direct(_random_policy(5, 0), bare)
        value = estimate_divergence_direct(_random_policy(5, 0), bare, logging_probs=small_data.logging_probs)
        assert value == estimate_divergence_direct(_random_policy(5, 0), small_data)

    def test_gradient(self, small_data):
        data = small_data.subset(np.arange(15))
        probs = _random_policy(5, 4)(data.contexts)
        _, grad = divergence_value_and_grad(probs, data.logging_probs)
        numeric = _fd_grad(lambda p: divergence_value_and_grad(p, data.logging_probs)[0], probs)
        np.testing.assert_allclose(grad, numeric, atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10**6), st.floats(0.1, 10.0))
def test_divergence_at_least_one(k, seed, scale):
    # sum_a p^2 / p0 >= (sum_a p)^2 / sum_a p0 = 1
    r = np.random.default_rng(seed)
    p = softmax(scale * r.standard_normal((8, k)))
    p0 = softmax(r.standard_normal((8, k)))
    value, _ = divergence_value_and_grad(p, p0)
    assert value >= 1.0 - 1e-12


class TestPoem:
    def test_variance_matches_numpy(self, small_data):
        probs = _random_policy(5, 5)(small_data.contexts)
        w = probs[np.arange(len(small_data)), small_data.actions] / small_data.propensities
        value, _ = weighted_loss_variance_and_grad(probs, small_data)
        assert value == pytest.approx(np.var(w * small_data.losses, ddof=1), rel=1e-12)
        assert poem_variance_penalty(lambda x: probs, small_data) == pytest.approx(value)

    def test_needs_two_rows(self):
        data = LoggedDataset(np.zeros((1, 1)), [0], [0.5], [1])
        with pytest.raises(ConfigurationError):
            weighted_loss_variance_and_grad(np.array([[0.5, 0.5]]), data)

    def test_gradient(self, small_data):
        data = small_data.subset(np.arange(12))
        probs = _random_policy(5, 6)(data.contexts)
        _, grad = weighted_loss_variance_and_grad(probs, data)
        numeric = _fd_grad(lambda p: weighted_loss_variance_and_grad(p, data)[0], probs)
        np.testing.assert_allclose(grad, numeric, atol=1e-7)

    def test_objective(self, small_data):
        cfg = ObjectiveConfig(lam=0.3)
        policy = _random_policy(5, 7)
        ips = estimate_ips(policy, small_data)
        var = poem_variance_penalty(policy, small_data)
        assert poem_objective(policy, small_data, cfg) == pytest.approx(ips + 0.3 * math.sqrt(var / len(small_data)))


class TestObjectives:
    def test_sqrt_penalty(self):
        pen, slope = sqrt_penalty(4.0, 100, 2.0)
        assert pen == pytest.approx(0.4)
        assert slope == pytest.approx(2.0 / (2 * math.sqrt(400)))
        assert sqrt_penalty(-1e-15, 10, 1.0) == (0.0, 0.0)

    def test_vrcrm_objective(self):
        cfg = ObjectiveConfig()
        assert vrcrm_objective(-0.5, 4.0, 100, cfg) == pytest.approx(-0.5 + cfg.lambda_ * 0.2)
        with pytest.raises(NumericError):
            vrcrm_objective(0.0, -0.1, 10, cfg)
        with pytest.raises(ConfigurationError):
            vrcrm_objective(0.0, 1.0, 0, cfg)

    def test_direct_objective_composition(self, small_data):
        cfg = ObjectiveConfig()
        policy = _random_policy(5, 8)
        expected = estimate_ips(policy, small_data) + cfg.lambda_ * math.sqrt(
            estimate_divergence_direct(policy, small_data) / len(small_data)
        )
        assert direct_objective(policy, small_data, cfg) == pytest.approx(expected, abs=1e-14)

    def test_lambda_zero_direct_equals_ips_exactly(self, small_data):
        probs = _random_policy(5, 9)(small_data.contexts)
        ev_direct, g_direct = objective_value_and_grad(probs, small_data, ObjectiveConfig(lam=0.0), "direct")
        ev_ips, g_ips = objective_value_and_grad(probs, small_data, ObjectiveConfig(lam=0.0), "none")
        assert ev_direct.objective == ev_ips.objective
        np.testing.assert_array_equal(g_direct, g_ips)

    @pytest.mark.parametrize("reg", ["none", "direct", "poem_variance"])
    def test_objective_gradient(self, small_data, reg):
        data = small_data.subset(np.arange(10))
        probs = _random_policy(5, 10)(data.contexts)
        cfg = ObjectiveConfig(lam=0.7)
        _, grad = objective_value_and_grad(probs, data, cfg, reg)
        numeric = _fd_grad(lambda p: objective_value_and_grad(p, data, cfg, reg)[0].objective, probs)
        np.testing.assert_allclose(grad, numeric, atol=1e-7)

    def test_evaluate_objective(self, small_data):
        policy = _random_policy(5, 11)
        ev = evaluate_objective(policy, small_data, ObjectiveConfig(regularizer="fgan"))
        assert isinstance(ev, PolicyEvaluation)
        assert ev.objective == pytest.approx(vrcrm_objective(ev.ips, ev.divergence, ev.n, ObjectiveConfig()))
        assert np.isfinite(ev.variance)
        assert set(ev.to_dict()) == {"ips", "divergence", "variance", "objective", "n"}

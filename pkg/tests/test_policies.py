"""Gaussian policies: densities, scores, and factored composition."""

import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fd_grad
from lifelong_pg.policies import PolicyParams, compose_policy, feature_dim, features


def random_policy(rng, action_dim=2, feat=3, sigma=0.7):
    return PolicyParams(theta=rng.standard_normal(action_dim * feat), sigma=sigma,
                        action_dim=action_dim)


class TestCompose:
    def test_identity_dictionary(self):
        p = compose_policy(np.eye(3), np.array([0.0, 1.0, 0.0]), None, 0.5, 1)
        np.testing.assert_array_equal(p.theta, [0.0, 1.0, 0.0])

    def test_zero_dictionary_epsilon_only(self):
        v = np.array([2.0, -1.0, 0.5])
        p = compose_policy(np.zeros((3, 2)), np.array([3.0, 4.0]), v, 0.5, 1)
        np.testing.assert_array_equal(p.theta, v)

    def test_column_difference(self, rng):
        L = rng.standard_normal((4, 2))
        p = compose_policy(L, np.array([1.0, -1.0]), np.zeros(4), 0.5, 2)
        expected = np.array([sum(L[i, j] * [1.0, -1.0][j] for j in range(2))
                             for i in range(4)])
        np.testing.assert_allclose(p.theta, expected, atol=1e-14)
        np.testing.assert_allclose(p.theta, L[:, 0] - L[:, 1], atol=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            compose_policy(np.zeros((3, 2)), np.zeros(3), None, 0.5, 1)
        with pytest.raises(ValueError):
            compose_policy(np.zeros((3, 2)), np.zeros(2), np.zeros(4), 0.5, 1)

    @given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_linearity(self, a, b, seed):
        r = np.random.default_rng(seed)
        L = r.standard_normal((4, 2))
        s1, s2 = r.standard_normal(2), r.standard_normal(2)
        lhs = compose_policy(L, a * s1 + b * s2, None, 1.0, 2).theta
        rhs = a * compose_policy(L, s1, None, 1.0, 2).theta + \
            b * compose_policy(L, s2, None, 1.0, 2).theta
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestSampling:
    def test_noiseless_limit(self, rng):
        p = random_policy(rng, sigma=1e-12)
        feats = rng.standard_normal(3)
        action, _ = p.sample(feats, np.random.default_rng(0))
        np.testing.assert_allclose(action, p.mean_action(feats), atol=1e-9)

    def test_fixed_seed_determinism(self, rng):
        p = random_policy(rng)
        feats = rng.standard_normal(3)
        a1, lp1 = p.sample(feats, np.random.default_rng(42))
        a2, lp2 = p.sample(feats, np.random.default_rng(42))
        np.testing.assert_array_equal(a1, a2)
        assert lp1 == lp2

    def test_zero_mean_sample_average(self):
        p = PolicyParams(theta=np.zeros(6), sigma=1.0, action_dim=2)
        feats = np.ones(3)
        rng = np.random.default_rng(5)
        samples = np.array([p.sample(feats, rng)[0] for _ in range(10_000)])
        bound = 4.0 * 1.0 / math.sqrt(10_000)
        assert np.all(np.abs(samples.mean(axis=0)) < bound)


class TestLogProb:
    def test_at_mean(self):
        p = PolicyParams(theta=np.array([1.0, -2.0, 0.5, 0.0]), sigma=1.0, action_dim=2)
        feats = np.array([0.3, 0.7])
        assert p.log_prob(feats, p.mean_action(feats)) == pytest.approx(
            -1.0 * math.log(2 * math.pi))

    def test_unit_deviation_1d(self):
        p = PolicyParams(theta=np.zeros(1), sigma=1.0, action_dim=1)
        assert p.log_prob(np.zeros(1), np.array([1.0])) == pytest.approx(
            -0.5 * math.log(2 * math.pi) - 0.5)

    def test_matches_scipy_density(self, rng):
        p = random_policy(rng, sigma=0.37)
        feats = rng.standard_normal(3)
        action = rng.standard_normal(2)
        mean = p.mean_action(feats)
        expected = sum(scipy.stats.norm.logpdf(action[j], mean[j], 0.37)
                       for j in range(2))
        assert p.log_prob(feats, action) == pytest.approx(expected, abs=1e-12)


class TestScore:
    def test_zero_at_mean(self, rng):
        p = random_policy(rng)
        feats = rng.standard_normal(3)
        np.testing.assert_array_equal(p.grad_log_prob(feats, p.mean_action(feats)),
                                      np.zeros(p.d))

    def test_zero_features(self, rng):
        p = random_policy(rng)
        np.testing.assert_array_equal(p.grad_log_prob(np.zeros(3), np.ones(2)),
                                      np.zeros(p.d))

    def test_finite_difference(self, rng):
        p = random_policy(rng, sigma=0.9)
        feats = rng.standard_normal(3)
        action = rng.standard_normal(2)

        def f(theta):
            return p.with_theta(theta).log_prob(feats, action)

        analytic = p.grad_log_prob(feats, action)
        numeric = fd_grad(f, p.theta.copy())
        np.testing.assert_allclose(analytic, numeric,
                                   rtol=1e-6, atol=1e-8 * np.abs(analytic).max())

    def test_score_matrix_agrees_with_single(self, rng):
        p = random_policy(rng)
        feats = rng.standard_normal((8, 3))
        actions = rng.standard_normal((8, 2))
        stacked = p.score_matrix(feats, actions)
        for i in range(8):
            np.testing.assert_allclose(stacked[i], p.grad_log_prob(feats[i], actions[i]),
                                       atol=1e-13)

    def test_score_identity_zero_expectation(self):
        p = PolicyParams(theta=np.array([0.4, -0.2, 0.9, 0.1]), sigma=0.6, action_dim=2)
        feats = np.array([1.0, -0.5])
        rng = np.random.default_rng(2)
        scores = []
        for _ in range(20_000):
            a, _ = p.sample(feats, rng)
            scores.append(p.grad_log_prob(feats, a))
        scores = np.asarray(scores)
        bound = 4.0 * scores.std(axis=0) / math.sqrt(len(scores))
        assert np.all(np.abs(scores.mean(axis=0)) <= bound + 1e-12)

    def test_chain_rule_through_dictionary(self, rng):
        """d/ds log pi_{Ls} = L^T d/dtheta log pi at theta = L s."""
        L = rng.standard_normal((4, 3))
        s = rng.standard_normal(3)
        feats = rng.standard_normal(2)
        action = rng.standard_normal(2)
        sigma = 0.8

        def f(s_vec):
            return compose_policy(L, s_vec, None, sigma, 2).log_prob(feats, action)

        p = compose_policy(L, s, None, sigma, 2)
        analytic = L.T @ p.grad_log_prob(feats, action)
        np.testing.assert_allclose(analytic, fd_grad(f, s), rtol=1e-6, atol=1e-9)


class TestFeatureMaps:
    def test_dims(self):
        assert feature_dim("raw_state", 3) == 3
        assert feature_dim("state_bias", 3) == 4
        with pytest.raises(ValueError):
            feature_dim("quadratic", 3)

    def test_state_bias_appends_one(self, rng):
        x = rng.standard_normal(3)
        out = features("state_bias", x)
        np.testing.assert_array_equal(out[:3], x)
        assert out[3] == 1.0
        batch = features("state_bias", rng.standard_normal((5, 3)))
        np.testing.assert_array_equal(batch[:, 3], np.ones(5))

    def test_invalid_policy_params(self):
        with pytest.raises(ValueError):
            PolicyParams(theta=np.zeros(3), sigma=0.5, action_dim=2)
        with pytest.raises(ValueError):
            PolicyParams(theta=np.zeros(2), sigma=0.0, action_dim=1)
        with pytest.raises(ValueError):
            PolicyParams(theta=np.array([np.nan, 0.0]), sigma=0.5, action_dim=1)

    def test_json_roundtrip(self, rng):
        p = random_policy(rng)
        q = PolicyParams.from_json(p.to_json())
        np.testing.assert_array_equal(p.theta, q.theta)
        assert (p.sigma, p.action_dim, p.feature_map_id) == \
            (q.sigma, q.action_dim, q.feature_map_id)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pepg.policy import (
    log_policy_score,
    policy_entropy,
    sample_action,
    sample_actions,
    score_rows,
    softmax_policy,
)


class TestSoftmax:
    def test_zero_theta_is_uniform(self):
        pi = softmax_policy(np.zeros((3, 4)))
        np.testing.assert_allclose(pi, 0.25, atol=1e-15)

    def test_hand_evaluated_row(self):
        pi = softmax_policy(np.array([[np.log(2.0), 0.0]]))
        np.testing.assert_allclose(pi[0], [2 / 3, 1 / 3], atol=1e-12)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError, match="finite"):
            softmax_policy(np.array([[np.inf, 0.0]]))

    def test_overflow_safe(self):
        pi = softmax_policy(np.array([[800.0, 0.0]]))
        assert np.isfinite(pi).all() and pi[0, 0] > 0.999

    @settings(max_examples=50, deadline=None)
    @given(
        seed=st.integers(0, 10_000),
        shift=st.floats(-50.0, 50.0, allow_nan=False),
    )
    def test_shift_invariance(self, seed, shift):
        theta = np.random.default_rng(seed).normal(size=(3, 4))
        base = softmax_policy(theta)
        shifted = softmax_policy(theta + shift)
        assert np.abs(base - shifted).max() <= 1e-14


class TestScore:
    def test_uniform_two_actions(self):
        row = log_policy_score(np.zeros((2, 2)), s=0, a=0)
        np.testing.assert_allclose(row, [0.5, -0.5], atol=1e-15)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            log_policy_score(np.zeros((2, 2)), s=0, a=5)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_entries_sum_to_zero(self, seed):
        rng = np.random.default_rng(seed)
        theta = rng.normal(size=(3, 4))
        s, a = rng.integers(0, 3), rng.integers(0, 4)
        assert abs(log_policy_score(theta, s, a).sum()) <= 1e-12

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        theta = rng.normal(size=(3, 4))
        s, a = 1, 2
        row = log_policy_score(theta, s, a)
        h = 1e-6
        for a_prime in range(4):
            plus, minus = theta.copy(), theta.copy()
            plus[s, a_prime] += h
            minus[s, a_prime] -= h
            fd = (
                np.log(softmax_policy(plus)[s, a]) - np.log(softmax_policy(minus)[s, a])
            ) / (2 * h)
            assert abs(fd - row[a_prime]) <= 1e-6 * max(1.0, abs(row[a_prime]))
        # off-row coordinates do not move log pi(a|s)
        plus = theta.copy()
        plus[(s + 1) % 3, 0] += h
        assert np.log(softmax_policy(plus)[s, a]) == pytest.approx(
            np.log(softmax_policy(theta)[s, a]), abs=1e-12
        )

    def test_zero_mean_under_policy(self):
        rng = np.random.default_rng(8)
        theta = rng.normal(size=(4, 3))
        pi = softmax_policy(theta)
        for s in range(4):
            mean = sum(pi[s, a] * log_policy_score(theta, s, a) for a in range(3))
            assert np.abs(mean).max() <= 1e-10

    def test_score_rows_table_agrees(self):
        theta = np.random.default_rng(9).normal(size=(3, 4))
        table = score_rows(softmax_policy(theta))
        for s in range(3):
            for a in range(4):
                np.testing.assert_allclose(
                    table[s, a], log_policy_score(theta, s, a), atol=1e-14
                )


class TestSampling:
    def test_point_mass(self):
        policy = np.array([[1.0, 0.0, 0.0, 0.0]])
        rng = np.random.default_rng(0)
        assert all(sample_action(policy, 0, rng) == 0 for _ in range(100))

    def test_uniform_frequencies(self):
        policy = np.full((1, 4), 0.25)
        rng = np.random.default_rng(1)
        draws = sample_actions(policy, np.zeros(100_000, dtype=int), rng)
        freq = np.bincount(draws, minlength=4) / 100_000
        sigma = np.sqrt(0.25 * 0.75 / 100_000)
        assert np.all(np.abs(freq - 0.25) <= 3 * sigma)

    def test_seed_determinism(self):
        policy = softmax_policy(np.random.default_rng(2).normal(size=(3, 4)))
        a = [sample_action(policy, i % 3, np.random.default_rng(42)) for i in range(5)]
        b = [sample_action(policy, i % 3, np.random.default_rng(42)) for i in range(5)]
        assert a == b
        states = np.arange(12) % 3
        x = sample_actions(policy, states, np.random.default_rng(43))
        y = sample_actions(policy, states, np.random.default_rng(43))
        np.testing.assert_array_equal(x, y)


class TestEntropy:
    def test_uniform_is_log_a(self):
        assert policy_entropy(np.full((1, 4), 0.25), 0) == pytest.approx(
            np.log(4.0), abs=1e-12
        )

    def test_near_deterministic(self):
        row = np.array([[1.0 - 1e-5, 1e-5]])
        assert policy_entropy(row, 0) < 1e-3

    def test_hand_evaluated(self):
        assert policy_entropy(np.array([[2 / 3, 1 / 3]]), 0) == pytest.approx(
            0.6365142, abs=1e-6
        )

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), n_actions=st.integers(2, 6))
    def test_bounds(self, seed, n_actions):
        theta = np.random.default_rng(seed).normal(size=(1, n_actions))
        h = policy_entropy(softmax_policy(theta), 0)
        assert 0.0 <= h <= np.log(n_actions) + 1e-12

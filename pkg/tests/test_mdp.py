import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pepg.envs import random_tables
from pepg.mdp import (
    TabularTables,
    coverage_ratio,
    occupancy,
    q_and_advantage,
    soft_tables,
    solve_value,
)
from pepg.policy import softmax_policy


def _random_instance(seed, n_states, n_actions):
    rng = np.random.default_rng(seed)
    tables = random_tables(n_states, n_actions, rng)
    policy = softmax_policy(rng.normal(size=(n_states, n_actions)))
    return rng, tables, policy


def _power_iteration_value(tables, policy, gamma, n_iter=10_000):
    p_pi = np.einsum("sa,sat->st", policy, tables.transition)
    r_pi = np.einsum("sa,sa->s", policy, tables.reward)
    v = np.zeros(tables.n_states)
    for _ in range(n_iter):
        v = r_pi + gamma * p_pi @ v
    return v


class TestTables:
    def test_rejects_bad_rows(self):
        p = np.ones((2, 1, 2))  # rows sum to 2
        with pytest.raises(ValueError, match="sum to 1"):
            TabularTables(transition=p, reward=np.zeros((2, 1)), r_max=1.0)

    def test_rejects_negative_probs(self):
        p = np.array([[[1.5, -0.5]], [[0.5, 0.5]]])
        with pytest.raises(ValueError, match="nonnegative"):
            TabularTables(transition=p, reward=np.zeros((2, 1)), r_max=1.0)

    def test_rejects_oversized_reward(self):
        p = np.full((1, 1, 1), 1.0)
        with pytest.raises(ValueError, match="bound"):
            TabularTables(transition=p, reward=np.array([[2.0]]), r_max=1.0)


class TestSolveValue:
    def test_single_state_geometric_series(self):
        tables = TabularTables(np.ones((1, 1, 1)), np.ones((1, 1)), r_max=1.0)
        v = solve_value(tables, np.ones((1, 1)), 0.9)
        assert v[0] == pytest.approx(10.0, abs=1e-12)

    def test_gamma_zero_is_myopic(self):
        _, tables, policy = _random_instance(0, 3, 2)
        v = solve_value(tables, policy, 0.0)
        expected = (policy * tables.reward).sum(axis=1)
        np.testing.assert_allclose(v, expected, atol=1e-14)

    def test_matches_power_iteration(self):
        _, tables, policy = _random_instance(1, 3, 2)
        v = solve_value(tables, policy, 0.9)
        oracle = _power_iteration_value(tables, policy, 0.9)
        np.testing.assert_allclose(v, oracle, atol=1e-8)

    def test_bellman_residual(self):
        _, tables, policy = _random_instance(2, 4, 3)
        gamma = 0.95
        v = solve_value(tables, policy, gamma)
        q = tables.reward + gamma * tables.transition @ v
        residual = np.abs((policy * q).sum(axis=1) - v).max()
        assert residual <= 1e-10


class TestQAndAdvantage:
    def test_single_state_single_action(self):
        tables = TabularTables(np.ones((1, 1, 1)), np.full((1, 1), 0.3), r_max=1.0)
        policy = np.ones((1, 1))
        v = solve_value(tables, policy, 0.9)
        _, adv = q_and_advantage(tables, v, policy, 0.9)
        assert abs(adv[0, 0]) <= 1e-12

    def test_deterministic_policy_zero_advantage_on_chosen_action(self):
        rng, tables, _ = _random_instance(3, 3, 2)
        chosen = rng.integers(0, 2, size=3)
        policy = np.zeros((3, 2))
        policy[np.arange(3), chosen] = 1.0
        v = solve_value(tables, policy, 0.9)
        _, adv = q_and_advantage(tables, v, policy, 0.9)
        np.testing.assert_allclose(adv[np.arange(3), chosen], 0.0, atol=1e-10)

    def test_q_matches_monte_carlo(self):
        rng, tables, policy = _random_instance(4, 3, 2)
        gamma = 0.9
        v = solve_value(tables, policy, gamma)
        q, _ = q_and_advantage(tables, v, policy, gamma)
        s0, a0 = 1, 0
        n, horizon = 200_000, 200
        tail = gamma**horizon * tables.r_max / (1 - gamma)

        returns = np.zeros(n)
        states = np.full(n, s0)
        actions = np.full(n, a0)
        disc = 1.0
        for t in range(horizon):
            returns += disc * tables.reward[states, actions]
            cum = np.cumsum(tables.transition[states, actions], axis=1)
            states = (rng.random(n)[:, None] >= cum).sum(axis=1).clip(0, 2)
            cum_a = np.cumsum(policy[states], axis=1)
            actions = (rng.random(n)[:, None] >= cum_a).sum(axis=1).clip(0, 1)
            disc *= gamma
        se = returns.std(ddof=1) / np.sqrt(n)
        assert abs(returns.mean() - q[s0, a0]) <= 3 * se + tail


class TestOccupancy:
    def test_single_state_equals_policy(self):
        tables = TabularTables(np.ones((1, 2, 1)), np.zeros((1, 2)), r_max=1.0)
        policy = np.array([[0.3, 0.7]])
        occ = occupancy(tables, policy, 0.9, np.array([1.0]))
        np.testing.assert_allclose(occ.d, policy, atol=1e-12)

    def test_occupancy_value_identity(self):
        rng, tables, policy = _random_instance(5, 4, 2)
        gamma = 0.9
        rho = rng.dirichlet(np.ones(4))
        occ = occupancy(tables, policy, gamma, rho)
        v = solve_value(tables, policy, gamma)
        lhs = (occ.d * tables.reward).sum() / (1 - gamma)
        assert abs(lhs - rho @ v) <= 1e-8

    def test_matches_geometric_horizon_rollouts(self):
        rng, tables, policy = _random_instance(6, 4, 2)
        gamma = 0.9
        rho = np.full(4, 0.25)
        occ = occupancy(tables, policy, gamma, rho)

        n = 500_000
        stop = rng.geometric(1 - gamma, size=n) - 1  # P(T=t) = (1-gamma) gamma^t
        cum_rho = np.cumsum(rho)
        states = (rng.random(n)[:, None] >= cum_rho).sum(axis=1).clip(0, 3)
        counts = np.zeros((4, 2))
        for t in range(stop.max() + 1):
            cum_a = np.cumsum(policy[states], axis=1)
            actions = (rng.random(n)[:, None] >= cum_a).sum(axis=1).clip(0, 1)
            done = stop == t
            np.add.at(counts, (states[done], actions[done]), 1.0)
            cum = np.cumsum(tables.transition[states, actions], axis=1)
            states = (rng.random(n)[:, None] >= cum).sum(axis=1).clip(0, 3)
        freq = counts / n
        se = np.sqrt(freq * (1 - freq) / n)
        assert np.all(np.abs(freq - occ.d) <= 3 * se + 1e-12)


class TestSoftTables:
    def test_lambda_zero_identity(self):
        _, tables, policy = _random_instance(7, 3, 2)
        assert soft_tables(tables, policy, 0.0) is tables

    def test_uniform_policy_constant_shift(self):
        _, tables, _ = _random_instance(8, 3, 4)
        uniform = np.full((3, 4), 0.25)
        soft = soft_tables(tables, uniform, 1.5)
        np.testing.assert_allclose(
            soft.reward, tables.reward + 1.5 * np.log(4.0), atol=1e-12
        )

    def test_rejects_zero_probability(self):
        _, tables, _ = _random_instance(9, 2, 2)
        policy = np.array([[1.0, 0.0], [0.5, 0.5]])
        with pytest.raises(ValueError, match="positive"):
            soft_tables(tables, policy, 1.0)

    def test_soft_value_is_value_plus_discounted_entropy(self):
        # independent oracle: time-expanded sum of per-state entropies under
        # the propagated state distribution, truncated at a negligible tail
        rng, tables, policy = _random_instance(10, 4, 3)
        gamma, lam = 0.9, 2.0
        rho = rng.dirichlet(np.ones(4))
        v = solve_value(tables, policy, gamma)
        soft_v = solve_value(soft_tables(tables, policy, lam), policy, gamma)

        h = -(policy * np.log(policy)).sum(axis=1)
        p_pi = np.einsum("sa,sat->st", policy, tables.transition)
        mu, total, disc = rho.copy(), 0.0, 1.0
        for _ in range(600):
            total += disc * mu @ h
            mu = p_pi.T @ mu
            disc *= gamma
        assert abs(rho @ soft_v - (rho @ v + lam * total)) <= 1e-6


class TestCoverage:
    def test_identical_measures(self):
        _, tables, policy = _random_instance(11, 3, 2)
        occ = occupancy(tables, policy, 0.9, np.full(3, 1 / 3))
        assert coverage_ratio(occ, occ) == pytest.approx(1.0, abs=1e-12)

    def test_equals_exhaustive_max(self):
        rng, tables, policy = _random_instance(12, 3, 2)
        other = softmax_policy(rng.normal(size=(3, 2)))
        rho = np.full(3, 1 / 3)
        d1 = occupancy(tables, policy, 0.9, rho)
        d2 = occupancy(tables, other, 0.9, rho)
        exhaustive = max(
            d1.d[s, a] / d2.d[s, a] for s in range(3) for a in range(2)
        )
        assert coverage_ratio(d1, d2) == pytest.approx(exhaustive, rel=1e-12)

    def test_support_violation_returns_inf(self):
        d_num = np.array([[0.5, 0.5]])
        d_den = np.array([[1.0, 0.0]])
        assert coverage_ratio(d_num, d_den) == float("inf")


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    n_states=st.integers(2, 5),
    n_actions=st.integers(2, 4),
    gamma=st.sampled_from([0.5, 0.9, 0.99]),
)
def test_invariants_hold_on_random_instances(seed, n_states, n_actions, gamma):
    rng = np.random.default_rng(seed)
    tables = random_tables(n_states, n_actions, rng)
    policy = softmax_policy(rng.normal(size=(n_states, n_actions)))
    rho = rng.dirichlet(np.ones(n_states))

    occ = occupancy(tables, policy, gamma, rho)
    assert abs(occ.d.sum() - 1.0) <= 1e-10
    assert np.all(occ.d >= 0)

    v = solve_value(tables, policy, gamma)
    assert np.abs(v).max() <= tables.r_max / (1 - gamma) + 1e-9

    _, adv = q_and_advantage(tables, v, policy, gamma)
    assert np.abs((policy * adv).sum(axis=1)).max() <= 1e-10

    lam = 0.7
    soft_v = solve_value(soft_tables(tables, policy, lam), policy, gamma)
    bound = (tables.r_max + lam * np.log(n_actions)) / (1 - gamma)
    assert np.abs(soft_v).max() <= bound + 1e-9

    other = softmax_policy(rng.normal(size=(n_states, n_actions)))
    d2 = occupancy(tables, other, gamma, rho)
    assert coverage_ratio(occ, d2) >= 1.0 - 1e-12

import numpy as np
import pytest

from pepg.envs import StaticEnv, make_expfam, random_tables
from pepg.gradients import (
    EnvGrads,
    advantage_estimates,
    collect_trajectories,
    default_horizon,
    env_grad_fd,
    exact_gradient_fd,
    exact_performative_value,
    fit_value,
    gradient_samples,
    pepg_gradient,
    rewards_to_go,
    stack_batch,
    theorem_gradient,
)
from pepg.mdp import TabularTables, occupancy, q_and_advantage, solve_value
from pepg.policy import softmax_policy


def _static_env(seed, n_states=3, n_actions=2, gamma=0.9):
    tables = random_tables(n_states, n_actions, np.random.default_rng(seed))
    return StaticEnv(tables, gamma=gamma)


class TestCollect:
    def test_minimal_rollout(self):
        env = _static_env(0)
        trajs = collect_trajectories(
            env, np.zeros((3, 2)), 1, 1, np.random.default_rng(0)
        )
        assert len(trajs) == 1 and trajs[0].horizon == 1
        (s, a, s1, r) = trajs[0].steps()[0]
        assert r == env.tables.reward[s, a]

    def test_deterministic_world_gives_identical_trajectories(self):
        p = np.zeros((2, 2, 2))
        p[0, :, 1] = 1.0  # both actions move 0 -> 1
        p[1, :, 0] = 1.0  # and 1 -> 0
        tables = TabularTables(p, np.array([[0.1, 0.2], [0.3, 0.4]]), r_max=1.0)
        env = StaticEnv(tables, gamma=0.9, rho=np.array([1.0, 0.0]))
        theta = np.array([[500.0, 0.0], [500.0, 0.0]])  # action 0 a.s.
        trajs = collect_trajectories(env, theta, 8, 20, np.random.default_rng(1))
        s, a, s1, r = stack_batch(trajs)
        assert (s == s[0]).all() and (a == 0).all() and (r == r[0]).all()

    def test_mean_return_matches_exact_value(self):
        env = _static_env(2)
        theta = np.random.default_rng(3).normal(size=(3, 2))
        gamma = env.gamma
        horizon = 40
        tail = gamma**horizon * env.r_max / (1 - gamma)
        trajs = collect_trajectories(
            env, theta, 50_000, horizon, np.random.default_rng(4)
        )
        _, _, _, r = stack_batch(trajs)
        returns = rewards_to_go(r, gamma)[:, 0]
        v = solve_value(env.tables, softmax_policy(theta), gamma)
        exact = env.rho @ v
        se = returns.std(ddof=1) / np.sqrt(len(returns))
        assert abs(returns.mean() - exact) <= 3 * se + tail

    def test_seeded_streams_are_reproducible(self):
        env = _static_env(5)
        theta = np.ones((3, 2))
        a = collect_trajectories(env, theta, 4, 10, np.random.default_rng(7))
        b = collect_trajectories(env, theta, 4, 10, np.random.default_rng(7))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.states, y.states)
            np.testing.assert_array_equal(x.actions, y.actions)
            np.testing.assert_array_equal(x.rewards, y.rewards)


class TestDefaultHorizon:
    def test_tail_bound_holds(self):
        t = default_horizon(0.9, 1.0, eps_tail=1e-4)
        assert 0.9**t * 1.0 / 0.1 <= 1e-4
        assert 0.9 ** (t - 1) * 1.0 / 0.1 > 1e-4

    def test_gamma_zero(self):
        assert default_horizon(0.0, 1.0) == 1


class TestFitValue:
    def test_single_visits_reproduce_reward_to_go(self):
        env = _static_env(6)
        trajs = collect_trajectories(
            env, np.zeros((3, 2)), 1, 6, np.random.default_rng(8)
        )
        traj = trajs[0]
        first = {}
        g = rewards_to_go(traj.rewards[None, :], traj.gamma)[0]
        for t, s in enumerate(traj.states):
            first.setdefault(int(s), []).append(g[t])
        v = fit_value(trajs, n_states=3)
        for s, values in first.items():
            assert v[s] == pytest.approx(np.mean(values), abs=1e-12)

    def test_constant_reward_geometric_limit(self):
        # averaging reward-to-go over all visits truncates late visits;
        # the bias envelope is (c gamma / (1-gamma)^2) / T and vanishes as
        # the horizon grows
        p = np.ones((1, 1, 1))
        tables = TabularTables(p, np.full((1, 1), 0.5), r_max=1.0)
        env = StaticEnv(tables, gamma=0.9)
        horizon = 5000
        trajs = collect_trajectories(
            env, np.zeros((1, 1)), 2, horizon, np.random.default_rng(9)
        )
        v = fit_value(trajs, n_states=1)
        envelope = 0.5 * 0.9 / 0.1**2 / horizon
        assert abs(v[0] - 0.5 / 0.1) <= envelope + 1e-9

    def test_unvisited_states_keep_previous(self):
        traj_env = _static_env(10, n_states=2, n_actions=1)
        p = np.zeros((2, 1, 2))
        p[:, 0, 0] = 1.0  # absorb in state 0
        tables = TabularTables(p, np.zeros((2, 1)), r_max=1.0)
        env = StaticEnv(tables, gamma=0.9, rho=np.array([1.0, 0.0]))
        trajs = collect_trajectories(
            env, np.zeros((2, 1)), 3, 5, np.random.default_rng(11)
        )
        v = fit_value(trajs, n_states=2, previous=np.array([9.0, 7.0]))
        assert v[1] == 7.0  # never visited
        assert v[0] == pytest.approx(0.0, abs=1e-12)

    def test_large_batch_approaches_exact_values(self):
        env = _static_env(12)
        theta = np.random.default_rng(13).normal(size=(3, 2))
        gamma = env.gamma
        horizon = default_horizon(gamma, env.r_max, eps_tail=1e-4 * env.r_max)
        trajs = collect_trajectories(
            env, theta, 20_000, horizon, np.random.default_rng(14)
        )
        v_hat = fit_value(trajs, n_states=3)
        v = solve_value(env.tables, softmax_policy(theta), gamma)
        assert np.abs(v_hat - v).max() <= 0.02 * env.r_max / (1 - gamma)


class TestAdvantages:
    def test_zero_baseline_gives_reward_to_go(self):
        env = _static_env(15)
        trajs = collect_trajectories(
            env, np.zeros((3, 2)), 4, 10, np.random.default_rng(16)
        )
        adv = advantage_estimates(trajs, np.zeros(3))
        _, _, _, r = stack_batch(trajs)
        np.testing.assert_allclose(adv, rewards_to_go(r, 0.9), atol=1e-14)

    def test_batch_means_match_exact_advantages(self):
        # only visits with enough remaining horizon carry an (almost)
        # untruncated reward-to-go; late visits are excluded
        env = _static_env(17)
        theta = np.random.default_rng(18).normal(size=(3, 2)) * 0.5
        gamma = env.gamma
        policy = softmax_policy(theta)
        v = solve_value(env.tables, policy, gamma)
        _, adv_exact = q_and_advantage(env.tables, v, policy, gamma)
        t_eff = default_horizon(gamma, env.r_max, eps_tail=1e-6)
        trajs = collect_trajectories(
            env, theta, 5_000, 2 * t_eff, np.random.default_rng(19)
        )
        adv = advantage_estimates(trajs, v)[:, :t_eff]
        s, a, _, _ = stack_batch(trajs)
        s, a = s[:, :t_eff], a[:, :t_eff]
        for state in range(3):
            for action in range(2):
                # pooled ratio estimate over all visits; visits within one
                # trajectory are correlated, so the standard error is
                # cluster-robust (delta method over trajectory sums)
                mask = (s == state) & (a == action)
                counts = mask.sum(axis=1).astype(float)
                sums = (adv * mask).sum(axis=1)
                estimate = sums.sum() / counts.sum()
                resid = sums - estimate * counts
                se = np.sqrt((resid**2).sum()) / counts.sum()
                err = abs(estimate - adv_exact[state, action])
                assert err <= 3 * se + 1e-4


class TestPepgGradient:
    def test_zero_provider_reduces_to_reinforce_with_baseline(self):
        env = _static_env(20)
        theta = np.random.default_rng(21).normal(size=(3, 2))
        trajs = collect_trajectories(env, theta, 50, 20, np.random.default_rng(22))
        v_hat = fit_value(trajs, n_states=3)
        adv = advantage_estimates(trajs, v_hat)
        est = pepg_gradient(theta, trajs, adv, env_grads=None, lam=0.0)
        assert est.term_norms["transition_score"] == 0.0
        assert est.term_norms["direct_reward"] == 0.0

        # classical REINFORCE-with-baseline computed independently
        policy = softmax_policy(theta)
        expected = np.zeros((3, 2))
        for traj in trajs:
            g = rewards_to_go(traj.rewards[None, :], traj.gamma)[0]
            w = 1.0
            for t, (s, a, _, _) in enumerate(traj.steps()):
                coef = w * (g[t] - v_hat[s])
                row = -policy[s].copy()
                row[a] += 1.0
                expected[s] += coef * row
                w *= traj.gamma
        expected /= len(trajs)
        np.testing.assert_allclose(est.grad, expected, atol=1e-12)

    def test_soft_gradient_adds_score_correction(self):
        env = _static_env(23)
        theta = np.random.default_rng(24).normal(size=(3, 2))
        trajs = collect_trajectories(env, theta, 20, 10, np.random.default_rng(25))
        lam = 2.0
        policy = softmax_policy(theta)
        s, a, _, r = stack_batch(trajs)
        soft_r = r - lam * np.log(policy[s, a])
        v_hat = fit_value(trajs, n_states=3, rewards=soft_r)
        adv = advantage_estimates(trajs, v_hat, rewards=soft_r)
        est = pepg_gradient(theta, trajs, adv, env_grads=None, lam=lam)
        assert est.term_norms["direct_reward"] > 0.0  # -lam * score present

    def test_discount_weight_flag(self):
        env = _static_env(26)
        theta = np.zeros((3, 2))
        trajs = collect_trajectories(env, theta, 10, 5, np.random.default_rng(27))
        adv = advantage_estimates(trajs, np.zeros(3))
        with_w = pepg_gradient(theta, trajs, adv, None, use_discount_weights=True)
        without = pepg_gradient(theta, trajs, adv, None, use_discount_weights=False)
        assert not np.allclose(with_w.grad, without.grad)

    def test_baseline_shift_leaves_policy_term_unbiased(self):
        env = _static_env(28)
        theta = np.random.default_rng(29).normal(size=(3, 2)) * 0.3
        trajs = collect_trajectories(env, theta, 30_000, 25, np.random.default_rng(30))
        v = solve_value(env.tables, softmax_policy(theta), env.gamma)
        adv = advantage_estimates(trajs, v)
        adv_shifted = advantage_estimates(trajs, v + 5.0)
        g0, _, _ = gradient_samples(theta, trajs, adv, None)
        g1, _, _ = gradient_samples(theta, trajs, adv_shifted, None)
        diff = (g1 - g0).reshape(len(trajs), -1)
        sem = diff.std(axis=0, ddof=1) / np.sqrt(len(trajs))
        z = np.abs(diff.mean(axis=0)) / np.maximum(sem, 1e-12)
        assert z.max() <= 3.0


class TestExactGradient:
    def test_stationary_point_of_static_single_state(self):
        tables = TabularTables(np.ones((1, 2, 1)), np.full((1, 2), 0.5), r_max=1.0)
        env = StaticEnv(tables, gamma=0.9)
        grad = exact_gradient_fd(env, np.zeros((1, 2)))
        np.testing.assert_allclose(grad, 0.0, atol=1e-8)

    def test_matches_classical_softmax_pg_closed_form(self):
        tables = TabularTables(
            np.ones((1, 2, 1)), np.array([[0.8, 0.2]]), r_max=1.0
        )
        env = StaticEnv(tables, gamma=0.9, rho=np.array([1.0]))
        theta = np.array([[0.4, -0.3]])
        grad = exact_gradient_fd(env, theta, step=1e-5)
        policy = softmax_policy(theta)
        v = solve_value(tables, policy, env.gamma)
        _, adv = q_and_advantage(tables, v, policy, env.gamma)
        d = occupancy(tables, policy, env.gamma, env.rho).d
        closed = d * adv / (1 - env.gamma)
        np.testing.assert_allclose(grad, closed, atol=1e-8)

    def test_agrees_with_theorem_expectation_form(self):
        for seed in range(5):
            env = make_expfam(3, 2, gamma=0.9, seed=seed)
            theta = np.random.default_rng(100 + seed).normal(size=(3, 2))
            fd = exact_gradient_fd(env, theta, step=1e-5)
            form = theorem_gradient(env, theta)
            denom = np.maximum.reduce(
                [np.abs(fd), np.abs(form), np.full_like(fd, 1e-6)]
            )
            assert (np.abs(fd - form) / denom).max() <= 1e-5

    def test_soft_value_gradient_against_theorem_form(self):
        env = make_expfam(3, 2, gamma=0.9, seed=1)
        theta = np.random.default_rng(7).normal(size=(3, 2))
        fd = exact_gradient_fd(env, theta, lam=2.0, step=1e-5)
        form = theorem_gradient(env, theta, lam=2.0)
        denom = np.maximum.reduce([np.abs(fd), np.abs(form), np.full_like(fd, 1e-6)])
        assert (np.abs(fd - form) / denom).max() <= 1e-5


class TestEnvGradFd:
    def test_static_env_gives_zero_tables(self):
        env = _static_env(31)
        grads = env_grad_fd(env, np.zeros((3, 2)), mode="full")
        assert not grads.dlogp.any() and not grads.dr.any()

    def test_matches_analytic_on_expfam(self):
        env = make_expfam(3, 2, gamma=0.9, seed=2)
        theta = np.random.default_rng(32).normal(size=(3, 2))
        dlogp, dr = env.analytic_grads(theta)
        num = env_grad_fd(env, theta, mode="full", step=1e-5)
        assert np.abs(dlogp - num.dlogp).max() / max(
            1.0, np.abs(num.dlogp).max()
        ) <= 1e-4
        assert np.abs(dr - num.dr).max() <= 1e-4

    def test_directional_full_rank_equals_full_mode(self):
        env = make_expfam(3, 2, gamma=0.9, seed=3)
        theta = np.random.default_rng(33).normal(size=(3, 2))
        full = env_grad_fd(env, theta, mode="full", step=1e-5)
        directional = env_grad_fd(
            env, theta, mode="directional", step=1e-5, k=6,
            rng=np.random.default_rng(34),
        )
        assert np.abs(full.dlogp - directional.dlogp).max() <= 1e-8
        assert np.abs(full.dr - directional.dr).max() <= 1e-8


class TestEstimatorConsistency:
    def test_small_sample_z_scores(self):
        # the acceptance suite repeats this at 200k trajectories
        env = make_expfam(2, 2, gamma=0.9, seed=0)
        theta = np.random.default_rng(3).normal(size=(2, 2)) * 0.5
        exact = exact_gradient_fd(env, theta, step=1e-5)
        horizon = default_horizon(env.gamma, env.r_max, eps_tail=1e-6)
        rng = np.random.default_rng(42)
        tables = env.induce(theta)
        v = solve_value(tables, softmax_policy(theta), env.gamma)
        grads = EnvGrads(*env.analytic_grads(theta))
        trajs = collect_trajectories(env, theta, 30_000, horizon, rng, tables=tables)
        adv = advantage_estimates(trajs, v)
        gp, gt, gr = gradient_samples(theta, trajs, adv, grads)
        samples = (gp + gt + gr).reshape(len(trajs), -1)
        sem = samples.std(axis=0, ddof=1) / np.sqrt(len(trajs))
        z = np.abs(samples.mean(axis=0) - exact.ravel()) / sem
        assert z.max() <= 3.0


def test_exact_value_helper_matches_solver():
    env = _static_env(35)
    theta = np.random.default_rng(36).normal(size=(3, 2))
    v = solve_value(env.tables, softmax_policy(theta), env.gamma)
    assert exact_performative_value(env, theta) == pytest.approx(env.rho @ v)

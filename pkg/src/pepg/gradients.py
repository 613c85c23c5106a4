"""Trajectory-based performative policy gradient and its exact oracles.

The estimator averages, over rollouts collected in the environment the
deployed parameters induce, discount-weighted sums of three terms: the
sampled advantage times the policy score, the sampled advantage times the
transition score of the induced dynamics, and the direct derivative of the
induced reward.  Environment derivative tables come from a provider
(analytic, full finite differences, directional finite differences with
least-squares reconstruction, or zero for the performativity-oblivious
ablation).

A note on the exact expectation form used for verification: the transition
score has zero conditional mean given (s_t, a_t), so weighting it by the
exact advantage integrates to zero.  What the sampled advantage (reward-to-go
minus a state baseline) actually correlates with is the one-step TD residual,
whose conditional expectation weights the transition score by
gamma * V(s_{t+1}).  theorem_gradient below evaluates that form; it is the
quantity the trajectory estimator is unbiased for, and it matches central
finite differences of the exact performative value.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .mdp import occupancy, q_and_advantage, soft_tables, solve_value
from .policy import sample_actions, score_rows, softmax_policy


@dataclass
class Trajectory:
    """One rollout: arrays of s_t, a_t, s_{t+1}, r_t for t = 0..T-1."""

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    gamma: float

    @property
    def horizon(self):
        return len(self.states)

    def steps(self):
        return list(zip(self.states, self.actions, self.next_states, self.rewards))


@dataclass
class GradientEstimate:
    grad: np.ndarray
    term_norms: dict = field(default_factory=dict)


@dataclass
class EnvGrads:
    """Derivative tables of the induced environment at a fixed theta.

    dlogp[s, a, s', i, j] = d log P(s'|s, a) / d theta[i, j]
    dr[s, a, i, j]        = d r(s, a) / d theta[i, j]
    """

    dlogp: np.ndarray
    dr: np.ndarray
    flagged_zeros: int = 0


def default_horizon(gamma, r_max, eps_tail=1e-4):
    """Smallest T with gamma^T * r_max / (1 - gamma) <= eps_tail."""
    if gamma == 0.0:
        return 1
    t = math.log(eps_tail * (1.0 - gamma) / r_max) / math.log(gamma)
    return max(1, math.ceil(t))


def collect_trajectories(env, theta, n_trajectories, horizon, rng, tables=None):
    """n independent rollouts in the environment induced (once) by theta."""
    if horizon < 1 or n_trajectories < 1:
        raise ValueError("horizon and n_trajectories must be >= 1")
    if tables is None:
        tables = env.induce(theta)
    policy = softmax_policy(theta)
    n = n_trajectories
    states = _sample_categorical(np.tile(env.rho, (n, 1)), rng)
    s_mat = np.empty((n, horizon), dtype=int)
    a_mat = np.empty((n, horizon), dtype=int)
    s1_mat = np.empty((n, horizon), dtype=int)
    r_mat = np.empty((n, horizon))
    for t in range(horizon):
        actions = sample_actions(policy, states, rng)
        nxt = _sample_categorical(tables.transition[states, actions], rng)
        s_mat[:, t] = states
        a_mat[:, t] = actions
        s1_mat[:, t] = nxt
        r_mat[:, t] = tables.reward[states, actions]
        states = nxt
    return [
        Trajectory(s_mat[i], a_mat[i], s1_mat[i], r_mat[i], env.gamma)
        for i in range(n)
    ]


def _sample_categorical(rows, rng):
    cum = np.cumsum(rows, axis=1)
    u = rng.random(len(rows))
    idx = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(idx, rows.shape[1] - 1)


def stack_batch(trajectories):
    s = np.stack([t.states for t in trajectories])
    a = np.stack([t.actions for t in trajectories])
    s1 = np.stack([t.next_states for t in trajectories])
    r = np.stack([t.rewards for t in trajectories])
    return s, a, s1, r


def rewards_to_go(rewards, gamma):
    """G[:, t] = sum_{u >= t} gamma^(u-t) r[:, u], computed backwards."""
    g = np.zeros_like(rewards)
    acc = np.zeros(rewards.shape[0])
    for t in range(rewards.shape[1] - 1, -1, -1):
        acc = rewards[:, t] + gamma * acc
        g[:, t] = acc
    return g


def fit_value(trajectories, n_states, previous=None, rewards=None):
    """Tabular value fit: per-state mean of discounted reward-to-go.

    This is the exact minimizer of the squared regression objective over
    tabular value functions.  States never visited in the batch keep the
    previous estimate (zeros on a cold start).  `rewards` overrides the
    stored rewards, which is how the soft variant fits on shifted rewards.
    """
    if not trajectories:
        raise ValueError("empty batch")
    gamma = trajectories[0].gamma
    s, _, _, r = stack_batch(trajectories)
    if rewards is not None:
        r = rewards
    g = rewards_to_go(r, gamma)
    sums = np.zeros(n_states)
    counts = np.zeros(n_states)
    np.add.at(sums, s.ravel(), g.ravel())
    np.add.at(counts, s.ravel(), 1.0)
    v = np.zeros(n_states) if previous is None else np.asarray(previous, float).copy()
    visited = counts > 0
    v[visited] = sums[visited] / counts[visited]
    return v


def advantage_estimates(trajectories, v_hat, rewards=None):
    """A_hat[i, t] = reward-to-go minus the state baseline v_hat(s_t)."""
    gamma = trajectories[0].gamma
    s, _, _, r = stack_batch(trajectories)
    if rewards is not None:
        r = rewards
    return rewards_to_go(r, gamma) - np.asarray(v_hat)[s]


def gradient_samples(theta, trajectories, advantages, env_grads, lam=0.0,
                     use_discount_weights=True):
    """Per-trajectory gradient contributions, split into the three terms.

    Returns (g_policy, g_transition, g_reward), each of shape [I, S, A].
    The PePG estimate is the mean over trajectories of their sum.
    """
    theta = np.asarray(theta, dtype=float)
    n_states, n_actions = theta.shape
    policy = softmax_policy(theta)
    score_tab = score_rows(policy)
    s, a, s1, _ = stack_batch(trajectories)
    adv = np.asarray(advantages, dtype=float)
    gamma = trajectories[0].gamma
    n, horizon = s.shape

    g_pi = np.zeros((n, n_states, n_actions))
    g_tr = np.zeros((n, n_states, n_actions))
    g_r = np.zeros((n, n_states, n_actions))
    rows_idx = np.arange(n)
    w = 1.0
    for t in range(horizon):
        st, at, s1t = s[:, t], a[:, t], s1[:, t]
        coef = w * adv[:, t]
        scores = score_tab[st, at]                       # [I, A]
        np.add.at(g_pi, (rows_idx, st), coef[:, None] * scores)
        if env_grads is not None:
            g_tr += coef[:, None, None] * env_grads.dlogp[st, at, s1t]
            g_r += w * env_grads.dr[st, at]
        if lam > 0.0:
            np.add.at(g_r, (rows_idx, st), -lam * w * scores)
        if use_discount_weights:
            w *= gamma
    return g_pi, g_tr, g_r


def pepg_gradient(theta, trajectories, advantages, env_grads, lam=0.0,
                  use_discount_weights=True):
    """Average the per-trajectory contributions into one gradient estimate."""
    g_pi, g_tr, g_r = gradient_samples(
        theta, trajectories, advantages, env_grads, lam, use_discount_weights
    )
    parts = {
        "policy_score": g_pi.mean(axis=0),
        "transition_score": g_tr.mean(axis=0),
        "direct_reward": g_r.mean(axis=0),
    }
    grad = parts["policy_score"] + parts["transition_score"] + parts["direct_reward"]
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("gradient estimate is not finite")
    norms = {k: float(np.linalg.norm(v)) for k, v in parts.items()}
    return GradientEstimate(grad=grad, term_norms=norms)


# -- exact oracles ---------------------------------------------------------


def exact_performative_value(env, theta, lam=0.0, rho=None, tables=None):
    """rho-weighted exact (soft) performative value of theta."""
    theta = env.check_theta(theta)
    policy = softmax_policy(theta)
    if tables is None:
        tables = env.induce(theta)
    if lam > 0.0:
        tables = soft_tables(tables, policy, lam)
    v = solve_value(tables, policy, env.gamma)
    rho = env.rho if rho is None else rho
    return float(rho @ v)


def exact_gradient_fd(env, theta, lam=0.0, step=1e-5, rho=None):
    """Central finite differences of the exact performative value.

    Ground truth for every estimator: the value at each probe is itself
    exact (dense linear solve on the induced tables), so the only error is
    the O(step^2) truncation of the central difference.  The probe solves
    are batched into a single stacked linear system.
    """
    theta = env.check_theta(theta)
    n_states, n_actions = theta.shape
    gamma = env.gamma
    rho = env.rho if rho is None else rho
    _, warm = env.induce_warm(theta)

    chains, drives = [], []
    for s in range(n_states):
        for a in range(n_actions):
            for sign in (1.0, -1.0):
                th = theta.copy()
                th[s, a] += sign * step
                tables, _ = env.induce_warm(th, warm=warm)
                policy = softmax_policy(th)
                p_pi = np.einsum("sa,sat->st", policy, tables.transition)
                r_pi = np.einsum("sa,sa->s", policy, tables.reward)
                if lam > 0.0:
                    r_pi -= lam * np.einsum(
                        "sa,sa->s", policy, np.log(policy)
                    )
                chains.append(p_pi)
                drives.append(r_pi)
    chains = np.stack(chains)
    drives = np.stack(drives)
    eye = np.eye(n_states)
    if gamma == 0.0:
        values = drives @ rho
    else:
        v = np.linalg.solve(eye[None, :, :] - gamma * chains, drives[:, :, None])
        values = v[:, :, 0] @ rho
    diffs = (values[0::2] - values[1::2]) / (2.0 * step)
    return diffs.reshape(n_states, n_actions)


def theorem_gradient(env, theta, lam=0.0, rho=None, env_grads=None):
    """Exact expectation form of the performative policy gradient.

    Evaluated with exact occupancy measures, exact (soft) advantages and the
    environment's derivative tables:

        sum_{s,a} m(s,a) [ A(s,a) score(s,a) + dr(s,a) - lam * score(s,a) ]
      + gamma * sum_{s,a} m(s,a) sum_{s'} P(s'|s,a) V(s') dlogp(s'|s,a)

    with m = d / (1 - gamma) the unnormalized discounted visitation.
    """
    theta = env.check_theta(theta)
    policy = softmax_policy(theta)
    rho = env.rho if rho is None else rho
    tables = env.induce(theta)
    work = soft_tables(tables, policy, lam) if lam > 0.0 else tables
    gamma = env.gamma
    v = solve_value(work, policy, gamma)
    _, adv = q_and_advantage(work, v, policy, gamma)
    m = occupancy(tables, policy, gamma, rho).d / (1.0 - gamma)

    if env_grads is None:
        env_grads = env.analytic_grads(theta)
        if isinstance(env_grads, tuple):
            env_grads = EnvGrads(*env_grads)
    score_tab = score_rows(policy)

    n_states, n_actions = theta.shape
    grad = np.zeros((n_states, n_actions))
    coef = m * adv
    if lam > 0.0:
        coef = coef - lam * m
    for s in range(n_states):
        grad[s] += coef[s] @ score_tab[s]
    grad += np.einsum("sa,saij->ij", m, env_grads.dr)
    # transition score weighted by gamma * V(s'); a baseline E_P[V] would be
    # legal (the score has zero mean under P) but is unnecessary here.
    weights = m[:, :, None] * tables.transition * v[None, None, :]
    grad += gamma * np.einsum("sab,sabij->ij", weights, env_grads.dlogp)
    return grad


# -- environment gradient providers ----------------------------------------


def analytic_provider(env):
    def provider(theta, warm=None):
        dlogp, dr = env.analytic_grads(theta)
        return EnvGrads(dlogp=dlogp, dr=dr)

    return provider


def zero_provider(env):
    def provider(theta, warm=None):
        return None

    return provider


def _log_probs(tables, support):
    logp = np.zeros_like(tables.transition)
    logp[support] = np.log(tables.transition[support])
    return logp


def env_grad_fd(env, theta, mode="full", step=1e-5, k=64, rng=None, warm=None):
    """Numeric derivative tables of the induced environment.

    full: central differences per theta coordinate.
    directional: k random directions, least-squares reconstruction; with
    k = dim and orthonormal directions this reproduces the full mode.
    Entries where the induced probability is exactly zero are never sampled
    by rollouts; their log-derivative is set to zero and counted as flagged.
    """
    theta = env.check_theta(theta)
    n_states, n_actions = theta.shape
    dim = n_states * n_actions
    base, warm_state = env.induce_warm(theta, warm=warm)
    support = base.transition > 0.0
    flagged = int(support.size - support.sum())

    if mode == "full":
        directions = np.eye(dim)
    elif mode == "directional":
        if rng is None:
            raise ValueError("directional mode needs an rng")
        directions = rng.standard_normal((k, dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    d_logp = np.empty((len(directions),) + base.transition.shape)
    d_r = np.empty((len(directions),) + base.reward.shape)
    for j, u in enumerate(directions):
        du = (step * u).reshape(n_states, n_actions)
        plus, _ = env.induce_warm(theta + du, warm=warm_state)
        minus, _ = env.induce_warm(theta - du, warm=warm_state)
        d_logp[j] = (_log_probs(plus, support) - _log_probs(minus, support)) / (2 * step)
        d_r[j] = (plus.reward - minus.reward) / (2 * step)

    if mode == "full":
        dlogp = np.moveaxis(d_logp, 0, -1).reshape(
            base.transition.shape + (n_states, n_actions)
        )
        dr = np.moveaxis(d_r, 0, -1).reshape(base.reward.shape + (n_states, n_actions))
    else:
        pinv = np.linalg.pinv(directions)                    # [dim, k]
        dlogp = np.tensordot(pinv, d_logp, axes=(1, 0))      # [dim, S, A, S]
        dlogp = np.moveaxis(dlogp, 0, -1).reshape(
            base.transition.shape + (n_states, n_actions)
        )
        dr = np.tensordot(pinv, d_r, axes=(1, 0))
        dr = np.moveaxis(dr, 0, -1).reshape(base.reward.shape + (n_states, n_actions))

    dlogp[~support] = 0.0
    return EnvGrads(dlogp=dlogp, dr=dr, flagged_zeros=flagged)


def fd_provider(env, step=1e-5):
    def provider(theta, warm=None):
        return env_grad_fd(env, theta, mode="full", step=step, warm=warm)

    return provider


def directional_provider(env, k=64, step=1e-5, seed=0):
    rng = np.random.default_rng(seed)

    def provider(theta, warm=None):
        return env_grad_fd(env, theta, mode="directional", step=step, k=k, rng=rng,
                           warm=warm)

    return provider


def make_provider(env, mode, **kwargs):
    if mode == "analytic":
        return analytic_provider(env)
    if mode == "zero":
        return zero_provider(env)
    if mode == "fd":
        return fd_provider(env, **kwargs)
    if mode == "directional":
        return directional_provider(env, **kwargs)
    raise ValueError(f"unknown provider mode {mode!r}")

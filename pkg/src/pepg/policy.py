"""Softmax policy parametrization, sampling, entropy, and the analytic score."""

import numpy as np


def softmax_policy(theta):
    """Row-wise softmax of theta[s, a], with per-row max subtraction."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 2:
        raise ValueError("theta must be a [S, A] matrix")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    z = theta - theta.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_policy_score(theta, s, a):
    """Row s of d log pi(a|s) / d theta: entries 1[a'=a] - pi(a'|s).

    The gradient is zero off row s, so only that row is returned.  The
    returned entries sum to zero.
    """
    pi = softmax_policy(theta)
    n_states, n_actions = pi.shape
    if not (0 <= s < n_states and 0 <= a < n_actions):
        raise IndexError(f"state-action ({s}, {a}) out of range")
    row = -pi[s].copy()
    row[a] += 1.0
    return row


def score_rows(policy):
    """score[s, a, :] = e_a - pi(.|s) for every (s, a); used by estimators."""
    policy = np.asarray(policy, dtype=float)
    n_states, n_actions = policy.shape
    rows = np.broadcast_to(np.eye(n_actions), (n_states, n_actions, n_actions)).copy()
    rows -= policy[:, None, :]
    return rows


def sample_action(policy, s, rng):
    """Draw an action from pi(.|s); deterministic given the rng state."""
    row = np.asarray(policy)[s]
    u = rng.random()
    return int(np.searchsorted(np.cumsum(row), u, side="right").clip(0, len(row) - 1))


def sample_actions(policy, states, rng):
    """Vectorized action draws for a batch of states (one uniform per row)."""
    rows = np.asarray(policy)[states]
    cum = np.cumsum(rows, axis=1)
    u = rng.random(len(states))
    idx = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(idx, rows.shape[1] - 1)


def policy_entropy(policy, s):
    """Shannon entropy of pi(.|s); lies in [0, log |A|]."""
    row = np.asarray(policy, dtype=float)[s]
    if np.any(row <= 0.0):
        raise ValueError("entropy needs a strictly positive policy row")
    return float(-(row * np.log(row)).sum())

"""Exact tabular MDP mathematics.

Values, Q-functions, advantages and discounted occupancy measures are all
computed by direct dense linear solves; with a valid stochastic transition
tensor and a discount in [0, 1) the systems are always well conditioned.
Entropy-regularized ("soft") quantities reuse the same solvers on tables
whose reward has been shifted by -lam * log pi.
"""

from dataclasses import dataclass

import numpy as np

# Probabilities below this are treated as exact zeros when taking logs.
_POSITIVE_FLOOR = 1e-300

ROW_SUM_TOL = 1e-12
OCCUPANCY_TOL = 1e-10


@dataclass(frozen=True)
class TabularTables:
    """Concrete MDP dynamics: transition tensor P[s, a, s'] and reward r[s, a]."""

    transition: np.ndarray
    reward: np.ndarray
    r_max: float

    def __post_init__(self):
        p = np.asarray(self.transition, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transition must have shape [S, A, S], got {p.shape}")
        if r.shape != p.shape[:2]:
            raise ValueError(
                f"reward shape {r.shape} does not match transition {p.shape[:2]}"
            )
        if np.any(p < 0.0):
            raise ValueError("transition entries must be nonnegative")
        row_err = np.abs(p.sum(axis=2) - 1.0).max()
        if row_err > ROW_SUM_TOL:
            raise ValueError(f"transition rows must sum to 1 (max error {row_err:.3e})")
        if np.any(np.abs(r) > self.r_max + 1e-12):
            raise ValueError(f"rewards exceed the bound {self.r_max}")
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]


@dataclass(frozen=True)
class OccupancyMeasure:
    """Discounted state-action visitation distribution, normalized by (1 - gamma)."""

    d: np.ndarray
    gamma: float
    rho: np.ndarray

    @property
    def state_marginal(self):
        return self.d.sum(axis=1)


def validate_policy(policy, n_states=None, n_actions=None):
    """Check that rows of pi[s, a] are probability vectors; return the array."""
    pi = np.asarray(policy, dtype=float)
    if pi.ndim != 2:
        raise ValueError("policy must be a [S, A] table")
    if n_states is not None and pi.shape != (n_states, n_actions):
        raise ValueError(f"policy shape {pi.shape} != ({n_states}, {n_actions})")
    if np.any(pi < 0.0) or np.abs(pi.sum(axis=1) - 1.0).max() > 1e-10:
        raise ValueError("policy rows must be probability vectors")
    return pi


def validate_distribution(rho, n):
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (n,) or np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-10:
        raise ValueError("rho must be a probability vector over states")
    return rho


def _policy_matrices(tables, policy):
    """State-to-state chain P_pi(s, s') and state reward r_pi(s) under pi."""
    p_pi = np.einsum("sa,sat->st", policy, tables.transition)
    r_pi = np.einsum("sa,sa->s", policy, tables.reward)
    return p_pi, r_pi


def solve_value(tables, policy, gamma):
    """State values of `policy` in `tables`, from the Bellman linear system.

    gamma = 0 is accepted and short-circuits to the myopic value.
    """
    policy = validate_policy(policy, tables.n_states, tables.n_actions)
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    p_pi, r_pi = _policy_matrices(tables, policy)
    if gamma == 0.0:
        return r_pi
    n = tables.n_states
    return np.linalg.solve(np.eye(n) - gamma * p_pi, r_pi)


def q_and_advantage(tables, values, policy, gamma):
    """Q(s,a) = r + gamma * P V and A = Q - V; A is zero-mean under pi per state."""
    values = np.asarray(values, dtype=float)
    if values.shape != (tables.n_states,):
        raise ValueError("values shape does not match the state space")
    policy = validate_policy(policy, tables.n_states, tables.n_actions)
    q = tables.reward + gamma * tables.transition @ values
    adv = q - values[:, None]
    return q, adv


def occupancy(tables, policy, gamma, rho):
    """Discounted state-action occupancy of `policy` in `tables` from rho.

    Solves the flow system (I - gamma * P_pi^T) dbar = (1 - gamma) rho and
    sets d(s, a) = dbar(s) pi(a|s).  The result is a probability mass
    function over state-action pairs.
    """
    policy = validate_policy(policy, tables.n_states, tables.n_actions)
    rho = validate_distribution(rho, tables.n_states)
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if gamma == 0.0:
        dbar = rho
    else:
        p_pi, _ = _policy_matrices(tables, policy)
        n = tables.n_states
        dbar = np.linalg.solve(np.eye(n) - gamma * p_pi.T, (1.0 - gamma) * rho)
    d = dbar[:, None] * policy
    return OccupancyMeasure(d=d, gamma=gamma, rho=rho)


def soft_tables(tables, policy, lam):
    """Tables with reward shifted to r - lam * log pi; transitions unchanged."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    policy = validate_policy(policy, tables.n_states, tables.n_actions)
    if lam == 0.0:
        return tables
    if np.any(policy < _POSITIVE_FLOOR):
        raise ValueError("soft reward needs a strictly positive policy")
    log_pi = np.log(policy)
    soft_r = tables.reward - lam * log_pi
    bound = tables.r_max + lam * np.abs(log_pi).max()
    return TabularTables(transition=tables.transition, reward=soft_r, r_max=bound)


def coverage_ratio(d_num, d_den):
    """max over (s, a) of d_num / d_den; +inf when d_den vanishes on d_num's support.

    Always >= 1 for two valid occupancy measures.
    """
    num = np.asarray(d_num.d if isinstance(d_num, OccupancyMeasure) else d_num, float)
    den = np.asarray(d_den.d if isinstance(d_den, OccupancyMeasure) else d_den, float)
    if num.shape != den.shape:
        raise ValueError("occupancy measures must share a shape")
    support = num > 0.0
    if np.any(den[support] <= 0.0):
        return float("inf")
    if not support.any():
        return float("inf")
    return float((num[support] / den[support]).max())

"""Synthetic performative MDP with exponential-family transitions.

For each action a, the transition row is a softmax over destination states
of the logits theta[s', a] * psi(s'), so the next-state law depends on the
deployed parameters but not on the current state.  Rewards are linear in
theta, clipped to [-r_max, r_max].  Both maps have closed-form derivatives,
which makes every identity in the verification suite exactly evaluable.
"""

from dataclasses import dataclass, field

import numpy as np

from ..mdp import TabularTables, validate_distribution
from .base import PerformativeEnv


@dataclass
class ExpFamilyConfig:
    psi: np.ndarray          # nonnegative feature per state, <= psi_max
    xi: float                # reward slope, in [0, r_max]
    r_max: float = 1.0
    gamma: float = 0.9
    rho: np.ndarray | None = None

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=float)
        if np.any(self.psi < 0):
            raise ValueError("psi must be nonnegative")
        if not 0.0 <= self.xi <= self.r_max:
            raise ValueError("xi must lie in [0, r_max]")


def default_psi(n_states, gamma):
    """psi(s) = psi_max * (s + 1) / S with psi_max = (1 - gamma) / gamma."""
    psi_max = (1.0 - gamma) / gamma
    return psi_max * (np.arange(1, n_states + 1) / n_states)


class ExpFamilyEnv(PerformativeEnv):
    has_analytic_grads = True

    def __init__(self, config, n_actions):
        self.config = config
        self.psi = config.psi
        self.n_states = len(config.psi)
        self.n_actions = int(n_actions)
        self.gamma = config.gamma
        self.r_max = config.r_max
        self.xi = config.xi
        # stated feature cap; the realized max may be smaller
        self.psi_cap = max((1.0 - config.gamma) / config.gamma, float(self.psi.max()))
        rho = config.rho
        if rho is None:
            rho = np.full(self.n_states, 1.0 / self.n_states)
        self.rho = validate_distribution(rho, self.n_states)

    def _dest_probs(self, theta):
        """probs[a, s'] = softmax over s' of theta[s', a] * psi(s')."""
        logits = theta.T * self.psi[None, :]          # [A, S']
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def induce(self, theta):
        theta = self.check_theta(theta)
        probs = self._dest_probs(theta)               # [A, S']
        p = np.broadcast_to(probs[None, :, :], (self.n_states,) + probs.shape).copy()
        r = np.clip(self.xi * theta, -self.r_max, self.r_max)
        return TabularTables(transition=p, reward=r, r_max=self.r_max)

    def analytic_grads(self, theta):
        """Exact derivative tables of the induced maps.

        dlogp[s, a, s'', s', a'] = 1[a'=a] * psi(s') * (1[s''=s'] - P(s'|s,a)),
        whose diagonal s' = s'' is psi(s'') * (1 - P(s''|s,a)).
        dr[s, a, s', a'] = xi * 1[s=s', a=a'], zero where the clip is active.
        """
        theta = self.check_theta(theta)
        n_s, n_a = self.n_states, self.n_actions
        probs = self._dest_probs(theta)               # [A, S']
        # per action: g[a, s'', s'] = psi(s') * (1[s''=s'] - P_a(s'))
        g = np.broadcast_to(
            (-probs * self.psi[None, :])[:, None, :], (n_a, n_s, n_s)
        ).copy()
        g += np.eye(n_s)[None, :, :] * self.psi[None, None, :]
        dlogp = np.zeros((n_s, n_a, n_s, n_s, n_a))
        for a in range(n_a):
            dlogp[:, a, :, :, a] = g[a][None, :, :]
        dr = np.zeros((n_s, n_a, n_s, n_a))
        unclipped = np.abs(self.xi * theta) < self.r_max
        idx_s, idx_a = np.nonzero(unclipped)
        dr[idx_s, idx_a, idx_s, idx_a] = self.xi
        return dlogp, dr


def make_expfam(n_states, n_actions, gamma, seed=None, r_max=1.0, psi=None, xi=None,
                rho=None):
    """Convenience constructor; psi and xi are sampled within bounds when omitted."""
    rng = np.random.default_rng(seed)
    psi_max = (1.0 - gamma) / gamma
    if psi is None:
        psi = rng.uniform(0.0, psi_max, size=n_states)
    if xi is None:
        xi = rng.uniform(0.1 * r_max, r_max)
    cfg = ExpFamilyConfig(psi=np.asarray(psi, float), xi=float(xi), r_max=r_max,
                          gamma=gamma, rho=rho)
    return ExpFamilyEnv(cfg, n_actions)

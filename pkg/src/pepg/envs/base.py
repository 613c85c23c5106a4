"""Performative environment interface: maps from policy parameters to tables."""

import numpy as np

from ..mdp import TabularTables, validate_distribution


class PerformativeEnv:
    """A family of tabular MDPs indexed by the deployed policy parameters.

    Subclasses set n_states, n_actions, gamma, r_max and rho, and implement
    induce(theta).  Environments with closed-form derivative tables override
    analytic_grads; the numeric providers in pepg.gradients cover the rest.
    induce must be a pure function of (environment instance, theta): any
    randomness (e.g. perturbed beliefs) is drawn once at construction.
    """

    n_states = None
    n_actions = None
    gamma = None
    r_max = None
    rho = None

    has_analytic_grads = False

    def induce(self, theta):
        """Tables of the MDP induced by deploying theta."""
        raise NotImplementedError

    def induce_warm(self, theta, warm=None):
        """induce() variant accepting a warm start from a nearby theta.

        Returns (tables, warm_state).  The default ignores the hint; the
        gridworld overrides it to reuse follower value iteration across
        finite-difference probes.
        """
        return self.induce(theta), None

    def analytic_grads(self, theta):
        """(dlogp, dr) derivative tables; see pepg.gradients.EnvGrads."""
        raise NotImplementedError(f"{type(self).__name__} has no analytic gradients")

    def check_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_states, self.n_actions):
            raise ValueError(
                f"theta shape {theta.shape} != ({self.n_states}, {self.n_actions})"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        return theta


class StaticEnv(PerformativeEnv):
    """No performativity: induce returns the same tables for every theta."""

    def __init__(self, tables, gamma, rho=None):
        self.tables = tables
        self.n_states = tables.n_states
        self.n_actions = tables.n_actions
        self.gamma = float(gamma)
        self.r_max = tables.r_max
        if rho is None:
            rho = np.full(self.n_states, 1.0 / self.n_states)
        self.rho = validate_distribution(rho, self.n_states)

    has_analytic_grads = True

    def induce(self, theta):
        self.check_theta(theta)
        return self.tables

    def analytic_grads(self, theta):
        s, a = self.n_states, self.n_actions
        return (np.zeros((s, a, s, s, a)), np.zeros((s, a, s, a)))


def random_tables(n_states, n_actions, rng, r_max=1.0):
    """A random valid instance: Dirichlet transition rows, uniform rewards."""
    p = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.uniform(-r_max, r_max, size=(n_states, n_actions))
    return TabularTables(transition=p, reward=r, r_max=r_max)

"""Loan-approval toy: a one-dimensional performative decision problem.

Applicants carry a credit score x ~ N(mu, sigma^2); the bank grants with
probability sigmoid(smoothness * (x - theta)) and earns payoff_win on
repayment, -payoff_loss on default, where repayment has probability
sigmoid(repay_slope * x - repay_offset).  The grant rate feeds back into the
population mean through a bounded update, so the deployed threshold shifts
the applicant pool it will face at equilibrium.
"""

from dataclasses import dataclass

import numpy as np


def sigmoid(z):
    out = np.empty_like(z := np.asarray(z, dtype=float))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LoanConfig:
    sigma: float = 1.0            # population std deviation
    repay_slope: float = 1.0      # sensitivity of repayment to the score
    repay_offset: float = 0.5     # calibration constant
    payoff_win: float = 1.0       # bank gain on repayment
    payoff_loss: float = 1.0      # bank loss on default
    smoothness: float = 2.0       # sigmoid sharpness of the threshold policy
    beta: float = 0.5             # performative strength in [0, 1]
    clamp: float = 1.0            # bound M on the mean-update map
    mu0: float = 0.0              # initial population mean
    quad_nodes: int = 96          # Gauss-Hermite nodes (>= 64)

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.quad_nodes < 64:
            raise ValueError("use at least 64 quadrature nodes")


class LoanEnv:
    def __init__(self, config):
        self.config = config
        t, w = np.polynomial.hermite.hermgauss(config.quad_nodes)
        self._nodes = t
        self._weights = w / np.sqrt(np.pi)

    def _gauss_expect(self, mu, fn):
        x = mu + np.sqrt(2.0) * self.config.sigma * self._nodes
        return float(self._weights @ fn(x))

    def grant_prob(self, theta, x):
        return sigmoid(self.config.smoothness * (np.asarray(x) - theta))

    def repay_prob(self, x):
        c = self.config
        return sigmoid(c.repay_slope * np.asarray(x) - c.repay_offset)

    def unit_payoff(self, x):
        """Expected payoff of granting to score x."""
        c = self.config
        p = self.repay_prob(x)
        return p * c.payoff_win - (1.0 - p) * c.payoff_loss

    def utility(self, theta, mu):
        """U(theta, mu) = E_x[grant_prob * unit_payoff], by quadrature."""
        return self._gauss_expect(mu, lambda x: self.grant_prob(theta, x) * self.unit_payoff(x))

    def grant_rate(self, theta, mu):
        return self._gauss_expect(mu, lambda x: self.grant_prob(theta, x))

    def mean_map(self, grant_rate):
        """f: grant rate -> [-M, M]; affine squash M * (2 g - 1)."""
        return self.config.clamp * (2.0 * grant_rate - 1.0)

    def equilibrium_mean(self, theta, mu0=None, tol=1e-10, max_iter=100_000):
        """Fixed point of mu <- (1 - beta) mu + beta f(g(theta, mu)).

        Returns (mu, converged).  Non-convergence is flagged, not raised.
        """
        c = self.config
        mu = c.mu0 if mu0 is None else mu0
        if c.beta == 0.0:
            return mu, True
        for _ in range(max_iter):
            nxt = (1.0 - c.beta) * mu + c.beta * self.mean_map(self.grant_rate(theta, mu))
            if abs(nxt - mu) <= tol:
                return nxt, True
            mu = nxt
        return mu, False

    def equilibrium_utility(self, theta):
        mu, converged = self.equilibrium_mean(theta)
        return self.utility(theta, mu), converged

    # -- one-dimensional optimizers ---------------------------------------

    def argmax_utility(self, objective, lo=-6.0, hi=6.0, grid=241, tol=1e-10):
        """Grid scan plus golden-section refinement of a scalar objective."""
        thetas = np.linspace(lo, hi, grid)
        vals = [objective(t) for t in thetas]
        i = int(np.argmax(vals))
        a = thetas[max(i - 1, 0)]
        b = thetas[min(i + 1, grid - 1)]
        inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
        c1 = b - inv_phi * (b - a)
        c2 = a + inv_phi * (b - a)
        f1, f2 = objective(c1), objective(c2)
        while b - a > tol:
            if f1 < f2:
                a, c1, f1 = c1, c2, f2
                c2 = a + inv_phi * (b - a)
                f2 = objective(c2)
            else:
                b, c2, f2 = c2, c1, f1
                c1 = b - inv_phi * (b - a)
                f1 = objective(c1)
        return 0.5 * (a + b)

    def erm_threshold(self):
        """argmax of U(., mu0): the performativity-oblivious optimum."""
        return self.argmax_utility(lambda t: self.utility(t, self.config.mu0))

    def performative_threshold(self):
        """argmax of U(., mu*(.)): the performatively optimal threshold."""
        return self.argmax_utility(lambda t: self.equilibrium_utility(t)[0])

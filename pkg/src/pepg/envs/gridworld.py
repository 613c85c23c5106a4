"""Principal-follower gridworld.

The principal picks one of four directional actions per cell; a follower
observes the committed policy and either accepts it (no-op) or overrides it
with its own direction, paying an intervention cost.  The follower best-
responds, via Boltzmann softmax over its optimal Q-function, on a privately
perturbed copy of the grid (each cell type kept with `match_prob`, else
resampled).  The induced MDP for the principal therefore shifts with the
deployed policy, which is the performativity in this benchmark.

Perturbed grids are drawn once, at construction, from the config seed: the
environment is then a deterministic map theta -> tables, which is what makes
retraining baselines able to reach exact fixed points.
"""

from dataclasses import dataclass, field

import numpy as np

from ..mdp import TabularTables, validate_distribution
from ..policy import softmax_policy
from .base import PerformativeEnv

BLANK, START, GOAL, HAZARD = 0, 1, 2, 3
_CHAR_TO_TYPE = {".": BLANK, "S": START, "G": GOAL, "H": HAZARD}
_N_CELL_TYPES = 4

# (drow, dcol) for up, down, left, right; the follower's action 0 is no-op.
_MOVES = np.array([(-1, 0), (1, 0), (0, -1), (0, 1)])

DEFAULT_LAYOUT = """\
S.......
..HH....
..HH....
........
....HH..
....HH..
.H......
.......G
"""

DEFAULT_COSTS = {BLANK: -0.01, START: -0.01, GOAL: -0.02, HAZARD: -0.5}


def parse_layout(text):
    """Grid of cell types from a newline-separated {., S, G, H} block."""
    rows = [line for line in text.strip().splitlines() if line]
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("layout rows must all have the same width")
    try:
        cells = np.array([[_CHAR_TO_TYPE[c] for c in row] for row in rows])
    except KeyError as err:
        raise ValueError(f"unknown layout character {err.args[0]!r}") from None
    if (cells == GOAL).sum() != 1:
        raise ValueError("layout must contain exactly one goal cell")
    if (cells == START).sum() == 0:
        raise ValueError("layout must contain at least one start cell")
    return cells


def load_layout(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_layout(fh.read())


@dataclass
class GridworldConfig:
    layout: str = DEFAULT_LAYOUT
    costs: dict = field(default_factory=lambda: dict(DEFAULT_COSTS))
    # the follower's cell costs on its belief grid; None shares `costs`
    follower_cell_costs: dict | None = None
    intervention_cost: float = -0.05
    n_followers: int = 1
    match_prob: float = 0.7
    boltzmann_beta: float = 5.0
    gamma: float = 0.9
    seed: int = 0
    vi_tol: float = 1e-8
    vi_max_iter: int = 100_000


class GridworldEnv(PerformativeEnv):
    def __init__(self, config):
        self.config = config
        cells = parse_layout(config.layout)
        self.cells = cells
        self.shape = cells.shape
        self.n_states = cells.size
        self.n_actions = 4
        self.gamma = config.gamma
        self.r_max = max(abs(c) for c in config.costs.values()) + abs(
            config.intervention_cost
        )

        flat = cells.ravel()
        start_states = np.flatnonzero(flat == START)
        rho = np.zeros(self.n_states)
        rho[start_states] = 1.0 / len(start_states)
        self.rho = validate_distribution(rho, self.n_states)

        self.move_to = self._movement_table()
        self.cost_true = self._cost_vector(flat)

        rng = np.random.default_rng(config.seed)
        self.follower_cells = [
            self._perturb(flat, rng) for _ in range(config.n_followers)
        ]
        cost_table = config.follower_cell_costs or config.costs
        self.follower_costs = [
            self._cost_vector(c, cost_table) for c in self.follower_cells
        ]

    def _movement_table(self):
        """move_to[s, a]: destination index for each direction, walls clamp."""
        n_rows, n_cols = self.shape
        rows, cols = np.divmod(np.arange(self.n_states), n_cols)
        dest = np.empty((self.n_states, 4), dtype=int)
        for a, (dr, dc) in enumerate(_MOVES):
            r2 = np.clip(rows + dr, 0, n_rows - 1)
            c2 = np.clip(cols + dc, 0, n_cols - 1)
            dest[:, a] = r2 * n_cols + c2
        return dest

    def _cost_vector(self, flat_cells, table=None):
        table = self.config.costs if table is None else table
        return np.array([table[t] for t in flat_cells])

    def _perturb(self, flat_cells, rng):
        keep = rng.random(self.n_states) < self.config.match_prob
        resampled = rng.integers(0, _N_CELL_TYPES, size=self.n_states)
        return np.where(keep, flat_cells, resampled)

    # -- follower best response -------------------------------------------

    def _follower_q(self, pi1, cost, warm_q=None):
        """Optimal Q of the follower's MDP on its belief costs, given pi1.

        Actions: 0 = no-op (the principal's sampled action executes),
        1..4 = override with that direction.  The follower pays the
        intervention cost whenever it overrides.
        """
        gamma = self.gamma
        c_int = self.config.intervention_cost
        cost_moved = cost[self.move_to]                       # [S, 4]
        r_noop = (pi1 * cost_moved).sum(axis=1)               # [S]
        r_dir = cost_moved + c_int                            # [S, 4]
        q = np.zeros((self.n_states, 5)) if warm_q is None else warm_q.copy()
        tol, cap = self.config.vi_tol, self.config.vi_max_iter
        for _ in range(cap):
            v = q.max(axis=1)
            v_moved = v[self.move_to]                         # [S, 4]
            new_q = np.empty_like(q)
            new_q[:, 0] = r_noop + gamma * (pi1 * v_moved).sum(axis=1)
            new_q[:, 1:] = r_dir + gamma * v_moved
            err = np.abs(new_q - q).max()
            q = new_q
            if err <= tol:
                return q
        raise RuntimeError(
            f"follower value iteration did not converge within {cap} iterations"
        )

    def follower_response(self, pi1, warm=None):
        """Boltzmann response pi2[s, a2] to the committed principal policy.

        Returns (pi2, q_list) where q_list holds each follower's Q table and
        can be passed back as `warm` for a nearby pi1.
        """
        q_list = []
        for j, cost in enumerate(self.follower_costs):
            warm_q = None if warm is None else warm[j]
            q_list.append(self._follower_q(pi1, cost, warm_q))
        q_bar = np.mean(q_list, axis=0)
        z = self.config.boltzmann_beta * q_bar
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        pi2 = e / e.sum(axis=1, keepdims=True)
        return pi2, q_list

    # -- induced principal MDP --------------------------------------------

    def _tables_from_response(self, pi2):
        n_s = self.n_states
        cost_moved = self.cost_true[self.move_to]             # [S, 4]
        p = np.zeros((n_s, 4, n_s))
        rows = np.arange(n_s)
        # follower overrides: independent of the principal's action
        override = np.zeros((n_s, n_s))
        np.add.at(override, (rows[:, None], self.move_to), pi2[:, 1:])
        r_override = (pi2[:, 1:] * cost_moved).sum(axis=1)    # [S]
        p_int = 1.0 - pi2[:, 0]
        for a1 in range(4):
            p[:, a1, :] = override
            p[rows, a1, self.move_to[:, a1]] += pi2[:, 0]
        r = pi2[:, [0]] * cost_moved + r_override[:, None]
        r = r + self.config.intervention_cost * p_int[:, None]
        return TabularTables(transition=p, reward=r, r_max=self.r_max)

    def induce(self, theta):
        tables, _ = self.induce_warm(theta)
        return tables

    def induce_warm(self, theta, warm=None):
        theta = self.check_theta(theta)
        pi1 = softmax_policy(theta)
        pi2, q_list = self.follower_response(pi1, warm=warm)
        return self._tables_from_response(pi2), q_list

    # -- helpers for initial policies -------------------------------------

    def shortest_path_policy(self, epsilon=0.5):
        """epsilon-greedy mix toward a BFS shortest-path-to-goal policy."""
        goal = int(np.flatnonzero(self.cells.ravel() == GOAL)[0])
        dist = np.full(self.n_states, np.inf)
        dist[goal] = 0.0
        frontier = [goal]
        while frontier:
            nxt = []
            for s in frontier:
                for t in range(self.n_states):
                    if dist[t] == np.inf and s in self.move_to[t]:
                        dist[t] = dist[s] + 1.0
                        nxt.append(t)
            frontier = nxt
        greedy = np.argmin(dist[self.move_to], axis=1)
        pi = np.full((self.n_states, 4), epsilon / 4.0)
        pi[np.arange(self.n_states), greedy] += 1.0 - epsilon
        return pi

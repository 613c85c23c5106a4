"""Training loops: performative policy gradient, its performativity-oblivious
ablation, the stability-seeking retraining baselines, and the loan protocol.

Every run is a pure function of (environment spec, config): rng streams are
spawned from the config seed, trajectory reduction order is fixed, and the
serialized record reproduces byte-identically.  Wall-clock timings are kept
out of the CSV by default for exactly that reason; pass record_timing=True
(or --timing on the CLI) to write real per-iteration milliseconds.
"""

import csv
import hashlib
import json
import subprocess
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .envs import (
    GridworldConfig,
    GridworldEnv,
    LoanConfig,
    LoanEnv,
    StaticEnv,
    random_tables,
)
from .gradients import (
    advantage_estimates,
    collect_trajectories,
    default_horizon,
    exact_gradient_fd,
    fit_value,
    make_provider,
    pepg_gradient,
    rewards_to_go,
    stack_batch,
)
from .mdp import TabularTables, occupancy, q_and_advantage, solve_value
from .policy import softmax_policy

CSV_COLUMNS = [
    "iteration",
    "seed",
    "algo",
    "mc_return",
    "exact_value",
    "stability_l2",
    "grad_norm",
    "wall_ms",
]

ALGORITHMS = ("pepg", "pepg-reg", "vanilla-pg", "rpo-fs", "mdrr", "loan-reinforce")


class TrainingAborted(RuntimeError):
    """Raised when a run hits a non-finite gradient; carries the partial record."""

    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


@dataclass
class TrainConfig:
    algo: str = "pepg"
    iterations: int = 100
    eta: float = 0.1
    lam: float = 0.0                  # entropy weight; pepg-reg forces > 0
    n_trajectories: int = 100
    horizon: int | None = None        # None: tail-bound default
    eps_tail: float = 1e-4
    seed: int = 0
    grad_mode: str = "auto"           # analytic | fd | directional | zero | auto
    directional_k: int = 64
    fd_step: float = 1e-5
    use_discount_weights: bool = True
    exact_gradient: bool = False      # debug: ascend the exact FD gradient
    eval_every: int = 1
    # retraining baselines
    lambda_base: float = 0.1          # entropic regularizer of the inner solver
    memory_weight: float = 1.1        # v: age-decayed mixture weights v^-age
    retrain_every: int = 3            # k: delayed retraining period
    memory_size: int = 10             # N: environments mixed
    batch_size: int = 10              # B: accepted for parity; inner solve is exact
    init: str = "default"             # zeros | eps-greedy | default (per algo)
    eps_explore: float = 0.5
    record_timing: bool = False

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algo!r}")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")


@dataclass
class IterationRow:
    iteration: int
    seed: int
    algo: str
    mc_return: float
    exact_value: float
    stability_l2: float
    grad_norm: float
    wall_ms: float
    mc_sem: float = 0.0               # kept out of the CSV


@dataclass
class RunRecord:
    algo: str
    seed: int
    config: dict
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_csv(self, path):
        timing = self.config.get("record_timing", False)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in self.rows:
                writer.writerow(
                    [
                        row.iteration,
                        row.seed,
                        row.algo,
                        _fmt(row.mc_return),
                        _fmt(row.exact_value),
                        _fmt(row.stability_l2),
                        _fmt(row.grad_norm),
                        _fmt(row.wall_ms if timing else 0.0),
                    ]
                )

    def manifest(self, env_spec, runtime_seconds=None):
        payload = {"env": env_spec, "config": self.config}
        return {
            "config_hash": config_hash(payload),
            "seed": self.seed,
            "algo": self.algo,
            "git_describe": git_describe(),
            "env_spec": env_spec,
            "config": self.config,
            "runtime_seconds": runtime_seconds,
        }


def _fmt(x):
    return f"{float(x):.17g}"


def config_hash(payload):
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def git_describe():
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.TimeoutExpired):
        return "unknown"


# -- environment factory ----------------------------------------------------


def make_env(env_spec):
    """Build an environment from a plain dict (the experiment-spec format)."""
    spec = dict(env_spec)
    kind = spec.pop("type")
    if kind == "expfam":
        from .envs import make_expfam

        env = make_expfam(
            spec.pop("n_states"),
            spec.pop("n_actions"),
            gamma=spec.pop("gamma", 0.9),
            seed=spec.pop("seed", 0),
            r_max=spec.pop("r_max", 1.0),
            psi=np.asarray(spec.pop("psi"), float) if "psi" in spec else None,
            xi=spec.pop("xi", None),
        )
    elif kind == "gridworld":
        layout = spec.pop("layout", None)
        if "layout_file" in spec:
            with open(spec.pop("layout_file"), "r", encoding="utf-8") as fh:
                layout = fh.read()
        kwargs = {}
        if layout is not None:
            kwargs["layout"] = layout
        for key in (
            "intervention_cost", "n_followers", "match_prob", "boltzmann_beta",
            "gamma", "seed", "costs", "follower_cell_costs",
        ):
            if key in spec:
                kwargs[key] = spec.pop(key)
        env = GridworldEnv(GridworldConfig(**kwargs))
    elif kind == "loan":
        env = LoanEnv(LoanConfig(**spec))
        spec = {}
    elif kind == "static":
        gamma = spec.pop("gamma", 0.9)
        if "transition" in spec:
            tables = TabularTables(
                transition=np.asarray(spec.pop("transition"), float),
                reward=np.asarray(spec.pop("reward"), float),
                r_max=spec.pop("r_max", 1.0),
            )
        else:
            tables = random_tables(
                spec.pop("n_states"),
                spec.pop("n_actions"),
                np.random.default_rng(spec.pop("seed", 0)),
                r_max=spec.pop("r_max", 1.0),
            )
        rho = np.asarray(spec.pop("rho"), float) if "rho" in spec else None
        env = StaticEnv(tables, gamma=gamma, rho=rho)
    else:
        raise ValueError(f"unknown environment type {kind!r}")
    if spec:
        raise ValueError(f"unknown environment keys: {sorted(spec)}")
    return env


# -- gradient trainers -------------------------------------------------------


def _initial_theta(env, config):
    if config.init in ("zeros", "default"):
        return np.zeros((env.n_states, env.n_actions))
    if config.init == "eps-greedy":
        if not isinstance(env, GridworldEnv):
            raise ValueError("eps-greedy init is a gridworld construction")
        return np.log(env.shortest_path_policy(config.eps_explore))
    raise ValueError(f"unknown init {config.init!r}")


def _resolve_provider(env, config, seed_seq):
    mode = config.grad_mode
    if mode == "auto":
        mode = "analytic" if env.has_analytic_grads else "directional"
    if mode == "analytic":
        return make_provider(env, "analytic")
    if mode == "zero":
        return make_provider(env, "zero")
    if mode == "fd":
        return make_provider(env, "fd", step=config.fd_step)
    if mode == "directional":
        return make_provider(
            env, "directional", k=config.directional_k, step=config.fd_step,
            seed=seed_seq.spawn(1)[0],
        )
    raise ValueError(f"unknown grad_mode {mode!r}")


def _exact_occupancy(env, theta, tables):
    return occupancy(tables, softmax_policy(theta), env.gamma, env.rho).d


def run_pepg(env, config):
    """Performative policy gradient (entropy-regularized when lam > 0).

    vanilla-pg is the same loop with the zero environment-gradient provider.
    """
    cfg = config
    lam = cfg.lam
    if cfg.algo == "pepg-reg" and lam == 0.0:
        raise ValueError("pepg-reg needs lam > 0")
    if cfg.algo == "vanilla-pg":
        lam = cfg.lam  # the oblivious ablation may still be regularized
    seed_seq = np.random.SeedSequence(cfg.seed)
    provider_seq, traj_seq = seed_seq.spawn(2)
    rng = np.random.default_rng(traj_seq)
    provider = (
        make_provider(env, "zero")
        if cfg.algo == "vanilla-pg"
        else _resolve_provider(env, cfg, provider_seq)
    )
    horizon = cfg.horizon or default_horizon(env.gamma, env.r_max, cfg.eps_tail)

    theta = _initial_theta(env, cfg)
    v_hat = np.zeros(env.n_states)
    record = RunRecord(algo=cfg.algo, seed=cfg.seed, config=asdict(cfg))

    tables, warm = env.induce_warm(theta)
    occ = _exact_occupancy(env, theta, tables)
    exact_value = float(env.rho @ solve_value(tables, softmax_policy(theta), env.gamma))

    for k in range(cfg.iterations):
        t0 = time.perf_counter()
        policy = softmax_policy(theta)
        trajs = collect_trajectories(
            env, theta, cfg.n_trajectories, horizon, rng, tables=tables
        )
        s_mat, a_mat, _, r_mat = stack_batch(trajs)
        raw_returns = rewards_to_go(r_mat, env.gamma)[:, 0]

        if lam > 0.0:
            train_rewards = r_mat - lam * np.log(policy[s_mat, a_mat])
        else:
            train_rewards = None
        adv = advantage_estimates(trajs, v_hat, rewards=train_rewards)

        if cfg.exact_gradient:
            grad = exact_gradient_fd(env, theta, lam=lam, step=cfg.fd_step)
            term_norms = {}
        else:
            env_grads = provider(theta, warm=warm)
            try:
                estimate = pepg_gradient(
                    theta, trajs, adv, env_grads, lam=lam,
                    use_discount_weights=cfg.use_discount_weights,
                )
            except FloatingPointError as err:
                record.summary["abort"] = str(err)
                raise TrainingAborted(str(err), record) from err
            grad = estimate.grad
            term_norms = estimate.term_norms
        if not np.all(np.isfinite(grad)):
            record.summary["abort"] = "non-finite gradient"
            raise TrainingAborted("non-finite gradient", record)

        v_hat = fit_value(
            trajs, env.n_states, previous=v_hat, rewards=train_rewards
        )

        theta_next = theta + cfg.eta * grad
        if np.array_equal(theta_next, theta):
            tables_next, warm_next, occ_next = tables, warm, occ
        else:
            tables_next, warm_next = env.induce_warm(theta_next, warm=warm)
            occ_next = _exact_occupancy(env, theta_next, tables_next)
        stability = float(np.linalg.norm(occ_next - occ))
        if k % cfg.eval_every == 0:
            exact_value = float(
                env.rho @ solve_value(tables, softmax_policy(theta), env.gamma)
            )

        record.rows.append(
            IterationRow(
                iteration=k,
                seed=cfg.seed,
                algo=cfg.algo,
                mc_return=float(raw_returns.mean()),
                exact_value=exact_value,
                stability_l2=stability,
                grad_norm=float(np.linalg.norm(grad)),
                wall_ms=(time.perf_counter() - t0) * 1e3,
                mc_sem=float(raw_returns.std(ddof=1) / np.sqrt(len(raw_returns))),
            )
        )
        theta, tables, warm, occ = theta_next, tables_next, warm_next, occ_next
        if term_norms:
            record.summary["last_term_norms"] = term_norms

    record.summary.update(
        final_exact_value=exact_value,
        final_theta_norm=float(np.linalg.norm(theta)),
        horizon=horizon,
    )
    record.summary["theta"] = theta.tolist()
    return record


def run_vanilla_pg(env, config):
    cfg = TrainConfig(**{**asdict(config), "algo": "vanilla-pg"})
    return run_pepg(env, cfg)


# -- retraining baselines ----------------------------------------------------


def soft_value_iteration(tables, gamma, lam, tol=1e-10, max_iter=100_000):
    """Entropy-regularized optimal solve of a frozen MDP.

    Returns (v, q, policy) with policy(a|s) proportional to exp(Q/lam); the
    soft-Bellman operator is a gamma-contraction, so this is exact up to tol.
    """
    n_states = tables.n_states
    v = np.zeros(n_states)
    for _ in range(max_iter):
        q = tables.reward + gamma * tables.transition @ v
        new_v = lam * logsumexp(q / lam, axis=1)
        err = np.abs(new_v - v).max()
        v = new_v
        if err <= tol:
            z = q / lam
            z -= z.max(axis=1, keepdims=True)
            e = np.exp(z)
            return v, q, e / e.sum(axis=1, keepdims=True)
    raise RuntimeError("soft value iteration did not converge")


def _baseline_init(env, config):
    if config.init == "eps-greedy" or (
        config.init == "default" and isinstance(env, GridworldEnv)
    ):
        return np.log(env.shortest_path_policy(config.eps_explore))
    return np.zeros((env.n_states, env.n_actions))


def _baseline_metrics(env, theta, tables, rng, cfg, horizon):
    trajs = collect_trajectories(
        env, theta, cfg.n_trajectories, horizon, rng, tables=tables
    )
    _, _, _, r_mat = stack_batch(trajs)
    returns = rewards_to_go(r_mat, env.gamma)[:, 0]
    exact = float(env.rho @ solve_value(tables, softmax_policy(theta), env.gamma))
    sem = float(returns.std(ddof=1) / np.sqrt(len(returns)))
    return float(returns.mean()), exact, sem


def run_repeated_retraining(env, config):
    """RPO-FS style baseline: each round solves the frozen induced MDP
    (entropic regularizer lambda_base) to near-optimality and redeploys."""
    cfg = config
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    horizon = cfg.horizon or default_horizon(env.gamma, env.r_max, cfg.eps_tail)
    theta = _baseline_init(env, cfg)
    record = RunRecord(algo=cfg.algo, seed=cfg.seed, config=asdict(cfg))

    tables, warm = env.induce_warm(theta)
    occ = _exact_occupancy(env, theta, tables)
    for k in range(cfg.iterations):
        t0 = time.perf_counter()
        mc_return, exact_value, sem = _baseline_metrics(
            env, theta, tables, rng, cfg, horizon
        )
        _, _, pi_new = soft_value_iteration(tables, env.gamma, cfg.lambda_base)
        theta_next = np.log(pi_new)
        if np.array_equal(theta_next, theta):
            tables_next, occ_next = tables, occ
        else:
            tables_next, warm = env.induce_warm(theta_next, warm=warm)
            occ_next = _exact_occupancy(env, theta_next, tables_next)
        stability = float(np.linalg.norm(occ_next - occ))
        record.rows.append(
            IterationRow(
                iteration=k,
                seed=cfg.seed,
                algo=cfg.algo,
                mc_return=mc_return,
                exact_value=exact_value,
                stability_l2=stability,
                grad_norm=float(
                    np.linalg.norm(pi_new - softmax_policy(theta))
                ),
                wall_ms=(time.perf_counter() - t0) * 1e3,
                mc_sem=sem,
            )
        )
        theta, tables, occ = theta_next, tables_next, occ_next

    record.summary.update(final_exact_value=record.rows[-1].exact_value)
    record.summary["theta"] = theta.tolist()
    return record


def run_mdrr(env, config):
    """Delayed mixed retraining: redeploy every retrain_every rounds against
    a v^-age weighted mixture of the last memory_size induced environments."""
    cfg = config
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    horizon = cfg.horizon or default_horizon(env.gamma, env.r_max, cfg.eps_tail)
    theta = _baseline_init(env, cfg)
    record = RunRecord(algo=cfg.algo, seed=cfg.seed, config=asdict(cfg))

    tables, warm = env.induce_warm(theta)
    occ = _exact_occupancy(env, theta, tables)
    history = []
    for k in range(cfg.iterations):
        t0 = time.perf_counter()
        mc_return, exact_value, sem = _baseline_metrics(
            env, theta, tables, rng, cfg, horizon
        )
        history.append(tables)
        history = history[-cfg.memory_size:]
        if k % cfg.retrain_every == 0:
            ages = np.arange(len(history))[::-1]            # newest has age 0
            weights = cfg.memory_weight ** (-ages.astype(float))
            weights /= weights.sum()
            p_mix = sum(w * t.transition for w, t in zip(weights, history))
            r_mix = sum(w * t.reward for w, t in zip(weights, history))
            mixed = TabularTables(p_mix, r_mix, r_max=env.r_max)
            _, _, pi_new = soft_value_iteration(mixed, env.gamma, cfg.lambda_base)
            theta_next = np.log(pi_new)
        else:
            theta_next = theta
        if np.array_equal(theta_next, theta):
            tables_next, occ_next = tables, occ
        else:
            tables_next, warm = env.induce_warm(theta_next, warm=warm)
            occ_next = _exact_occupancy(env, theta_next, tables_next)
        stability = float(np.linalg.norm(occ_next - occ))
        record.rows.append(
            IterationRow(
                iteration=k,
                seed=cfg.seed,
                algo=cfg.algo,
                mc_return=mc_return,
                exact_value=exact_value,
                stability_l2=stability,
                grad_norm=float(
                    np.linalg.norm(softmax_policy(theta_next) - softmax_policy(theta))
                ),
                wall_ms=(time.perf_counter() - t0) * 1e3,
                mc_sem=sem,
            )
        )
        theta, tables, occ = theta_next, tables_next, occ_next

    record.summary.update(final_exact_value=record.rows[-1].exact_value)
    record.summary["theta"] = theta.tolist()
    return record


# -- loan protocol ------------------------------------------------------------


def run_loan_protocol(env, config):
    """REINFORCE on the loan toy under performative mean updates.

    Per step: sample a score, grant with the policy's probability, observe
    the payoff, take a score-function ascent step, then let the population
    mean respond.  The terminal summary compares the learned threshold with
    the ERM and performatively optimal thresholds at their equilibria.
    """
    cfg = config
    if not isinstance(env, LoanEnv):
        raise ValueError("loan-reinforce runs on the loan environment")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    c = env.config
    theta = 0.0
    mu = c.mu0
    theta_trace = []
    record = RunRecord(algo=cfg.algo, seed=cfg.seed, config=asdict(cfg))
    for t in range(cfg.iterations):
        t0 = time.perf_counter()
        x = rng.normal(mu, c.sigma)
        p_grant = float(env.grant_prob(theta, x))
        granted = rng.random() < p_grant
        if granted:
            repay = rng.random() < float(env.repay_prob(x))
            reward = c.payoff_win if repay else -c.payoff_loss
            score = -c.smoothness * (1.0 - p_grant)
        else:
            reward = 0.0
            score = c.smoothness * p_grant
        step = cfg.eta * reward * score
        mu_next = (1.0 - c.beta) * mu + c.beta * env.mean_map(env.grant_rate(theta, mu))
        theta_next = float(np.clip(theta + step, -6.0, 6.0))
        step = theta_next - theta
        record.rows.append(
            IterationRow(
                iteration=t,
                seed=cfg.seed,
                algo=cfg.algo,
                mc_return=float(reward),
                exact_value=float(env.utility(theta, mu)),
                stability_l2=abs(mu_next - mu),
                grad_norm=abs(reward * score),
                wall_ms=(time.perf_counter() - t0) * 1e3,
            )
        )
        theta = theta_next
        mu = mu_next
        theta_trace.append(theta)

    theta_late = float(np.mean(theta_trace[-max(1, cfg.iterations // 4):]))
    theta_erm = env.erm_threshold()
    theta_perf = env.performative_threshold()
    u_learned, ok_l = env.equilibrium_utility(theta)
    u_erm, ok_e = env.equilibrium_utility(theta_erm)
    u_perf, ok_p = env.equilibrium_utility(theta_perf)
    record.summary.update(
        theta_learned=float(theta),
        theta_late_mean=theta_late,
        mu_final=float(mu),
        theta_erm=float(theta_erm),
        theta_perf=float(theta_perf),
        eq_utility_learned=float(u_learned),
        eq_utility_erm=float(u_erm),
        eq_utility_perf=float(u_perf),
        equilibria_converged=bool(ok_l and ok_e and ok_p),
    )
    return record


# -- dispatch and sweeps -------------------------------------------------------


def run(env, config):
    algo = config.algo
    if algo in ("pepg", "pepg-reg"):
        return run_pepg(env, config)
    if algo == "vanilla-pg":
        return run_vanilla_pg(env, config)
    if algo == "rpo-fs":
        return run_repeated_retraining(env, config)
    if algo == "mdrr":
        return run_mdrr(env, config)
    if algo == "loan-reinforce":
        return run_loan_protocol(env, config)
    raise ValueError(f"unknown algorithm {algo!r}")


def _run_job(job):
    env_spec, config = job
    try:
        record = run(make_env(env_spec), config)
        return record, None
    except TrainingAborted as err:
        return err.record, str(err)
    except Exception as err:  # pragma: no cover - surfaced in the sweep result
        return None, f"{type(err).__name__}: {err}"


def sweep(jobs, n_jobs=1):
    """Run (env_spec, config) jobs, serially or across processes.

    Returns (records, errors, aggregate): errors maps job index to the
    failure message; the sweep continues past individual failures.
    aggregate maps (algo, label) to per-iteration mean and standard error
    across seeds of the return metrics.
    """
    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(job) for job in jobs]

    records, errors = [], {}
    for idx, (record, err) in enumerate(results):
        if record is not None:
            records.append(record)
        if err is not None:
            errors[idx] = err
    return records, errors, aggregate_records(records)


def aggregate_records(records):
    """mean and standard error per iteration, grouped by (algo, lam, eta)."""
    groups = {}
    for record in records:
        key = (
            record.algo,
            record.config.get("lam", 0.0),
            record.config.get("eta", 0.0),
        )
        groups.setdefault(key, []).append(record)
    out = {}
    for key, group in groups.items():
        returns = np.array([[r.mc_return for r in rec.rows] for rec in group])
        exacts = np.array([[r.exact_value for r in rec.rows] for rec in group])
        n = len(group)
        out[key] = {
            "n_runs": n,
            "mc_return_mean": returns.mean(axis=0).tolist(),
            "mc_return_sem": (returns.std(axis=0, ddof=1) / np.sqrt(n)).tolist()
            if n > 1
            else [0.0] * returns.shape[1],
            "exact_value_mean": exacts.mean(axis=0).tolist(),
            "exact_value_sem": (exacts.std(axis=0, ddof=1) / np.sqrt(n)).tolist()
            if n > 1
            else [0.0] * exacts.shape[1],
        }
    return out

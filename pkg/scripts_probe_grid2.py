"""Second gridworld tuning probe: spread starts, goal-attractive scale."""
import json
import time

import numpy as np

from pepg.envs.gridworld import BLANK, START, GOAL, HAZARD
from pepg.trainers import TrainConfig, make_env, run

LAYOUT = (
    "S......S\n"
    "..HH....\n"
    "..HH....\n"
    "........\n"
    "...HH...\n"
    "S..HH...\n"
    ".H......\n"
    ".......G\n"
)

for beta_b, match in [(2.0, 0.8), (5.0, 0.8), (2.0, 0.7)]:
    costs = {BLANK: -0.01, START: -0.01, GOAL: 2.0, HAZARD: -0.5}
    spec = {"type": "gridworld", "seed": 0, "gamma": 0.9, "costs": costs,
            "layout": LAYOUT, "boltzmann_beta": beta_b, "match_prob": match}
    out = {"beta_b": beta_b, "match": match}
    rec = run(make_env(spec), TrainConfig(algo="rpo-fs", iterations=80, seed=0))
    out["rpofs"] = float(np.mean([r.exact_value for r in rec.rows[-10:]]))
    rec = run(make_env(spec), TrainConfig(algo="mdrr", iterations=80, seed=0))
    out["mdrr"] = float(np.mean([r.exact_value for r in rec.rows[-10:]]))
    for algo, lam, key in [("pepg", 0.0, "pepg"), ("pepg-reg", 2.0, "reg")]:
        t0 = time.perf_counter()
        cfg = TrainConfig(algo=algo, iterations=1000, eta=0.1, lam=lam,
                          n_trajectories=100, seed=0, grad_mode="directional")
        rec = run(make_env(spec), cfg)
        vals = [r.exact_value for r in rec.rows]
        stabs = [r.stability_l2 for r in rec.rows]
        out[key] = float(np.mean(vals[-50:]))
        out[key + "_trace"] = [round(vals[i], 3) for i in (0, 100, 300, 600, 999)]
        out[key + "_stab"] = [float(min(stabs[20:])), float(max(stabs[20:]))]
        out[key + "_secs"] = round(time.perf_counter() - t0)
    print(json.dumps(out), flush=True)

"""Command line entry point: train, sweep, verify, plot.

Experiment specs are JSON documents; the schema is validated before any run
and unknown keys are rejected by name.  Seeds come from --seed, then the
spec's seed list, then the PEPG_SEED environment variable.
"""

import argparse
import glob
import json
import os
import sys
import time
from dataclasses import fields

import numpy as np

from .trainers import ALGORITHMS, TrainConfig, make_env, run, sweep
from .verify import (
    reports_to_json,
    run_identity_suite,
    run_inequality_suite,
    summary_table,
)

ENV_TYPES = ("expfam", "gridworld", "loan", "static")
ENV_KEYS = {
    "expfam": {"type", "n_states", "n_actions", "gamma", "seed", "r_max", "psi", "xi"},
    "gridworld": {
        "type", "layout", "layout_file", "costs", "follower_cell_costs",
        "intervention_cost", "n_followers", "match_prob", "boltzmann_beta",
        "gamma", "seed",
    },
    "loan": {
        "type", "sigma", "repay_slope", "repay_offset", "payoff_win",
        "payoff_loss", "smoothness", "beta", "clamp", "mu0", "quad_nodes",
    },
    "static": {
        "type", "n_states", "n_actions", "gamma", "seed", "r_max",
        "transition", "reward", "rho",
    },
}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"algo", "seed"}
TOP_KEYS = {"env", "algorithms", "train", "seeds", "out_dir", "sweep"}


class SpecError(ValueError):
    pass


def validate_spec(spec):
    if not isinstance(spec, dict):
        raise SpecError("spec must be a JSON object")
    unknown = set(spec) - TOP_KEYS
    if unknown:
        raise SpecError(f"unknown spec keys: {sorted(unknown)}")
    env = spec.get("env")
    if not isinstance(env, dict) or "type" not in env:
        raise SpecError("env: must be an object with a 'type'")
    if env["type"] not in ENV_TYPES:
        raise SpecError(f"env.type: unknown environment {env['type']!r}")
    bad = set(env) - ENV_KEYS[env["type"]]
    if bad:
        raise SpecError(f"env: unknown keys for {env['type']}: {sorted(bad)}")
    algos = spec.get("algorithms", ["pepg"])
    if not isinstance(algos, list) or not algos:
        raise SpecError("algorithms: must be a nonempty list")
    for algo in algos:
        if algo not in ALGORITHMS:
            raise SpecError(f"algorithms: unknown algorithm {algo!r}")
    train = spec.get("train", {})
    bad = set(train) - TRAIN_KEYS
    if bad:
        raise SpecError(f"train: unknown keys: {sorted(bad)}")
    if "eta" in train and train["eta"] < 0:
        raise SpecError("train.eta: must be nonnegative")
    if "iterations" in train and train["iterations"] < 1:
        raise SpecError("train.iterations: must be >= 1")
    if "lam" in train and train["lam"] < 0:
        raise SpecError("train.lam: must be nonnegative")
    seeds = spec.get("seeds")
    if seeds is not None and (
        not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds)
    ):
        raise SpecError("seeds: must be a list of integers")
    swp = spec.get("sweep")
    if swp is not None:
        if set(swp) - {"param", "values"} or "param" not in swp or "values" not in swp:
            raise SpecError("sweep: must have exactly 'param' and 'values'")
        if not str(swp["param"]).startswith("train."):
            raise SpecError("sweep.param: only train.* parameters can be swept")
        if str(swp["param"])[len("train."):] not in TRAIN_KEYS:
            raise SpecError(f"sweep.param: unknown parameter {swp['param']!r}")
    return spec


def _apply_overrides(spec, overrides):
    for item in overrides or []:
        if "=" not in item:
            raise SpecError(f"--override needs key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = spec
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return spec


def _resolve_seeds(args, spec):
    if args.seed:
        return [int(s) for s in args.seed.split(",")]
    if spec.get("seeds"):
        return spec["seeds"]
    env_seed = os.environ.get("PEPG_SEED")
    if env_seed is not None:
        return [int(env_seed)]
    return [0]


def _load_spec(args):
    try:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        print(f"error: cannot read spec: {err}", file=sys.stderr)
        raise SystemExit(2)
    try:
        spec = _apply_overrides(spec, args.override)
        validate_spec(spec)
    except SpecError as err:
        print(f"error: invalid spec: {err}", file=sys.stderr)
        raise SystemExit(2)
    return spec


def _jobs_from_spec(spec, seeds, timing):
    jobs = []
    names = []
    base_train = dict(spec.get("train", {}))
    if timing:
        base_train["record_timing"] = True
    sweep_block = spec.get("sweep")
    variants = [(None, None)]
    if sweep_block:
        param = sweep_block["param"][len("train."):]
        variants = [(param, value) for value in sweep_block["values"]]
    for algo in spec.get("algorithms", ["pepg"]):
        for param, value in variants:
            train = dict(base_train)
            if param is not None:
                train[param] = value
            for seed in seeds:
                config = TrainConfig(algo=algo, seed=seed, **train)
                jobs.append((spec["env"], config))
                tag = f"{algo}" if param is None else f"{algo}_{param}{value}"
                names.append(f"{tag}_seed{seed}")
    return jobs, names


def _write_outputs(records, names, env_spec, out_dir, runtimes=None):
    os.makedirs(out_dir, exist_ok=True)
    for i, (record, name) in enumerate(zip(records, names)):
        csv_path = os.path.join(out_dir, f"{name}.csv")
        record.to_csv(csv_path)
        manifest = record.manifest(
            env_spec, runtime_seconds=None if runtimes is None else runtimes[i]
        )
        with open(os.path.join(out_dir, f"{name}.manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, default=str)
        print(f"wrote {csv_path}")


def cmd_train(args):
    spec = _load_spec(args)
    seeds = _resolve_seeds(args, spec)
    out_dir = args.out or spec.get("out_dir", "runs")
    jobs, names = _jobs_from_spec(spec, seeds, args.timing)
    records, runtimes = [], []
    for env_spec, config in jobs:
        t0 = time.perf_counter()
        try:
            records.append(run(make_env(env_spec), config))
        except Exception as err:
            print(f"error: run aborted ({config.algo}, seed {config.seed}): {err}",
                  file=sys.stderr)
            return 3
        runtimes.append(time.perf_counter() - t0)
    _write_outputs(records, names, spec["env"], out_dir, runtimes)
    return 0


def cmd_sweep(args):
    spec = _load_spec(args)
    if not spec.get("sweep"):
        print("error: invalid spec: sweep: missing block", file=sys.stderr)
        return 2
    seeds = _resolve_seeds(args, spec)
    out_dir = args.out or spec.get("out_dir", "runs")
    jobs, names = _jobs_from_spec(spec, seeds, args.timing)
    records, errors, aggregate = sweep(jobs, n_jobs=args.jobs)
    _write_outputs(records, names[: len(records)], spec["env"], out_dir)
    agg_path = os.path.join(out_dir, "sweep_aggregate.json")
    with open(agg_path, "w") as fh:
        json.dump(
            {str(k): v for k, v in aggregate.items()}, fh, indent=2, default=str
        )
    print(f"wrote {agg_path}")
    if errors:
        for idx, message in errors.items():
            print(f"error: job {idx} failed: {message}", file=sys.stderr)
        return 3
    return 0


def cmd_verify(args):
    seed = args.seed_int
    suites = []
    if args.suite in ("identities", "all"):
        suites.append(("identities", run_identity_suite(
            seed=seed, n_instances=args.instances,
            advantage_bias=args.canary_advantage_bias,
        )))
    if args.suite in ("inequalities", "all"):
        suites.append(
            ("inequalities", run_inequality_suite(seed=seed,
                                                  n_instances=args.instances))
        )
    all_reports = [r for _, reports in suites for r in reports]
    print(summary_table(all_reports))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"verify_{args.suite}_seed{seed}.json")
        with open(path, "w") as fh:
            fh.write(reports_to_json(all_reports))
        print(f"wrote {path}")
    n_failed = sum(not r.passed for r in all_reports)
    if n_failed:
        print(f"{n_failed} checks FAILED", file=sys.stderr)
        return 1
    print(f"all {len(all_reports)} checks passed")
    return 0


def cmd_plot(args):
    paths = sorted(glob.glob(args.glob))
    if not paths:
        print("error: no inputs", file=sys.stderr)
        return 2
    from .plotting import render

    out_dir = args.out or "plots"
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, f"{args.kind.replace('-', '_')}.svg")
    render(paths, args.kind, out_path)
    print(f"wrote {out_path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pepg",
        description="Performative policy gradient experiments and verification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run algorithms from an experiment spec")
    train.add_argument("--spec", required=True, help="experiment spec (JSON)")
    train.add_argument("--seed", help="comma-separated seed list")
    train.add_argument("--out", help="output directory")
    train.add_argument("--override", action="append",
                       help="key=value override, repeatable (e.g. train.eta=0.2)")
    train.add_argument("--jobs", type=int, default=1)
    train.add_argument("--timing", action="store_true",
                       help="record real wall_ms in the CSV (breaks byte-identical reruns)")
    train.set_defaults(func=cmd_train)

    swp = sub.add_parser("sweep", help="expand a sweep block and run all variants")
    for arg in ("--spec",):
        swp.add_argument(arg, required=True)
    swp.add_argument("--seed")
    swp.add_argument("--out")
    swp.add_argument("--override", action="append")
    swp.add_argument("--jobs", type=int, default=1)
    swp.add_argument("--timing", action="store_true")
    swp.set_defaults(func=cmd_sweep)

    ver = sub.add_parser("verify", help="run the numerical certification suites")
    ver.add_argument("--suite", choices=("identities", "inequalities", "all"),
                     default="all")
    ver.add_argument("--seed", dest="seed_int", type=int, default=0)
    ver.add_argument("--instances", type=int, default=50)
    ver.add_argument("--out", help="directory for the JSON report")
    ver.add_argument("--canary-advantage-bias", type=float, default=0.0,
                     help="debug: bias the advantage tables to prove sensitivity")
    ver.set_defaults(func=cmd_verify)

    plot = sub.add_parser("plot", help="render SVG figures from run CSVs")
    plot.add_argument("--glob", required=True, help="glob of run CSV files")
    plot.add_argument("--kind", choices=("curves", "stability", "sweep-bars"),
                      default="curves")
    plot.add_argument("--out", help="output directory")
    plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

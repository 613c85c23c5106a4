"""Static SVG plots of learning curves, stability traces, and sweep bars.

Consumes exactly the CSV files the trainers emit; when a sibling
<run>.manifest.json exists its lam/eta values label the curve groups.
"""

import json
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .trainers import CSV_COLUMNS


def load_run_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")
    if data.dtype.names is None or set(data.dtype.names) != set(CSV_COLUMNS):
        raise ValueError(f"{path}: columns do not match a run record")
    return data


def _group_label(path, algo):
    base = os.path.splitext(path)[0]
    manifest = base + ".manifest.json"
    if os.path.exists(manifest):
        with open(manifest, "r", encoding="utf-8") as fh:
            cfg = json.load(fh).get("config", {})
        parts = [algo]
        if cfg.get("lam"):
            parts.append(f"lam={cfg['lam']}")
        if "eta" in cfg:
            parts.append(f"eta={cfg['eta']}")
        return " ".join(parts)
    return algo


def _grouped(paths):
    groups = defaultdict(list)
    for path in paths:
        data = load_run_csv(path)
        algo = str(np.atleast_1d(data["algo"])[0])
        groups[_group_label(path, algo)].append(data)
    return groups


def _band(ax, runs, column, color=None, label=None):
    series = np.array([np.atleast_1d(run[column]) for run in runs])
    mean = series.mean(axis=0)
    x = np.arange(series.shape[1])
    (line,) = ax.plot(x, mean, label=label, color=color)
    if len(runs) > 1:
        sem = series.std(axis=0, ddof=1) / np.sqrt(len(runs))
        ax.fill_between(x, mean - sem, mean + sem, alpha=0.25,
                        color=line.get_color())
    return line


def plot_curves(paths, out_path):
    """Two panels: return trajectories and the log-scale stability metric."""
    groups = _grouped(paths)
    fig, (ax_ret, ax_stab) = plt.subplots(1, 2, figsize=(11, 4))
    for label in sorted(groups):
        runs = groups[label]
        _band(ax_ret, runs, "exact_value", label=label)
        series = np.array(
            [np.maximum(np.atleast_1d(r["stability_l2"]), 1e-16) for r in runs]
        )
        x = np.arange(series.shape[1])
        ax_stab.plot(x, series.mean(axis=0), label=label)
    ax_ret.set_xlabel("iteration")
    ax_ret.set_ylabel("exact performative value")
    ax_ret.legend(fontsize=8)
    ax_stab.set_xlabel("iteration")
    ax_stab.set_ylabel(r"$\|d_{t+1} - d_t\|_2$")
    ax_stab.set_yscale("log")
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path


def plot_stability(paths, out_path):
    groups = _grouped(paths)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in sorted(groups):
        series = np.array(
            [np.maximum(np.atleast_1d(r["stability_l2"]), 1e-16)
             for r in groups[label]]
        )
        ax.plot(np.arange(series.shape[1]), series.mean(axis=0), label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel(r"$\|d_{t+1} - d_t\|_2$")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path


def plot_sweep_bars(paths, out_path, tail=10):
    """Mean final value (over the trailing iterations) per group, with sem."""
    groups = _grouped(paths)
    labels, means, sems = [], [], []
    for label in sorted(groups):
        finals = [
            float(np.mean(np.atleast_1d(run["exact_value"])[-tail:]))
            for run in groups[label]
        ]
        labels.append(label)
        means.append(np.mean(finals))
        sems.append(
            np.std(finals, ddof=1) / np.sqrt(len(finals)) if len(finals) > 1 else 0.0
        )
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labels)), 4))
    ax.bar(range(len(labels)), means, yerr=sems, capsize=4)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("final exact value")
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path


def render(paths, kind, out_path):
    if kind == "curves":
        return plot_curves(paths, out_path)
    if kind == "stability":
        return plot_stability(paths, out_path)
    if kind == "sweep-bars":
        return plot_sweep_bars(paths, out_path)
    raise ValueError(f"unknown plot kind {kind!r}")

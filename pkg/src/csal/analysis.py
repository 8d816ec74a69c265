"""Aggregation of ``summary.csv`` files into curves, tables and correlations."""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from .errors import NoRunsFound, ZeroVariance
from .harness import pearson_r, read_summary_csv


def _runs_from_rows(rows):
    """Split summary rows into runs; every run starts at cycle 0."""
    runs = []
    for row in rows:
        if row["cycle"] == 0 or not runs:
            runs.append([])
        runs[-1].append(row)
    return runs


def _stats(values):
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else None
    return {"mean": float(arr.mean()), "std": std, "n": int(arr.size)}


def _safe_r(x, y):
    try:
        return pearson_r(x, y)
    except ZeroVariance:
        return None


def load_runs(run_dirs):
    runs = []
    for d in run_dirs:
        path = Path(d)
        if path.is_dir():
            path = path / "summary.csv"
        if path.is_file():
            runs.extend(_runs_from_rows(read_summary_csv(path)))
    if not runs:
        raise NoRunsFound(f"no summary.csv found under {', '.join(map(str, run_dirs))}")
    return runs


def curve_key(run):
    first = run[0]
    return f"{first['initial_strategy']}|{first['cycle_strategy']}|{first['n_labeled']}"


def analyze(runs):
    """Aggregate runs (lists of per-cycle summary rows).

    * ``curves``: per run family (initial strategy, cycle strategy, first
      budget) the mean and sample standard deviation of accuracy and AUC at
      every labeled-set size;
    * ``initial_query``: coverage and selection entropy of the first query
      per (initial strategy, budget);
    * ``correlation``: per cycle strategy, Pearson r between the first and
      last cycle's AUC (and accuracy) over all multi-cycle runs; ``None``
      when undefined.
    """
    families = defaultdict(lambda: defaultdict(list))
    for run in runs:
        fam = families[curve_key(run)]
        for row in run:
            fam[row["n_labeled"]].append(row)
    curves = {}
    for key, by_size in sorted(families.items()):
        curves[key] = [
            {
                "n_labeled": n,
                "accuracy": _stats([r["accuracy"] for r in rows]),
                "auc": _stats([r["auc"] for r in rows]),
            }
            for n, rows in sorted(by_size.items())
        ]

    first = defaultdict(list)
    for run in runs:
        first[(run[0]["initial_strategy"], run[0]["n_labeled"])].append(run[0])
    initial_query = [
        {
            "initial_strategy": strat,
            "budget": budget,
            "coverage": _stats([r["coverage"] for r in rows]),
            "entropy": _stats([r["entropy"] for r in rows]),
        }
        for (strat, budget), rows in sorted(first.items())
    ]

    ends = defaultdict(list)
    for run in runs:
        if len(run) >= 2:
            ends[run[0]["cycle_strategy"]].append((run[0], run[-1]))
    correlation = {}
    for strat, pairs in sorted(ends.items()):
        start, end = zip(*pairs)
        correlation[strat] = {
            "runs": len(pairs),
            "start_size": start[0]["n_labeled"],
            "end_size": end[0]["n_labeled"],
            "auc_r": _safe_r([r["auc"] for r in start], [r["auc"] for r in end]),
            "accuracy_r": _safe_r([r["accuracy"] for r in start], [r["accuracy"] for r in end]),
        }
    return {"runs": len(runs), "curves": curves, "initial_query": initial_query, "correlation": _clean(correlation)}


def _clean(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    return obj


def analyze_runs(run_dirs):
    return analyze(load_runs(run_dirs))

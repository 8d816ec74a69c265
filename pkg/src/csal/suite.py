"""Multi-seed experiment runner shared by ``csal run`` and the acceptance tests.

Each seed is an independent unit of work: it builds its own dataset,
split and cold-start artifacts, then runs every experiment in order.
Seeds may be spread over worker processes (``CSAL_THREADS`` caps the
count); results are merged by seed and experiment order, so the output
never depends on the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from threadpoolctl import threadpool_limits

from .datasources import generate_long_tail, ingest_embeddings
from .harness import ColdStartContext, Schedule, run_active_learning, stratified_split, summary_csv_text


@dataclass(frozen=True)
class Experiment:
    initial_strategy: str
    cycle_strategy: str
    schedule: Schedule

    @property
    def key(self):
        s = self.schedule
        return f"{self.initial_strategy}__{self.cycle_strategy}__{s.initial}-{s.step}x{s.cycles}"


# strategies compared on their very first query
COVERAGE_STRATEGIES = ("hard-to-contrast", "entropy", "margin", "bald", "random")
# cold-start accuracy comparison
COLD_START_STRATEGIES = ("hard-to-contrast", "random", "easy-to-contrast")
# multi-cycle runs feeding the start/end correlation
CORRELATION_STRATEGIES = (
    "hard-to-contrast",
    "easy-to-contrast",
    "random",
    "entropy",
    "margin",
    "bald",
    "consistency",
    "coreset",
)


def trend_experiments(class_count=10, cycle_strategy="random"):
    """Experiments behind the benchmark trend checks.

    * one query of ``C`` labels per coverage strategy,
    * ``2C, +10, +10, +10`` multi-cycle runs (cycle 0 doubles as the
      ``B = 2C`` coverage comparison),
    * one query of 50 labels for the cold-start accuracy comparison.
    """
    exps = [Experiment(s, cycle_strategy, Schedule(class_count, 10, 0)) for s in COVERAGE_STRATEGIES]
    exps += [Experiment(s, cycle_strategy, Schedule(2 * class_count, 10, 3)) for s in CORRELATION_STRATEGIES]
    exps += [Experiment(s, cycle_strategy, Schedule(50, 10, 0)) for s in COLD_START_STRATEGIES]
    return exps


def custom_experiments(cfg):
    return [Experiment(s, cfg["run.cycle_strategy"], cfg.schedule()) for s in cfg["run.initial_strategies"]]


def experiments_for(cfg):
    if cfg["run.suite"] == "trend":
        return trend_experiments(cfg["data.class_count"], cfg["run.cycle_strategy"])
    return custom_experiments(cfg)


def load_dataset(cfg, seed):
    if cfg["data.path"]:
        return ingest_embeddings(cfg["data.path"], class_count=cfg["data.class_count"])
    return generate_long_tail(cfg.long_tail(seed))


def run_seed(cfg, seed, experiments):
    """All experiments for one seed; returns the run records in experiment order."""
    with threadpool_limits(limits=1):
        seeded = cfg.with_seed(seed)
        dataset = load_dataset(seeded, seed)
        train, test = stratified_split(dataset, seed, seeded["data.test_fraction"])
        hcfg = seeded.harness()
        ctx = ColdStartContext(train, hcfg, seed)
        return [
            run_active_learning(train, test, e.initial_strategy, e.cycle_strategy, e.schedule, hcfg, seed, ctx)
            for e in experiments
        ]


def worker_count(n_tasks):
    env = os.environ.get("CSAL_THREADS", "").strip()
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


def run_suite(cfg, seeds=None, experiments=None, workers=None):
    """Run ``experiments`` for every seed; returns ``{(seed, experiment_index): record}``."""
    seeds = list(cfg["run.seeds"] if seeds is None else seeds)
    experiments = list(experiments_for(cfg) if experiments is None else experiments)
    workers = worker_count(len(seeds)) if workers is None else max(1, workers)
    if workers == 1:
        per_seed = [run_seed(cfg, s, experiments) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_seed, cfg, s, experiments) for s in seeds]
            per_seed = [f.result() for f in futures]
    return {
        (seed, i): rec
        for seed, records in zip(seeds, per_seed)
        for i, rec in enumerate(records)
    }


def write_suite(results, experiments, out_dir):
    """Per-run JSON-lines plus the merged ``summary.csv`` (rows in sorted run-key order)."""
    out = Path(out_dir)
    runs = out / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    ordered = [results[k] for k in sorted(results)]
    for (seed, i) in sorted(results):
        results[(seed, i)].to_jsonl(runs / f"seed{seed}__{experiments[i].key}.jsonl")
    (out / "summary.csv").write_text(summary_csv_text(ordered))
    return out / "summary.csv"

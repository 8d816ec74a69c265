"""Active-learning simulation: metrics, the multi-cycle loop and run records."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .cartography import build_map, supervised_trajectory
from .classifier import ClassifierConfig, cold_start_classifier, train_classifier
from .clustering import DEFAULT_K, kmeans
from .contrastive import AugmentSpec, ContrastiveConfig, pretrain
from .datamodel import derive_stream
from .errors import (
    ConfigError,
    EmptyTestSet,
    LengthMismatch,
    MissingLabels,
    ScheduleTooLarge,
    ZeroVariance,
)
from . import strategies as st

SUMMARY_COLUMNS = [
    "seed",
    "initial_strategy",
    "cycle_strategy",
    "cycle",
    "n_labeled",
    "accuracy",
    "auc",
    "coverage",
    "entropy",
]


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def macro_auc(probs, labels):
    """Unweighted one-vs-rest ROC area over the classes present in ``labels``.

    Uses the rank statistic with average ranks, so tied scores contribute
    one half. Classes with no negatives in the split are skipped as well.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    aucs = []
    for c in np.unique(labels):
        pos = labels == c
        n_pos, n_neg = int(pos.sum()), int((~pos).sum())
        if n_pos == 0 or n_neg == 0:
            continue
        ranks = rankdata(probs[:, c])
        aucs.append((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
    return float(np.mean(aucs)) if aucs else float("nan")


def evaluate(classifier, test_dataset, labels=None):
    """Return ``(accuracy, macro one-vs-rest AUC)`` on a test split."""
    if test_dataset.M == 0:
        raise EmptyTestSet("test split is empty")
    if labels is None:
        labels = test_dataset.oracle_labels(purpose="evaluate")
    probs = classifier.predict_proba(test_dataset.features)
    accuracy = float(np.mean(np.argmax(probs, axis=1) == labels))
    return accuracy, macro_auc(probs, labels)


def class_coverage(selected_labels, class_count):
    if selected_labels is None:
        raise MissingLabels("class coverage needs ground-truth labels")
    return len(np.unique(np.asarray(selected_labels))) / class_count


def selection_entropy(selected_labels):
    if selected_labels is None:
        raise MissingLabels("selection entropy needs ground-truth labels")
    counts = np.bincount(np.asarray(selected_labels, dtype=np.int64))
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p))) + 0.0  # never report -0.0


def pearson_r(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size:
        raise LengthMismatch(f"{x.size} vs {y.size} values")
    if x.size < 2:
        raise ZeroVariance("need at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise ZeroVariance("one of the series is constant")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def stratified_split(dataset, seed, test_fraction=0.2):
    """Per class, ``round(test_fraction * n_c)`` samples go to the test split."""
    labels = dataset.oracle_labels(purpose="split")
    rng = derive_stream(seed, "split")
    test = []
    for c in range(dataset.class_count):
        members = np.flatnonzero(labels == c)
        n_test = int(math.floor(test_fraction * members.size + 0.5))
        test.extend(rng.permutation(members)[:n_test].tolist())
    test = np.sort(np.array(test, dtype=np.int64))
    train = np.setdiff1d(np.arange(dataset.M), test)
    return dataset.take(train), dataset.take(test)


# --------------------------------------------------------------------------
# configuration and shared cold-start artifacts
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HarnessConfig:
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    clusters: int = DEFAULT_K
    kmeans_normalize: bool = False
    kmeans_n_init: int = 1
    classifier_init: str = "scratch"  # or "encoder"
    mc_passes: int = 10
    augmentations: int = 5
    consistency_augment: AugmentSpec = field(default_factory=lambda: AugmentSpec(noise_sigma=0.5))
    learn_epochs: int = 30

    def __post_init__(self):
        if self.classifier_init not in ("scratch", "encoder"):
            raise ConfigError("classifier_init must be 'scratch' or 'encoder'")
        if self.clusters < 1 or self.kmeans_n_init < 1:
            raise ConfigError("clusters and kmeans_n_init must be >= 1")
        if self.mc_passes < 2 or self.augmentations < 2:
            raise ConfigError("mc_passes and augmentations must be >= 2")
        if self.learn_epochs < 1:
            raise ConfigError("learn_epochs must be >= 1")


@dataclass
class Schedule:
    initial: int
    step: int = 10
    cycles: int = 0

    def sizes(self):
        return [self.initial + c * self.step for c in range(self.cycles + 1)]


class ColdStartContext:
    """Lazily computed per-training-set artifacts shared by several runs."""

    def __init__(self, train, cfg: HarnessConfig, seed):
        self.train = train
        self.cfg = cfg
        self.seed = seed
        self._pre = None
        self._clusters = None
        self._learn_map = None

    @property
    def pretrained(self):
        if self._pre is None:
            self._pre = pretrain(self.train, replace(self.cfg.contrastive, seed=self.seed))
        return self._pre

    @property
    def contrast_map(self):
        return build_map(self.pretrained.trajectory, "contrast")

    @property
    def clusters(self):
        if self._clusters is None:
            self._clusters = kmeans(
                self.pretrained.embeddings,
                self.cfg.clusters,
                seed=self.seed,
                n_init=self.cfg.kmeans_n_init,
                normalize=self.cfg.kmeans_normalize,
            )
        return self._clusters

    @property
    def learn_map(self):
        if self._learn_map is None:
            ccfg = replace(self.cfg.classifier, epochs=self.cfg.learn_epochs, seed=self.seed)
            self._learn_map = build_map(supervised_trajectory(self.train, ccfg), "learn")
        return self._learn_map

    def encoder_or_none(self):
        return self.pretrained.encoder if self.cfg.classifier_init == "encoder" else None


def _split_strategy(name):
    base, _, suffix = name.partition("+")
    if base not in st.STRATEGIES:
        raise ConfigError(f"unknown strategy {name!r}")
    if suffix not in ("", "unif", "pseudo"):
        raise ConfigError(f"unknown diversity suffix in {name!r}")
    return base, suffix


def is_label_free(name):
    base, suffix = _split_strategy(name)
    return base in st.LABEL_FREE and suffix != "unif"


def select(name, ctx: ColdStartContext, pool, budget, classifier=None, labeled=(), seed=0):
    """Dispatch one query. ``name`` may carry ``+unif`` (oracle-label groups)
    or ``+pseudo`` (k-means groups) to wrap the base ranking with the
    diversity quota rule.
    """
    base, suffix = _split_strategy(name)
    pool = np.asarray(pool, dtype=np.int64)
    train = ctx.train
    cfg = ctx.cfg

    if base in ("hard-to-contrast", "easy-to-contrast") and suffix == "":
        fn = st.select_hard_to_contrast if base == "hard-to-contrast" else st.select_easy_to_contrast
        return fn(ctx.contrast_map, ctx.clusters, budget, candidates=pool)
    if base in st.GROUND_TRUTH and suffix == "":
        return st.select_learn_map(ctx.learn_map, budget, base.split("-")[0], candidates=pool)
    if base == "random" and suffix == "":
        return st.select_random(pool, budget, seed)
    if base == "coreset":
        if suffix:
            raise ConfigError("coreset does not take a diversity suffix")
        emb = ctx.pretrained.embeddings if ctx.cfg.contrastive is not None else train.features
        return st.select_coreset(emb, labeled, pool, budget)

    # score-based rankings
    descending = True
    if base == "random":
        scores = st.random_scores(pool, seed)
    elif base in ("hard-to-contrast", "easy-to-contrast", "easy-to-learn", "hard-to-learn"):
        dmap = ctx.learn_map if base in st.GROUND_TRUTH else ctx.contrast_map
        scores = dmap.confidence[pool]
        descending = base.startswith("easy")
    else:
        if classifier is None:
            classifier = cold_start_classifier(train.D, train.class_count, cfg.classifier, ctx.encoder_or_none(), seed)
        x = train.features[pool]
        if base == "entropy":
            scores = st.score_entropy(classifier, x)
        elif base == "margin":
            scores, descending = st.score_margin(classifier, x), False
        elif base == "bald":
            scores = st.score_bald(classifier, x, cfg.mc_passes, seed)
        else:
            scores = st.score_consistency(classifier, x, cfg.augmentations, cfg.consistency_augment, seed)
    if suffix == "":
        return st.select_top(pool, scores, budget, descending, base)
    if suffix == "unif":
        groups = train.oracle_labels(pool, purpose="diversity")
    else:
        groups = ctx.clusters.assignment[pool]
    return st.apply_diversity(pool, scores, groups, budget, descending, name)


# --------------------------------------------------------------------------
# run records
# --------------------------------------------------------------------------


@dataclass
class ALRunRecord:
    seed: int
    initial_strategy: str
    cycle_strategy: str
    cycles: list = field(default_factory=list)
    oracle_reads: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def summary_rows(self):
        return [
            {
                "seed": self.seed,
                "initial_strategy": self.initial_strategy,
                "cycle_strategy": self.cycle_strategy,
                "cycle": c["cycle"],
                "n_labeled": c["n_labeled"],
                "accuracy": c["accuracy"],
                "auc": c["auc"],
                "coverage": c["coverage"],
                "entropy": c["entropy"],
            }
            for c in self.cycles
        ]

    def to_jsonl(self, path, include_timing=True):
        meta = {"seed": self.seed, "initial_strategy": self.initial_strategy, "cycle_strategy": self.cycle_strategy}
        with Path(path).open("w") as fh:
            for c in self.cycles:
                rec = dict(meta, **c)
                fh.write(json.dumps(rec) + "\n")
            tail = {"oracle_reads": self.oracle_reads}
            if include_timing:
                tail["wall_time"] = self.wall_time
            fh.write(json.dumps(dict(meta, summary=tail)) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def summary_csv_text(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for rec in records:
        for row in rec.summary_rows():
            w.writerow([_fmt(row[k]) for k in SUMMARY_COLUMNS])
    return buf.getvalue()


def read_summary_csv(path):
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append(
            {
                "seed": int(r["seed"]),
                "initial_strategy": r["initial_strategy"],
                "cycle_strategy": r["cycle_strategy"],
                "cycle": int(r["cycle"]),
                "n_labeled": int(r["n_labeled"]),
                "accuracy": float(r["accuracy"]),
                "auc": float(r["auc"]),
                "coverage": float(r["coverage"]),
                "entropy": float(r["entropy"]),
            }
        )
    return out


# --------------------------------------------------------------------------
# the loop
# --------------------------------------------------------------------------


def _query_seed(seed, cycle):
    return int(derive_stream(seed, f"query/{cycle}").integers(2**63))


def run_active_learning(train, test, initial_strategy, cycle_strategy, schedule: Schedule, cfg: HarnessConfig, seed=0, ctx=None):
    """Simulate one active-learning run.

    Cycle 0 draws ``schedule.initial`` samples with ``initial_strategy``;
    each later cycle retrains on all labels so far and draws
    ``schedule.step`` more with ``cycle_strategy``. Label-free strategies
    select inside an oracle-forbidding block.
    """
    if schedule.initial < 1 or schedule.step < 0 or schedule.cycles < 0:
        raise ScheduleTooLarge("schedule sizes must be positive")
    if schedule.initial + schedule.cycles * schedule.step > train.M:
        raise ScheduleTooLarge(f"schedule needs {schedule.sizes()[-1]} labels but only {train.M} samples exist")
    _split_strategy(initial_strategy)
    _split_strategy(cycle_strategy)
    start = time.perf_counter()
    ctx = ctx or ColdStartContext(train, cfg, seed)
    oracle = train.oracle
    reads_before = len(oracle.reads)
    test_labels = test.oracle_labels(purpose="evaluate")
    C = train.class_count

    record = ALRunRecord(seed, initial_strategy, cycle_strategy)
    labeled = np.array([], dtype=np.int64)
    known = np.array([], dtype=np.int64)
    classifier = None
    for cycle in range(schedule.cycles + 1):
        name = initial_strategy if cycle == 0 else cycle_strategy
        budget = schedule.initial if cycle == 0 else schedule.step
        pool = np.setdiff1d(np.arange(train.M), labeled)
        qseed = _query_seed(seed, cycle)
        reads_at_select = len(oracle.reads)
        if is_label_free(name):
            with oracle.forbid():
                query = select(name, ctx, pool, budget, classifier, labeled, qseed)
        else:
            query = select(name, ctx, pool, budget, classifier, labeled, qseed)
        selection_reads = len(oracle.reads) - reads_at_select
        new = np.asarray(query.selected_ids, dtype=np.int64)
        new_labels = train.oracle_labels(new, purpose="reveal")
        labeled = np.concatenate([labeled, new])
        known = np.concatenate([known, new_labels])

        ccfg = replace(cfg.classifier, seed=int(derive_stream(seed, f"classifier/{cycle}").integers(2**63)))
        encoder = ctx.encoder_or_none()
        classifier = train_classifier(train, labeled, ccfg, init=encoder, labels=known)
        accuracy, auc = evaluate(classifier, test, labels=test_labels)
        coverage = class_coverage(known, C)
        record.cycles.append(
            {
                "cycle": cycle,
                "strategy": name,
                "n_labeled": int(labeled.size),
                "labeled_ids": [int(i) for i in labeled],
                "query_ids": [int(i) for i in new],
                "accuracy": accuracy,
                "auc": auc,
                "coverage": coverage,
                "entropy": selection_entropy(new_labels),
                "degenerate": coverage < 1.0,
                "selection_reads": selection_reads,
            }
        )
    reads = {}
    for purpose, _ in oracle.reads[reads_before:]:
        reads[purpose] = reads.get(purpose, 0) + 1
    record.oracle_reads = reads
    record.wall_time = time.perf_counter() - start
    return record

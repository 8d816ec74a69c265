"""Query-selection strategies.

Every selector returns a :class:`QueryResult` holding exactly ``budget``
distinct ids from the candidate pool. Ties are always broken by the lower
sample id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cartography import DatasetMap
from .contrastive import AugmentSpec, augment
from .datamodel import derive_stream
from .errors import (
    BudgetTooLarge,
    ConfigError,
    DropoutUnavailable,
    IdMismatch,
    UntrainedClassifier,
)

LABEL_FREE = (
    "random",
    "hard-to-contrast",
    "easy-to-contrast",
    "entropy",
    "margin",
    "bald",
    "consistency",
    "coreset",
)
GROUND_TRUTH = ("easy-to-learn", "hard-to-learn")
STRATEGIES = LABEL_FREE + GROUND_TRUTH
MODEL_BASED = ("entropy", "margin", "bald", "consistency")


@dataclass(frozen=True)
class QuerySpec:
    budget: int
    strategy: str
    diversity_groups: np.ndarray | None = None
    mc_passes: int = 10
    augmentations: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")


@dataclass(frozen=True)
class QueryResult:
    selected_ids: np.ndarray
    strategy: str
    budget: int
    scores: np.ndarray | None = None  # aligned with selected_ids
    seed: int | None = None

    def __len__(self):
        return len(self.selected_ids)


def _check_budget(budget, n):
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    if budget > n:
        raise BudgetTooLarge(f"budget {budget} exceeds the {n} available candidates")


def rank_candidates(candidates, scores, descending=False):
    """Candidate ids ordered by score (ascending unless ``descending``), ties by lower id."""
    candidates = np.asarray(candidates, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    key = -scores if descending else scores
    return candidates[np.lexsort((candidates, key))]


def allocate_quotas(group_sizes, budget):
    """Split ``budget`` across groups.

    Each group gets ``budget // G``; the ``budget % G`` largest groups (lower
    id first on equal size) get one more. Groups too small for their quota
    hand the shortfall out one unit at a time, round-robin over groups with
    spare room in descending size order. ``group_sizes`` maps id -> size.
    """
    gids = sorted(group_sizes)
    sizes = {g: int(group_sizes[g]) for g in gids}
    total = sum(sizes.values())
    _check_budget(budget, total)
    by_size = sorted(gids, key=lambda g: (-sizes[g], g))
    base, extra = divmod(budget, len(gids))
    quota = {g: base for g in gids}
    for g in by_size[:extra]:
        quota[g] += 1
    shortfall = 0
    for g in gids:
        if quota[g] > sizes[g]:
            shortfall += quota[g] - sizes[g]
            quota[g] = sizes[g]
    while shortfall:
        for g in by_size:
            if shortfall and quota[g] < sizes[g]:
                quota[g] += 1
                shortfall -= 1
    return quota


def apply_diversity(candidates, scores, groups, budget, descending=False, strategy="diversity"):
    """Budget split evenly over groups; each group's quota is filled by the base ranking."""
    candidates = np.asarray(candidates, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    groups = np.asarray(groups, dtype=np.int64)
    if not (candidates.size == scores.size == groups.size):
        raise IdMismatch("candidates, scores and groups must have equal length")
    _check_budget(budget, candidates.size)
    gids, sizes = np.unique(groups, return_counts=True)
    quota = allocate_quotas(dict(zip(gids.tolist(), sizes.tolist())), budget)
    picked = []
    for g in gids.tolist():
        mask = groups == g
        picked.append(rank_candidates(candidates[mask], scores[mask], descending)[: quota[g]])
    chosen = np.concatenate(picked)
    # report in global rank order
    pos = {c: i for i, c in enumerate(candidates.tolist())}
    idx = np.array([pos[c] for c in chosen.tolist()])
    sel_scores = scores[idx]
    order = np.lexsort((chosen, -sel_scores if descending else sel_scores))
    return QueryResult(chosen[order], strategy, budget, sel_scores[order])


def _cluster_select(dmap, clusters, budget, descending, name, candidates=None):
    assign = clusters.assignment if hasattr(clusters, "assignment") else np.asarray(clusters)
    if len(assign) != len(dmap):
        raise IdMismatch(f"map covers {len(dmap)} samples but clustering covers {len(assign)}")
    if candidates is None:
        candidates = np.asarray(dmap.sample_ids, dtype=np.int64)
        conf, groups = dmap.confidence, assign
    else:
        candidates = np.asarray(candidates, dtype=np.int64)
        conf, groups = dmap.confidence[candidates], np.asarray(assign)[candidates]
    return apply_diversity(candidates, conf, groups, budget, descending, name)


def select_hard_to_contrast(dmap: DatasetMap, clusters, budget, candidates=None) -> QueryResult:
    """Per-cluster lowest-confidence samples, budget split evenly over clusters."""
    return _cluster_select(dmap, clusters, budget, False, "hard-to-contrast", candidates)


def select_easy_to_contrast(dmap: DatasetMap, clusters, budget, candidates=None) -> QueryResult:
    return _cluster_select(dmap, clusters, budget, True, "easy-to-contrast", candidates)


def select_learn_map(dmap: DatasetMap, budget, mode, candidates=None) -> QueryResult:
    """Global top-``budget`` by confidence from a ground-truth map, no quotas."""
    if dmap.source != "learn":
        raise ConfigError("easy/hard-to-learn selection needs a map built from supervised trajectories")
    if mode not in ("easy", "hard"):
        raise ConfigError(f"mode must be 'easy' or 'hard', got {mode!r}")
    if candidates is None:
        candidates = np.asarray(dmap.sample_ids, dtype=np.int64)
    candidates = np.asarray(candidates, dtype=np.int64)
    _check_budget(budget, candidates.size)
    ranked = rank_candidates(candidates, dmap.confidence[candidates], descending=(mode == "easy"))[:budget]
    return QueryResult(ranked, f"{mode}-to-learn", budget, dmap.confidence[ranked])


def select_random(pool, budget, seed) -> QueryResult:
    pool = np.asarray(pool, dtype=np.int64)
    _check_budget(budget, pool.size)
    rng = derive_stream(seed, "query-random")
    return QueryResult(rng.choice(pool, size=budget, replace=False), "random", budget, seed=seed)


def random_scores(pool, seed):
    """Uniform scores for using random selection as the base ranking of the diversity wrapper."""
    return derive_stream(seed, "query-random").random(len(pool))


def select_top(candidates, scores, budget, descending, strategy):
    candidates = np.asarray(candidates, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    _check_budget(budget, candidates.size)
    key = -scores if descending else scores
    order = np.lexsort((candidates, key))[:budget]
    return QueryResult(candidates[order], strategy, budget, scores[order])


# --------------------------------------------------------------------------
# uncertainty scores
# --------------------------------------------------------------------------


def _require_trained(classifier):
    if classifier is None or not getattr(classifier, "fitted", False):
        raise UntrainedClassifier("this strategy needs a fitted classifier")


def entropy(p, axis=-1):
    p = np.asarray(p, dtype=np.float64)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logp, axis=axis)


def score_entropy(classifier, x):
    _require_trained(classifier)
    return entropy(classifier.predict_proba(x))


def margins(p):
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] < 2:
        raise ConfigError("margin needs at least two classes")
    top2 = np.sort(p, axis=-1)[..., -2:]
    return top2[..., 1] - top2[..., 0]


def score_margin(classifier, x):
    _require_trained(classifier)
    return margins(classifier.predict_proba(x))


def bald_from_passes(passes):
    """Mutual information from a (T, n, C) stack of stochastic predictions."""
    passes = np.asarray(passes, dtype=np.float64)
    mi = entropy(passes.mean(axis=0)) - entropy(passes).mean(axis=0)
    return np.maximum(mi, 0.0)


def score_bald(classifier, x, passes=10, seed=0):
    _require_trained(classifier)
    if passes < 2:
        raise ConfigError("BALD needs at least two stochastic passes")
    if not getattr(classifier, "dropout", 0) > 0:
        raise DropoutUnavailable("BALD needs a classifier built with dropout")
    rng = derive_stream(seed, "bald")
    return bald_from_passes([classifier.predict_proba(x, dropout_rng=rng) for _ in range(passes)])


def consistency_from_predictions(preds):
    """Mean over classes of the population variance across an (A, n, C) stack."""
    preds = np.asarray(preds, dtype=np.float64)
    # shifting by the first prediction keeps identical stacks at exactly zero
    return (preds - preds[0]).var(axis=0).mean(axis=-1)


def score_consistency(classifier, x, augmentations=5, spec: AugmentSpec | None = None, seed=0):
    _require_trained(classifier)
    if augmentations < 2:
        raise ConfigError("consistency needs at least two augmentations")
    spec = spec or AugmentSpec()
    rng = derive_stream(seed, "consistency")
    x = np.asarray(x, dtype=np.float64)
    return consistency_from_predictions([classifier.predict_proba(augment(x, spec, rng)) for _ in range(augmentations)])


# --------------------------------------------------------------------------
# coreset
# --------------------------------------------------------------------------


def select_coreset(embeddings, labeled_ids, pool, budget) -> QueryResult:
    """Greedy k-center: repeatedly take the pool point farthest from everything chosen so far."""
    emb = np.asarray(embeddings, dtype=np.float64)
    pool = np.sort(np.asarray(pool, dtype=np.int64))
    _check_budget(budget, pool.size)
    labeled = np.asarray(labeled_ids, dtype=np.int64)
    cand = emb[pool]
    if labeled.size:
        diff = cand[:, None, :] - emb[labeled][None, :, :]
        nearest = np.sqrt(np.einsum("pld,pld->pl", diff, diff)).min(axis=1)
    else:
        nearest = None
    available = np.ones(pool.size, dtype=bool)
    chosen = []
    for _ in range(budget):
        if nearest is None:
            dist = np.linalg.norm(cand - emb.mean(axis=0), axis=1)
        else:
            dist = nearest
        dist = np.where(available, dist, -np.inf)
        pick = int(np.argmax(dist))
        chosen.append(pick)
        available[pick] = False
        d_new = np.linalg.norm(cand - cand[pick], axis=1)
        nearest = d_new if nearest is None else np.minimum(nearest, d_new)
    return QueryResult(pool[chosen], "coreset", budget)


# --------------------------------------------------------------------------
# JSON-lines export
# --------------------------------------------------------------------------


def write_query_jsonl(result: QueryResult, path, seed=None):
    with Path(path).open("w") as fh:
        header = {"strategy": result.strategy, "budget": int(result.budget), "seed": seed if seed is not None else result.seed}
        fh.write(json.dumps(header) + "\n")
        for rank, sid in enumerate(result.selected_ids.tolist()):
            score = None if result.scores is None else float(result.scores[rank])
            fh.write(json.dumps({"id": int(sid), "score": score, "rank": rank}) + "\n")


def read_query_jsonl(path):
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0])
    records = [json.loads(line) for line in lines[1:] if line.strip()]
    ids = np.array([r["id"] for r in sorted(records, key=lambda r: r["rank"])], dtype=np.int64)
    return header, ids

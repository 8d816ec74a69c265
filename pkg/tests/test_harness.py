import json
import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import rankdata

from csal.classifier import Classifier, ClassifierConfig, train_classifier
from csal.contrastive import AugmentSpec, ContrastiveConfig, Encoder
from csal.datamodel import Dataset, derive_stream
from csal.datasources import LongTailSpec, generate_long_tail
from csal.errors import (
    EmptyLabeledSet,
    EmptyTestSet,
    LengthMismatch,
    ScheduleTooLarge,
    ZeroVariance,
)
from csal.harness import (
    ColdStartContext,
    HarnessConfig,
    Schedule,
    class_coverage,
    evaluate,
    macro_auc,
    pearson_r,
    read_summary_csv,
    run_active_learning,
    selection_entropy,
    stratified_split,
    summary_csv_text,
)


def pairwise_auc(scores, positive):
    """Probability that a random positive outranks a random negative, ties counted as one half."""
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


def _two_class_probs(scores):
    s = np.asarray(scores, dtype=np.float64)
    return np.column_stack([1 - s, s])


def test_auc_hand_examples():
    labels = [1, 1, 0, 0]
    assert macro_auc(_two_class_probs([0.9, 0.8, 0.4, 0.3]), labels) == 1.0
    assert macro_auc(_two_class_probs([0.9, 0.4, 0.8, 0.3]), labels) == 0.75


def test_auc_matches_pairwise_oracle_with_ties():
    rng = np.random.default_rng(3)
    probs = rng.dirichlet(np.ones(4), size=60).round(1)
    labels = rng.integers(0, 4, size=60)
    expected = np.mean([pairwise_auc(probs[:, c], labels == c) for c in range(4)])
    assert macro_auc(probs, labels) == pytest.approx(expected, abs=1e-12)


def test_auc_skips_absent_classes_and_is_rank_invariant():
    rng = np.random.default_rng(0)
    probs = rng.random((30, 3))
    labels = rng.integers(0, 2, size=30)  # class 2 absent
    expected = np.mean([pairwise_auc(probs[:, c], labels == c) for c in range(2)])
    assert macro_auc(probs, labels) == pytest.approx(expected)
    assert macro_auc(np.exp(5 * probs), labels) == pytest.approx(macro_auc(probs, labels))


def test_auc_of_uninformative_scores():
    rng = np.random.default_rng(7)
    probs = rng.random((2000, 3))
    labels = rng.integers(0, 3, size=2000)
    assert abs(macro_auc(probs, labels) - 0.5) <= 0.05


class _Fixed:
    def __init__(self, probs):
        self.probs = np.asarray(probs)

    def predict_proba(self, x):
        return self.probs


def test_evaluate_perfect():
    ds = Dataset(np.zeros((3, 1)), [0, 1, 2])
    acc, auc = evaluate(_Fixed(np.eye(3)), ds)
    assert (acc, auc) == (1.0, 1.0)
    with pytest.raises(EmptyTestSet):
        evaluate(_Fixed(np.eye(3)), ds.take([]))


def test_coverage_and_entropy():
    assert class_coverage([0, 0, 3, 3, 7], 10) == pytest.approx(0.3)
    assert class_coverage(list(range(10)), 10) == 1.0
    assert class_coverage([4], 10) == 0.1
    assert selection_entropy([0, 1, 2, 3]) == pytest.approx(math.log(4))
    assert selection_entropy([2, 2, 2]) == 0.0
    assert selection_entropy([0, 0, 1, 2]) == pytest.approx(1.0397, abs=1e-4)


def test_pearson_examples():
    assert pearson_r([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert pearson_r([1, 2, 3], [2, 1, 3]) == pytest.approx(0.5)
    assert pearson_r([1, 2, 3], [-1, -2, -3]) == pytest.approx(-1.0)
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=50), rng.normal(size=50)
    assert pearson_r(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)
    with pytest.raises(ZeroVariance):
        pearson_r([1, 1, 1], [1, 2, 3])
    with pytest.raises(LengthMismatch):
        pearson_r([1, 2], [1, 2, 3])


# --------------------------------------------------------------------------
# classifier
# --------------------------------------------------------------------------


def _separable(n=10, seed=0):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(-2, 0.3, size=(n, 3)), rng.normal(2, 0.3, size=(n, 3))])
    return Dataset(x, [0] * n + [1] * n)


def test_classifier_fits_separable_data():
    ds = _separable()
    clf = train_classifier(ds, ds.ids, ClassifierConfig(epochs=200))
    assert np.mean(clf.predict(ds.features) == ds.oracle_labels()) == 1.0
    p = clf.predict_proba(ds.features)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(p >= 0)


def test_single_class_training_does_not_fail():
    ds = Dataset(np.random.default_rng(0).normal(size=(6, 2)), [1, 1, 1, 0, 2, 2], class_count=3)
    clf = train_classifier(ds, [0, 1, 2], ClassifierConfig(epochs=30))
    p = clf.predict_proba(ds.features)
    assert np.all(p[:, 1] >= 1 / 3)


def test_empty_labeled_set():
    with pytest.raises(EmptyLabeledSet):
        train_classifier(_separable(), [], ClassifierConfig())


def test_encoder_init_without_training_is_probe_on_representation():
    enc = Encoder.initialize(3, (5,), 2, derive_stream(0, "e"))
    ds = _separable()
    cfg = ClassifierConfig(epochs=0, dropout=0.0)
    clf = train_classifier(ds, ds.ids, cfg, init=enc)
    probe = Classifier.initialize(3, 2, cfg, init=enc)
    h = enc.represent(ds.features)
    expected = h @ probe.head[0] + probe.head[1]
    expected = np.exp(expected - expected.max(axis=1, keepdims=True))
    expected /= expected.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(clf.predict_proba(ds.features), expected, atol=1e-12)


def test_training_is_deterministic(tmp_path):
    ds = _separable(12)
    cfg = ClassifierConfig(epochs=20, seed=5)
    a, b = train_classifier(ds, ds.ids, cfg), train_classifier(ds, ds.ids, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.params, b.params))
    a.save(tmp_path / "c.npz")
    back = Classifier.load(tmp_path / "c.npz")
    np.testing.assert_array_equal(back.predict_proba(ds.features), a.predict_proba(ds.features))


# --------------------------------------------------------------------------
# active-learning loop
# --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_bench():
    ds = generate_long_tail(LongTailSpec(class_count=4, samples_per_head=60, imbalance_ratio=4, dim=8, separation=6.0, seed=1))
    train, test = stratified_split(ds, seed=1)
    cfg = HarnessConfig(
        contrastive=ContrastiveConfig(batch_size=32, epochs=4, augment=AugmentSpec(noise_sigma=1.0)),
        classifier=ClassifierConfig(epochs=30),
        clusters=6,
        learn_epochs=5,
    )
    return train, test, cfg


def test_split_is_stratified(small_bench):
    train, test, _ = small_bench
    counts = LongTailSpec(class_count=4, samples_per_head=60, imbalance_ratio=4).class_counts()
    test_counts = np.bincount(test.oracle_labels(purpose="check"), minlength=4)
    assert test_counts.tolist() == [math.floor(0.2 * n + 0.5) for n in counts]
    assert train.M + test.M == sum(counts)
    assert not set(train.origin.tolist()) & set(test.origin.tolist())


def test_schedule_sizes_and_nesting(small_bench):
    train, test, cfg = small_bench
    rec = run_active_learning(train, test, "hard-to-contrast", "random", Schedule(20, 10, 3), cfg, seed=0)
    assert [c["n_labeled"] for c in rec.cycles] == [20, 30, 40, 50]
    for prev, cur in zip(rec.cycles, rec.cycles[1:]):
        assert cur["labeled_ids"][: len(prev["labeled_ids"])] == prev["labeled_ids"]
    final = rec.cycles[-1]["labeled_ids"]
    assert len(set(final)) == len(final)
    for c in rec.cycles:
        assert 0 <= c["accuracy"] <= 1 and 0 <= c["auc"] <= 1 and 0 <= c["coverage"] <= 1
        assert 0 <= c["entropy"] <= math.log(4) + 1e-12
        assert c["degenerate"] == (c["coverage"] < 1)


def test_no_cycles_gives_one_record(small_bench):
    train, test, cfg = small_bench
    rec = run_active_learning(train, test, "random", "random", Schedule(10, 10, 0), cfg, seed=0)
    assert len(rec.cycles) == 1


def test_random_runs_differ_by_seed(small_bench):
    train, test, cfg = small_bench
    a = run_active_learning(train, test, "random", "random", Schedule(10, 5, 2), cfg, seed=0)
    b = run_active_learning(train, test, "random", "random", Schedule(10, 5, 2), cfg, seed=1)
    assert [c["n_labeled"] for c in a.cycles] == [c["n_labeled"] for c in b.cycles]
    assert a.cycles[-1]["labeled_ids"] != b.cycles[-1]["labeled_ids"]


def test_schedule_too_large(small_bench):
    train, test, cfg = small_bench
    with pytest.raises(ScheduleTooLarge):
        run_active_learning(train, test, "random", "random", Schedule(train.M, 1, 1), cfg)


@pytest.mark.parametrize(
    "initial,cycle",
    [
        ("hard-to-contrast", "entropy"),
        ("easy-to-contrast", "margin"),
        ("random", "bald"),
        ("coreset", "consistency"),
        ("entropy+pseudo", "hard-to-contrast"),
    ],
)
def test_label_free_runs_read_only_reveal(small_bench, initial, cycle):
    train, test, cfg = small_bench
    rec = run_active_learning(train, test, initial, cycle, Schedule(8, 4, 2), cfg, seed=3)
    assert set(rec.oracle_reads) <= {"reveal", "evaluate"}


def test_oracle_groups_are_recorded(small_bench):
    train, test, cfg = small_bench
    rec = run_active_learning(train, test, "random+unif", "random", Schedule(8, 4, 0), cfg, seed=0)
    assert rec.oracle_reads.get("diversity") == 1
    assert rec.cycles[0]["coverage"] == 1.0
    rec = run_active_learning(train, test, "easy-to-learn", "random", Schedule(8, 4, 0), cfg, seed=0)
    assert rec.oracle_reads.get("learn-map") == 1


def test_encoder_initialised_probe(small_bench):
    train, test, cfg = small_bench
    cfg = replace(cfg, classifier_init="encoder")
    rec = run_active_learning(train, test, "margin", "bald", Schedule(8, 4, 1), cfg, seed=0)
    assert len(rec.cycles) == 2


def test_run_is_deterministic_and_persists(small_bench, tmp_path):
    train, test, cfg = small_bench
    runs = [
        run_active_learning(train, test, "hard-to-contrast", "entropy", Schedule(10, 5, 2), cfg, seed=4, ctx=ColdStartContext(train, cfg, 4))
        for _ in range(2)
    ]
    assert summary_csv_text(runs[:1]) == summary_csv_text(runs[1:])
    text = summary_csv_text(runs[:1])
    assert text.splitlines()[0] == "seed,initial_strategy,cycle_strategy,cycle,n_labeled,accuracy,auc,coverage,entropy"
    path = tmp_path / "summary.csv"
    path.write_text(text)
    rows = read_summary_csv(path)
    assert [r["accuracy"] for r in rows] == [c["accuracy"] for c in runs[0].cycles]
    runs[0].to_jsonl(tmp_path / "run.jsonl")
    lines = [json.loads(line) for line in (tmp_path / "run.jsonl").read_text().splitlines()]
    assert len(lines) == 4 and "oracle_reads" in lines[-1]["summary"]


def test_rank_statistic_is_scipy_compatible():
    # the AUC relies on average ranks for ties
    assert rankdata([1, 1, 2]).tolist() == [1.5, 1.5, 3.0]

"""Synthetic long-tailed data and ingestion of externally computed files."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import (
    Dataset,
    TrajectoryLog,
    derive_stream,
    read_features_bin,
    read_features_csv,
)
from .errors import DegenerateSpec, FormatError, ProbOutOfRange


@dataclass(frozen=True)
class LongTailSpec:
    class_count: int = 10
    samples_per_head: int = 500
    imbalance_ratio: float = 100.0
    dim: int = 32
    cluster_spread: float = 1.0
    separation: float = 4.0
    seed: int = 0

    def class_counts(self):
        c = self.class_count
        if c < 2:
            raise DegenerateSpec(f"need at least two classes, got {c}")
        if self.imbalance_ratio < 1:
            raise DegenerateSpec(f"imbalance ratio must be >= 1, got {self.imbalance_ratio}")
        counts = [
            int(math.floor(self.samples_per_head * self.imbalance_ratio ** (-k / (c - 1)) + 0.5))
            for k in range(c)
        ]
        if min(counts) < 1:
            raise DegenerateSpec(f"tail class rounds to {min(counts)} samples: {counts}")
        return counts


def _class_means(spec, rng):
    c, d, s = spec.class_count, spec.dim, spec.separation
    if d >= c:
        # scaled basis vectors are pairwise s apart; rotate them at random
        q, r = np.linalg.qr(rng.standard_normal((d, d)))
        q = q * np.sign(np.diag(r))
        frame = np.zeros((c, d))
        frame[np.arange(c), np.arange(c)] = s / math.sqrt(2.0)
        frame -= frame.mean(axis=0)
        return frame @ q.T
    means = []
    for _ in range(100_000):
        cand = rng.standard_normal(d)
        cand *= s / np.linalg.norm(cand)
        if all(np.linalg.norm(cand - m) >= s for m in means):
            means.append(cand)
            if len(means) == c:
                return np.array(means)
    raise DegenerateSpec(f"could not place {c} means {s} apart in {d} dimensions")


def generate_long_tail(spec: LongTailSpec) -> Dataset:
    if spec.dim < 1:
        raise DegenerateSpec(f"dimension must be >= 1, got {spec.dim}")
    if spec.cluster_spread <= 0 or spec.separation <= 0:
        raise DegenerateSpec("cluster_spread and separation must be positive")
    counts = spec.class_counts()
    means = _class_means(spec, derive_stream(spec.seed, "means"))
    noise = derive_stream(spec.seed, "noise")
    blocks = [means[k] + spec.cluster_spread * noise.standard_normal((n, spec.dim)) for k, n in enumerate(counts)]
    features = np.vstack(blocks)
    labels = np.repeat(np.arange(spec.class_count), counts)
    order = derive_stream(spec.seed, "shuffle").permutation(labels.size)
    return Dataset(features[order], labels[order], spec.class_count)


def class_means(spec: LongTailSpec):
    """The class means :func:`generate_long_tail` uses for ``spec``."""
    return _class_means(spec, derive_stream(spec.seed, "means"))


def ingest_embeddings(path, format=None, class_count=None) -> Dataset:
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "bin"
    if format == "csv":
        ds, _ = read_features_csv(path, class_count)
    elif format == "bin":
        ds, _ = read_features_bin(path, class_count)
    else:
        raise FormatError(f"unknown embedding format {format!r}")
    return ds


def ingest_trajectory(path) -> TrajectoryLog:
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: line 1: empty file") from None
    if len(header) < 2 or header[0] != "id" or header[1:] != [f"e{e}" for e in range(len(header) - 1)]:
        raise FormatError(f"{path}: line 1: header must be id,e0,...,e(E-1)")
    width = len(header) - 1
    rows = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) - 1 != width:
            raise FormatError(f"{path}: line {lineno}: expected {width} epochs, got {len(row) - 1}")
        try:
            sid = int(row[0])
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise FormatError(f"{path}: line {lineno}: {exc}") from None
        if any(not (0.0 <= v <= 1.0) for v in vals):
            raise ProbOutOfRange(f"{path}: line {lineno}: probability outside [0, 1]")
        if sid in rows:
            raise FormatError(f"{path}: line {lineno}: duplicate id {sid}")
        rows[sid] = vals
    if not rows:
        raise FormatError(f"{path}: line 2: no data rows")
    if sorted(rows) != list(range(len(rows))):
        raise FormatError(f"{path}: ids must be dense 0..{len(rows) - 1}")
    probs = np.array([rows[i] for i in range(len(rows))], dtype=np.float64)
    return TrajectoryLog(probs, np.ones_like(probs, dtype=np.int64))

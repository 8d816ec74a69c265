"""Dataset Maps: per-sample confidence and variability of a probability trajectory."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import TrajectoryLog
from .errors import ConfigError, MissingLabels

SOURCES = ("contrast", "learn")


@dataclass(frozen=True)
class DatasetMap:
    sample_ids: np.ndarray
    confidence: np.ndarray
    variability: np.ndarray
    source: str

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")

    def __len__(self):
        return len(self.sample_ids)


def build_map(log: TrajectoryLog, source="contrast") -> DatasetMap:
    probs = log.probs
    confidence = probs.mean(axis=1)
    variability = probs.std(axis=1)
    # exact values for flat trajectories; the float mean can be off by an ulp
    flat = np.all(probs == probs[:, :1], axis=1)
    confidence[flat] = probs[flat, 0]
    variability[flat] = 0.0
    return DatasetMap(
        np.arange(log.M, dtype=np.int64),
        np.clip(confidence, 0.0, 1.0),
        np.clip(variability, 0.0, 0.5),
        source,
    )


def supervised_trajectory(dataset, classifier_cfg, init=None) -> TrajectoryLog:
    """Train the probe classifier on every label and log p(true class) after each epoch."""
    from .classifier import train_classifier

    if classifier_cfg.epochs < 1:
        raise ConfigError("supervised trajectory needs at least one training epoch")
    if not dataset.has_labels:
        raise MissingLabels("supervised trajectories need ground-truth labels")
    labels = dataset.oracle_labels(purpose="learn-map")
    x = dataset.features
    rows = np.arange(dataset.M)
    per_epoch = []

    def log_epoch(epoch, clf):
        per_epoch.append(clf.predict_proba(x)[rows, labels])

    train_classifier(dataset, dataset.ids, classifier_cfg, init=init, labels=labels, on_epoch=log_epoch, early_stop=False)
    probs = np.column_stack(per_epoch)
    return TrajectoryLog(np.clip(probs, 0.0, 1.0), np.ones_like(probs, dtype=np.int64))


def pca_2d(embeddings):
    """Project onto the top two principal axes; degenerate inputs map to zeros.

    Each axis is signed so its largest-magnitude loading is positive.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    out = np.zeros((x.shape[0], 2))
    centred = x - x.mean(axis=0)
    if x.shape[0] < 2 or not np.any(np.abs(centred) > 1e-12 * max(1.0, np.abs(x).max())):
        return out
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    for k in range(min(2, vt.shape[0])):
        if s[k] <= 1e-12 * s[0]:
            break
        axis = vt[k]
        axis = axis * np.sign(axis[np.argmax(np.abs(axis))])
        out[:, k] = centred @ axis
    return out


def export_map(dmap: DatasetMap, embeddings, path, clusters=None, labels=None):
    """Write ``id,confidence,variability,pc1,pc2,cluster[,label]``.

    ``clusters`` and ``labels`` are optional per-sample arrays; a missing
    cluster column is written as -1.
    """
    pcs = pca_2d(embeddings)
    cluster_col = np.full(len(dmap), -1) if clusters is None else np.asarray(clusters)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["id", "confidence", "variability", "pc1", "pc2", "cluster"]
        if labels is not None:
            header.append("label")
        w.writerow(header)
        for m in range(len(dmap)):
            row = [
                int(dmap.sample_ids[m]),
                repr(float(dmap.confidence[m])),
                repr(float(dmap.variability[m])),
                repr(float(pcs[m, 0])),
                repr(float(pcs[m, 1])),
                int(cluster_col[m]),
            ]
            if labels is not None:
                row.append(int(labels[m]))
            w.writerow(row)


def read_map_csv(path, source="contrast"):
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    return DatasetMap(
        np.array([int(r["id"]) for r in rows], dtype=np.int64),
        np.array([float(r["confidence"]) for r in rows]),
        np.array([float(r["variability"]) for r in rows]),
        source,
    )

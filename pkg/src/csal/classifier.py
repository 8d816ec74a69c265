"""Probe classifier used for evaluation, uncertainty scoring and supervised maps.

An MLP trunk (one ReLU layer by default, or a copy of a pretrained
encoder's representation network) followed by dropout and a linear
softmax head, trained with minibatch SGD on cross-entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .datamodel import derive_stream
from .errors import ConfigError, EmptyLabeledSet, FormatError


@dataclass(frozen=True)
class ClassifierConfig:
    hidden: int = 64
    dropout: float = 0.2
    epochs: int = 200
    learning_rate: float = 0.05
    batch_size: int = 16
    patience: int = 20
    val_fraction: float = 0.2
    min_val_labels: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1:
            raise ConfigError("hidden width must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")


class Classifier:
    def __init__(self, trunk, head, dropout=0.0, fitted=False):
        self.trunk = [np.asarray(a, dtype=np.float64) for a in trunk]
        self.head = [np.asarray(a, dtype=np.float64) for a in head]
        self.dropout = float(dropout)
        self.fitted = fitted

    @classmethod
    def initialize(cls, input_dim, class_count, cfg, init=None, rng=None):
        rng = rng if rng is not None else derive_stream(cfg.seed, "classifier-init")
        if init is not None:
            if init.input_dim != input_dim:
                raise ConfigError(f"encoder expects {init.input_dim} inputs, data has {input_dim}")
            trunk = [a.copy() for a in init.f_params]
        else:
            trunk = nn.init_dense([input_dim, cfg.hidden], rng)
        width = trunk[-1].shape[0]
        return cls(trunk, nn.init_dense([width, class_count], rng), cfg.dropout)

    @property
    def class_count(self):
        return self.head[0].shape[1]

    @property
    def params(self):
        return self.trunk + self.head

    def _forward(self, x, dropout_rng=None):
        h, cache = nn.forward(self.trunk, np.asarray(x, dtype=np.float64), relu_last=True)
        mask = None
        if dropout_rng is not None and self.dropout > 0:
            keep = 1.0 - self.dropout
            mask = (dropout_rng.random(h.shape) < keep) / keep
            h = h * mask
        logits = h @ self.head[0] + self.head[1]
        return logits, h, cache, mask

    def predict_proba(self, x, dropout_rng=None):
        """Softmax outputs; passing ``dropout_rng`` keeps dropout active (MC sampling)."""
        logits, *_ = self._forward(x, dropout_rng)
        return nn.softmax(logits)

    def predict(self, x):
        return np.argmax(self.predict_proba(x), axis=1)

    def loss_and_grads(self, x, y, dropout_rng=None):
        logits, h, cache, mask = self._forward(x, dropout_rng)
        p = nn.softmax(logits)
        n = x.shape[0]
        rows = np.arange(n)
        loss = float(-np.mean(np.log(np.maximum(p[rows, y], 1e-300))))
        d_logits = p.copy()
        d_logits[rows, y] -= 1.0
        d_logits /= n
        head_grads = [h.T @ d_logits, d_logits.sum(axis=0)]
        d_h = d_logits @ self.head[0].T
        if mask is not None:
            d_h = d_h * mask
        trunk_grads, _ = nn.backward(self.trunk, cache, d_h, relu_last=True)
        return loss, trunk_grads + head_grads

    def copy(self):
        return Classifier([a.copy() for a in self.trunk], [a.copy() for a in self.head], self.dropout, self.fitted)

    def save(self, path):
        arrays = {f"t{k}": a for k, a in enumerate(self.trunk)}
        arrays.update({"w": self.head[0], "b": self.head[1], "dropout": np.array(self.dropout)})
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            if "w" not in data.files:
                raise FormatError(f"{path}: not a classifier archive")
            trunk = [data[f"t{k}"] for k in range(sum(1 for n in data.files if n.startswith("t")))]
            return cls(trunk, [data["w"], data["b"]], float(data["dropout"]), fitted=True)


def cold_start_classifier(input_dim, class_count, cfg, encoder=None, seed=0):
    """Classifier for scoring before any label exists.

    The trunk is the pretrained encoder (when given) and the head is freshly
    initialized; it is marked fitted so uncertainty strategies can score
    with it, which is how they behave in a cold start.
    """
    clf = Classifier.initialize(input_dim, class_count, cfg, init=encoder, rng=derive_stream(seed, "cold-start-head"))
    clf.fitted = True
    return clf


def _validation_split(n, cfg, rng):
    n_val = int(math.floor(cfg.val_fraction * n + 0.5))
    order = rng.permutation(n)
    return order[n_val:], order[:n_val]


def train_classifier(dataset, labeled_ids, cfg: ClassifierConfig, init=None, labels=None, on_epoch=None, early_stop=True):
    """Fit a probe on ``labeled_ids``.

    ``labels`` (aligned with ``labeled_ids``) avoids a second oracle read
    when the caller already holds them. With at least ``min_val_labels``
    labels, a fixed validation split drives early stopping and the best
    validation weights are restored.
    """
    ids = np.asarray(labeled_ids, dtype=np.int64)
    if ids.size == 0:
        raise EmptyLabeledSet("cannot train on an empty labeled set")
    if labels is None:
        labels = dataset.oracle_labels(ids, purpose="train")
    y = np.asarray(labels, dtype=np.int64)
    x = dataset.features[ids].astype(np.float64)
    clf = Classifier.initialize(dataset.D, dataset.class_count, cfg, init=init)
    clf.fitted = True

    split_rng = derive_stream(cfg.seed, "val-split")
    order_rng = derive_stream(cfg.seed, "classifier-order")
    drop_rng = derive_stream(cfg.seed, "classifier-dropout")
    use_val = early_stop and ids.size >= cfg.min_val_labels
    if use_val:
        tr, va = _validation_split(ids.size, cfg, split_rng)
    else:
        tr, va = np.arange(ids.size), np.array([], dtype=np.int64)

    best_loss, best_params, stale = math.inf, None, 0
    params = clf.params
    for epoch in range(cfg.epochs):
        perm = tr[order_rng.permutation(tr.size)]
        for start in range(0, perm.size, cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            _, grads = clf.loss_and_grads(x[batch], y[batch], drop_rng)
            for p, g in zip(params, grads):
                p -= cfg.learning_rate * g
        if on_epoch is not None:
            on_epoch(epoch, clf)
        if use_val:
            val_loss, _ = clf.loss_and_grads(x[va], y[va])
            if val_loss < best_loss - 1e-12:
                best_loss, best_params, stale = val_loss, [p.copy() for p in params], 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    if best_params is not None:
        for p, b in zip(params, best_params):
            p[...] = b
    return clf

"""Instance-discrimination pretraining with per-sample probability logging.

A batch of N samples becomes 2N views laid out so that rows ``2n`` and
``2n + 1`` (0-indexed) are the two augmented views of sample ``n``. Each
view's positive is therefore ``i ^ 1``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import nn
from .datamodel import Dataset, TrajectoryLog, derive_stream
from .errors import ConfigError, FormatError, NonFiniteLoss, ZeroVector


@dataclass(frozen=True)
class AugmentSpec:
    noise_sigma: float = 0.0
    mask_prob: float = 0.0
    scale_jitter: float = 0.0

    def __post_init__(self):
        if self.noise_sigma < 0 or self.scale_jitter < 0:
            raise ConfigError("noise_sigma and scale_jitter must be >= 0")
        if not 0 <= self.mask_prob < 1:
            raise ConfigError("mask_prob must lie in [0, 1)")


@dataclass(frozen=True)
class ContrastiveConfig:
    batch_size: int = 64
    epochs: int = 30
    temperature: float = 0.05
    learning_rate: float = 0.05
    encoder_hidden: tuple = (64, 64)
    projection_dim: int = 32
    repeat_factor: int = 1
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.projection_dim < 2:
            raise ConfigError("projection_dim must be >= 2")
        if self.repeat_factor < 1:
            raise ConfigError("repeat_factor must be >= 1")
        if not self.encoder_hidden or any(int(w) < 1 for w in self.encoder_hidden):
            raise ConfigError("encoder_hidden needs at least one positive width")


# --------------------------------------------------------------------------
# probabilities and loss
# --------------------------------------------------------------------------


def cosine_similarity(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _unit_rows(z):
    z = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0):
        raise ZeroVector(f"projection row {int(np.argmin(norms))} is the zero vector")
    return z / norms[:, None], norms


def pair_probabilities(projections, temperature):
    """Softmax over cosine similarities with every other view (2N x 2N, zero diagonal).

    The temperature divides the similarity inside the exponent.
    """
    if not temperature > 0:
        raise ConfigError("temperature must be > 0")
    zhat, _ = _unit_rows(projections)
    logits = (zhat @ zhat.T) / temperature
    np.fill_diagonal(logits, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def positive_pair_probability(p, n):
    """Symmetrized positive-pair probability of the batch's ``n``-th sample (0-indexed)."""
    p = np.asarray(p)
    if not 0 <= n < p.shape[0] // 2:
        raise IndexError(f"sample index {n} outside batch of {p.shape[0] // 2}")
    return 0.5 * (p[2 * n, 2 * n + 1] + p[2 * n + 1, 2 * n])


def positive_pair_probabilities(p):
    """Vector form of :func:`positive_pair_probability` for every sample in the batch."""
    idx = np.arange(0, p.shape[0], 2)
    return 0.5 * (p[idx, idx + 1] + p[idx + 1, idx])


def info_nce_loss(p):
    p = np.asarray(p)
    rows = np.arange(p.shape[0])
    pos = p[rows, rows ^ 1]
    return float(-np.mean(np.log(np.maximum(pos, 1e-12))))


# --------------------------------------------------------------------------
# encoder
# --------------------------------------------------------------------------


class Encoder:
    """Representation network ``f`` (ReLU after every layer) and projection head ``g``.

    ``g`` is Linear(H, H) -> ReLU -> Linear(H, P).
    """

    def __init__(self, f_params, g_params):
        self.f_params = [np.asarray(a, dtype=np.float64) for a in f_params]
        self.g_params = [np.asarray(a, dtype=np.float64) for a in g_params]

    @classmethod
    def initialize(cls, input_dim, hidden, projection_dim, rng):
        widths = [int(input_dim)] + [int(w) for w in hidden]
        h = widths[-1]
        return cls(nn.init_dense(widths, rng), nn.init_dense([h, h, int(projection_dim)], rng))

    @property
    def params(self):
        return self.f_params + self.g_params

    @property
    def input_dim(self):
        return self.f_params[0].shape[0]

    @property
    def representation_dim(self):
        return self.f_params[-1].shape[0]

    @property
    def projection_dim(self):
        return self.g_params[-1].shape[0]

    def parameter_count(self):
        return sum(a.size for a in self.params)

    def represent(self, x):
        h, _ = nn.forward(self.f_params, np.asarray(x, dtype=np.float64), relu_last=True)
        return h

    def project(self, x):
        z, _ = nn.forward(self.g_params, self.represent(x), relu_last=False)
        return z

    def loss_and_grads(self, views, temperature):
        """InfoNCE loss, pair-probability matrix and parameter gradients for one batch of views."""
        views = np.asarray(views, dtype=np.float64)
        h, f_cache = nn.forward(self.f_params, views, relu_last=True)
        z, g_cache = nn.forward(self.g_params, h, relu_last=False)
        p = pair_probabilities(z, temperature)
        loss = info_nce_loss(p)

        two_n = views.shape[0]
        rows = np.arange(two_n)
        d_sim = p.copy()
        d_sim[rows, rows ^ 1] -= 1.0
        np.fill_diagonal(d_sim, 0.0)
        d_sim /= temperature * two_n
        zhat, norms = _unit_rows(z)
        d_zhat = (d_sim + d_sim.T) @ zhat
        d_z = (d_zhat - zhat * np.sum(d_zhat * zhat, axis=1, keepdims=True)) / norms[:, None]

        g_grads, d_h = nn.backward(self.g_params, g_cache, d_z, relu_last=False)
        f_grads, _ = nn.backward(self.f_params, f_cache, d_h, relu_last=True)
        return loss, p, f_grads + g_grads

    def copy(self):
        return Encoder([a.copy() for a in self.f_params], [a.copy() for a in self.g_params])

    def save(self, path):
        arrays = {f"f{k}": a for k, a in enumerate(self.f_params)}
        arrays.update({f"g{k}": a for k, a in enumerate(self.g_params)})
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            f = [data[f"f{k}"] for k in range(sum(1 for n in data.files if n.startswith("f")))]
            g = [data[f"g{k}"] for k in range(sum(1 for n in data.files if n.startswith("g")))]
        if not f or not g:
            raise FormatError(f"{path}: not an encoder archive")
        return cls(f, g)


# --------------------------------------------------------------------------
# augmentation and batching
# --------------------------------------------------------------------------


def augment(x, spec, rng):
    """One random view of every row of ``x``; parameters equal to zero draw nothing."""
    out = np.array(x, dtype=np.float64, copy=True)
    if spec.scale_jitter > 0:
        j = spec.scale_jitter
        out *= rng.uniform(1.0 - j, 1.0 + j, size=(out.shape[0], 1))
    if spec.mask_prob > 0:
        out *= rng.random(out.shape) >= spec.mask_prob
    if spec.noise_sigma > 0:
        out += spec.noise_sigma * rng.standard_normal(out.shape)
    return out


def epoch_batches(rng, m, batch_size, repeat_factor=1):
    """Shuffle ``repeat_factor`` copies of ``range(m)`` and cut them into minibatches.

    A trailing batch of a single sample is merged into the previous one.
    """
    order = rng.permutation(np.tile(np.arange(m), repeat_factor))
    batches = [order[i : i + batch_size] for i in range(0, order.size, batch_size)]
    if len(batches) > 1 and batches[-1].size < 2:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def interleave_views(v1, v2):
    views = np.empty((2 * v1.shape[0], v1.shape[1]), dtype=np.float64)
    views[0::2] = v1
    views[1::2] = v2
    return views


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


class PretrainResult(NamedTuple):
    encoder: Encoder
    trajectory: TrajectoryLog
    embeddings: np.ndarray
    curve: list


def pretrain(dataset: Dataset, cfg: ContrastiveConfig) -> PretrainResult:
    """Train the encoder by instance discrimination and log positive-pair probabilities.

    Each epoch visits every sample ``repeat_factor`` times. Within an
    epoch, repeated occurrences of a sample are averaged into one entry.
    Probabilities are those of the parameters in effect when the batch is
    scored (before that batch's update).
    """
    m = dataset.M
    if m < 2 or cfg.batch_size > m * cfg.repeat_factor:
        raise ConfigError(
            f"batch_size {cfg.batch_size} exceeds {m} samples x repeat_factor {cfg.repeat_factor}"
        )
    x = dataset.features.astype(np.float64)
    encoder = Encoder.initialize(dataset.D, cfg.encoder_hidden, cfg.projection_dim, derive_stream(cfg.seed, "init"))
    order_rng = derive_stream(cfg.seed, "batch-order")
    aug_rng = derive_stream(cfg.seed, "augment")

    sums = np.zeros((m, cfg.epochs))
    counts = np.zeros((m, cfg.epochs), dtype=np.int64)
    curve = []
    params = encoder.params
    for epoch in range(cfg.epochs):
        losses, weights, pos_probs = [], [], []
        for b, batch in enumerate(epoch_batches(order_rng, m, cfg.batch_size, cfg.repeat_factor)):
            xb = x[batch]
            views = interleave_views(augment(xb, cfg.augment, aug_rng), augment(xb, cfg.augment, aug_rng))
            loss, p, grads = encoder.loss_and_grads(views, cfg.temperature)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise NonFiniteLoss(epoch, b, loss)
            pp = positive_pair_probabilities(p)
            np.add.at(sums[:, epoch], batch, pp)
            np.add.at(counts[:, epoch], batch, 1)
            losses.append(loss)
            weights.append(batch.size)
            pos_probs.append(pp)
            if cfg.learning_rate > 0:
                for param, grad in zip(params, grads):
                    param -= cfg.learning_rate * grad
        curve.append(
            (
                epoch,
                float(np.average(losses, weights=weights)),
                float(np.mean(np.concatenate(pos_probs))),
            )
        )
    probs = np.clip(sums / counts, 0.0, 1.0)
    trajectory = TrajectoryLog(probs, counts)
    return PretrainResult(encoder, trajectory, encoder.represent(x), curve)


def write_curve_csv(curve, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss", "mean_positive_prob"])
        for epoch, loss, prob in curve:
            w.writerow([epoch, repr(loss), repr(prob)])

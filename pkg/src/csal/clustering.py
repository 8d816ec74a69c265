"""Seeded k-means (k-means++ start, Lloyd iterations) over encoder representations."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import derive_stream
from .errors import FormatError, KTooLarge, NonFinitePoints

DEFAULT_K = 30


@dataclass(frozen=True)
class ClusterAssignment:
    K: int
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    iterations_run: int
    inertia_history: tuple = ()

    def sizes(self):
        return np.bincount(self.assignment, minlength=self.K)


def squared_distances(points, centroids):
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("mkd,mkd->mk", diff, diff)


def _kmeans_pp(x, k, rng):
    m = x.shape[0]
    chosen = [int(rng.integers(m))]
    closest = squared_distances(x, x[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(m, p=closest / total))
        else:
            free = np.setdiff1d(np.arange(m), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        closest = np.minimum(closest, squared_distances(x, x[[nxt]])[:, 0])
    return x[chosen].copy()


def _reseed_empty(x, centroids, assign, d2):
    """Move every empty centroid onto the point farthest from its own centroid."""
    own = d2[np.arange(x.shape[0]), assign].copy()
    counts = np.bincount(assign, minlength=centroids.shape[0])
    for k in np.flatnonzero(counts == 0):
        far = int(np.argmax(own))
        centroids[k] = x[far]
        own[far] = -1.0
    return centroids


def _lloyd(x, k, rng, max_iter, tol):
    centroids = _kmeans_pp(x, k, rng)
    rows = np.arange(x.shape[0])
    history = []
    it = 0
    while True:
        d2 = squared_distances(x, centroids)
        assign = np.argmin(d2, axis=1)
        history.append(float(d2[rows, assign].sum()))
        counts = np.bincount(assign, minlength=k)
        if np.any(counts == 0):
            centroids = _reseed_empty(x, centroids, assign, d2)
            it += 1
            if it > max_iter + x.shape[0]:
                raise KTooLarge("could not repair empty clusters")
            continue
        if it >= max_iter:
            break
        new = np.zeros_like(centroids)
        np.add.at(new, assign, x)
        new /= counts[:, None]
        shift = float(np.max(np.abs(new - centroids)))
        centroids = new
        it += 1
        if shift < tol:
            d2 = squared_distances(x, centroids)
            assign = np.argmin(d2, axis=1)
            history.append(float(d2[rows, assign].sum()))
            if np.all(np.bincount(assign, minlength=k) > 0):
                break
            centroids = _reseed_empty(x, centroids, assign, d2)
    return ClusterAssignment(k, centroids, assign.astype(np.int64), history[-1], it, tuple(history))


def kmeans(points, K=DEFAULT_K, seed=0, max_iter=300, tol=1e-8, n_init=1, normalize=False):
    """Cluster ``points`` into ``K`` non-empty groups.

    With ``n_init > 1`` the restart with the lowest inertia wins (earliest
    on ties). Restart 0 draws from stream ``"kmeans"``, restart ``r`` from
    ``"kmeans/r"``.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise NonFinitePoints(f"points must be a non-empty matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFinitePoints("points contain NaN or infinity")
    if normalize:
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        x = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    if not 1 <= K <= x.shape[0]:
        raise KTooLarge(f"K={K} must lie in [1, {x.shape[0]}]")
    if K > np.unique(x, axis=0).shape[0]:
        raise KTooLarge(f"K={K} exceeds the number of distinct points")
    best = None
    for r in range(max(1, n_init)):
        stream = "kmeans" if r == 0 else f"kmeans/{r}"
        result = _lloyd(x, K, derive_stream(seed, stream), max_iter, tol)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def canonicalize(assignment):
    """Relabel clusters by size, largest first; equal sizes keep their id order."""
    labels = np.asarray(assignment, dtype=np.int64)
    ids, counts = np.unique(labels, return_counts=True)
    order = ids[np.lexsort((ids, -counts))]
    mapping = np.empty(ids.max() + 1, dtype=np.int64)
    mapping[order] = np.arange(order.size)
    return mapping[labels]


def pseudo_labels(result: ClusterAssignment, canonical=False):
    groups = np.array(result.assignment, dtype=np.int64)
    return canonicalize(groups) if canonical else groups


def write_assignment_csv(result: ClusterAssignment, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "cluster"])
        for m, k in enumerate(result.assignment):
            w.writerow([m, int(k)])


def read_assignment_csv(path):
    """Return the per-sample cluster vector stored by :func:`write_assignment_csv`."""
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"id", "cluster"}:
        raise FormatError(f"{path}: expected header id,cluster")
    ids = [int(r["id"]) for r in rows]
    if ids != list(range(len(ids))):
        raise FormatError(f"{path}: ids must be dense 0..{len(ids) - 1}")
    return np.array([int(r["cluster"]) for r in rows], dtype=np.int64)

"""Core data types shared by every stage of the pipeline.

Randomness goes through :func:`derive_stream`, which keys a counter-based
Philox generator by ``(seed, hash(stream label))`` so that independent
consumers never share state and results do not depend on call order.

Ground-truth labels live behind :class:`OracleLog`. Any code that needs
labels must call :meth:`Dataset.oracle_labels`, which records the read.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateId,
    FormatError,
    LabelOutOfRange,
    MissingLabels,
    NonFiniteFeature,
    OracleAccessError,
    ProbOutOfRange,
    RaggedRows,
)

MAGIC = b"CSAL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHQQB")


# --------------------------------------------------------------------------
# randomness
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RngSpec:
    seed: int
    stream: str


def _stream_key(stream: str) -> int:
    digest = hashlib.blake2b(stream.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_stream(spec: RngSpec | int, stream: str | None = None) -> np.random.Generator:
    """Return a fresh generator for ``(seed, stream)``.

    Accepts either an :class:`RngSpec` or ``derive_stream(seed, "label")``.
    """
    if not isinstance(spec, RngSpec):
        spec = RngSpec(int(spec), stream)
    seed = int(spec.seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    key = seed | (_stream_key(spec.stream) << 64)
    return np.random.Generator(np.random.Philox(key=key))


# --------------------------------------------------------------------------
# oracle access log
# --------------------------------------------------------------------------


@dataclass
class OracleLog:
    """Records every ground-truth read as ``(purpose, n_labels)``."""

    reads: list = field(default_factory=list)
    _forbidden: int = 0

    def record(self, purpose, n):
        # a blocked attempt is still logged so audits see it
        self.reads.append((purpose, int(n)))
        if self._forbidden:
            raise OracleAccessError(f"oracle read ({purpose}) inside a label-free block")

    @contextlib.contextmanager
    def forbid(self):
        self._forbidden += 1
        try:
            yield self
        finally:
            self._forbidden -= 1

    def count(self, purpose=None):
        return sum(1 for p, _ in self.reads if purpose is None or p == purpose)


# --------------------------------------------------------------------------
# dataset
# --------------------------------------------------------------------------


class Dataset:
    """M samples with features, stable dense ids and optionally hidden labels.

    Instances are immutable: the arrays are flagged read-only. The oracle
    log is the one mutable piece and is shared by every view derived with
    :meth:`take`.
    """

    def __init__(self, features, labels=None, class_count=None, oracle=None, origin=None):
        feats = np.asarray(features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[1] < 1:
            raise RaggedRows(f"features must be an M x D matrix with D >= 1, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            row = int(np.argwhere(~np.isfinite(feats))[0, 0])
            raise NonFiniteFeature(f"non-finite feature in row {row}")
        feats = np.ascontiguousarray(feats)
        feats.setflags(write=False)
        self._features = feats
        m = feats.shape[0]

        if labels is not None:
            lab = np.asarray(labels, dtype=np.int64)
            if lab.shape != (m,):
                raise RaggedRows(f"expected {m} labels, got {lab.shape}")
            if class_count is None:
                class_count = max(2, int(lab.max()) + 1) if m else 2
            if m and (lab.min() < 0 or lab.max() >= class_count):
                raise LabelOutOfRange(f"labels must lie in [0, {class_count})")
            lab.setflags(write=False)
            self._labels = lab
        else:
            self._labels = None
        if class_count is None:
            class_count = 2
        if class_count < 2:
            raise LabelOutOfRange(f"class_count must be >= 2, got {class_count}")
        self.class_count = int(class_count)
        self.oracle = oracle if oracle is not None else OracleLog()
        ids = np.arange(m, dtype=np.int64)
        ids.setflags(write=False)
        self._ids = ids
        if origin is None:
            origin = ids
        origin = np.asarray(origin, dtype=np.int64)
        origin.setflags(write=False)
        self.origin = origin

    @property
    def ids(self):
        return self._ids

    @property
    def features(self):
        return self._features

    @property
    def M(self):
        return self._features.shape[0]

    @property
    def D(self):
        return self._features.shape[1]

    def __len__(self):
        return self.M

    @property
    def has_labels(self):
        return self._labels is not None

    def oracle_labels(self, ids=None, purpose="unspecified"):
        """Return ground-truth labels for ``ids`` (all samples by default), logging the read."""
        if self._labels is None:
            raise MissingLabels("dataset has no ground-truth labels")
        sel = self._labels if ids is None else self._labels[np.asarray(ids, dtype=np.int64)]
        self.oracle.record(purpose, sel.size)
        return sel.copy()

    def take(self, indices):
        """Dense sub-dataset over ``indices``; ``origin`` maps back to the parent's ids."""
        idx = np.asarray(indices, dtype=np.int64)
        labels = None if self._labels is None else self._labels[idx]
        return Dataset(
            self._features[idx],
            labels,
            self.class_count,
            oracle=self.oracle,
            origin=self.origin[idx],
        )

    def same_content(self, other):
        a, b = self._labels, other._labels
        labels_equal = (a is None and b is None) or (
            a is not None and b is not None and np.array_equal(a, b)
        )
        return (
            np.array_equal(self.ids, other.ids)
            and np.array_equal(self.features, other.features)
            and labels_equal
        )

    def __repr__(self):
        return f"Dataset(M={self.M}, D={self.D}, C={self.class_count}, labels={self.has_labels})"


def validate_dataset(raw, class_count=None):
    """Build a :class:`Dataset` from ``(id, features, label_or_None)`` triples.

    Returns ``(dataset, remap)`` where ``remap`` maps every original id to
    its dense id. Labels must be present for all rows or for none.
    """
    remap = {}
    rows = []
    labels = []
    width = None
    for pos, (sid, feats, label) in enumerate(raw):
        if sid in remap:
            raise DuplicateId(f"id {sid!r} appears more than once")
        remap[sid] = pos
        vec = np.asarray(feats, dtype=np.float64).ravel()
        if width is None:
            width = vec.size
        elif vec.size != width:
            raise RaggedRows(f"row {pos} has {vec.size} features, expected {width}")
        if not np.all(np.isfinite(vec)):
            raise NonFiniteFeature(f"non-finite feature in row {pos} (id {sid!r})")
        rows.append(vec)
        labels.append(label)
    if not rows:
        raise RaggedRows("dataset is empty")
    if width < 1:
        raise RaggedRows("rows must have at least one feature")
    present = [lab is not None for lab in labels]
    if any(present) and not all(present):
        raise FormatError("labels must be given for every row or for none")
    lab = None
    if all(present):
        lab = np.asarray([int(x) for x in labels], dtype=np.int64)
        if class_count is not None and (lab.min() < 0 or lab.max() >= class_count):
            raise LabelOutOfRange(f"labels must lie in [0, {class_count})")
        if lab.min() < 0:
            raise LabelOutOfRange("labels must be non-negative")
    features = np.vstack(rows).astype(np.float32)
    if not np.all(np.isfinite(features)):
        raise NonFiniteFeature("feature overflows 32-bit float range")
    return Dataset(features, lab, class_count), remap


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrajectoryLog:
    """Per-sample, per-epoch probability of the sample's target (M x E)."""

    probs: np.ndarray
    occurrences: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] < 1:
            raise FormatError(f"trajectory must be M x E with E >= 1, got {p.shape}")
        if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise ProbOutOfRange("trajectory probabilities must lie in [0, 1]")
        occ = np.asarray(self.occurrences, dtype=np.int64)
        if occ.shape != p.shape:
            raise FormatError("occurrence counts must match the probability matrix shape")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "occurrences", occ)

    @property
    def epochs(self):
        return self.probs.shape[1]

    @property
    def M(self):
        return self.probs.shape[0]


def write_trajectory_csv(log, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"e{e}" for e in range(log.epochs)])
        for m in range(log.M):
            w.writerow([m] + [repr(float(v)) for v in log.probs[m]])


# --------------------------------------------------------------------------
# "features v1" serialization
# --------------------------------------------------------------------------


def _all_labels(ds):
    return ds.oracle_labels(purpose="io") if ds.has_labels else None


def write_features_csv(ds, path):
    labels = _all_labels(ds)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"f{j}" for j in range(ds.D)])
        for m in range(ds.M):
            lab = "" if labels is None else int(labels[m])
            w.writerow([m, lab] + [repr(float(v)) for v in ds.features[m]])


def read_features_csv(path, class_count=None):
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: line 1: empty file") from None
    if len(header) < 3 or header[0] != "id" or header[1] != "label":
        raise FormatError(f"{path}: line 1: header must be id,label,f0,...")
    expected = [f"f{j}" for j in range(len(header) - 2)]
    if header[2:] != expected:
        raise FormatError(f"{path}: line 1: feature columns must be named f0..f{len(expected) - 1}")
    triples = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise FormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            sid = int(row[0])
            label = int(row[1]) if row[1].strip() != "" else None
            feats = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise FormatError(f"{path}: line {lineno}: {exc}") from None
        triples.append((sid, feats, label))
    if not triples:
        raise FormatError(f"{path}: line 2: no data rows")
    try:
        return validate_dataset(triples, class_count)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_features_bin(ds, path):
    labels = _all_labels(ds)
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, ds.M, ds.D, int(labels is not None)))
        fh.write(np.ascontiguousarray(ds.features, dtype="<f4").tobytes())
        if labels is not None:
            fh.write(labels.astype("<u2").tobytes())


def write_matrix_bin(matrix, path):
    """Write a bare feature matrix (no labels) in the binary format."""
    write_features_bin(Dataset(matrix), path)


def read_features_bin(path, class_count=None):
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: byte {len(blob)}: truncated header")
    magic, version, m, d, has_labels = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: byte 0: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: byte 4: unsupported version {version}")
    if has_labels not in (0, 1):
        raise FormatError(f"{path}: byte 22: has_labels must be 0 or 1")
    off = _HEADER.size
    need = off + 4 * m * d + (2 * m if has_labels else 0)
    if len(blob) != need:
        raise FormatError(f"{path}: byte {min(len(blob), need)}: expected {need} bytes, file has {len(blob)}")
    feats = np.frombuffer(blob, dtype="<f4", count=m * d, offset=off).reshape(m, d)
    labels = None
    if has_labels:
        labels = np.frombuffer(blob, dtype="<u2", count=m, offset=off + 4 * m * d).astype(np.int64)
    if m == 0 or d == 0:
        raise FormatError(f"{path}: byte 6: empty matrix ({m} x {d})")
    ds = Dataset(feats.astype(np.float32), labels, class_count)
    return ds, {i: i for i in range(m)}

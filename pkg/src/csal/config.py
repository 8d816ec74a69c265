"""Plain-text ``section.key=value`` run configuration.

Every recognised key, its type and default is listed in :data:`KEYS`.
Unknown keys, malformed lines and invalid values raise :class:`ConfigError`.
Run ``csal config`` to print the resolved configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .classifier import ClassifierConfig
from .contrastive import AugmentSpec, ContrastiveConfig
from .datasources import LongTailSpec
from .errors import ConfigError
from .harness import HarnessConfig, Schedule


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def _names(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _seeds(text):
    """``0-9`` or ``1,4,7`` (ranges inclusive)."""
    out = []
    for part in _names(text):
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


# key -> (parser, default, description)
KEYS = {
    "seed": (int, 0, "base seed for every random stream"),
    # synthetic benchmark
    "data.path": (str, "", "features v1 file (csv or bin); empty means generate the synthetic benchmark"),
    "data.class_count": (int, 10, "number of classes C"),
    "data.samples_per_head": (int, 500, "samples in the largest class"),
    "data.imbalance_ratio": (float, 100.0, "head-to-tail count ratio"),
    "data.dim": (int, 32, "feature dimension D"),
    "data.cluster_spread": (float, 1.0, "per-class standard deviation"),
    "data.separation": (float, 8.0, "minimum distance between class means"),
    "data.test_fraction": (float, 0.2, "stratified test share"),
    # contrastive pretraining
    "contrastive.batch_size": (int, 64, "samples per minibatch N"),
    "contrastive.epochs": (int, 30, "training epochs E"),
    "contrastive.tau": (float, 0.05, "softmax temperature"),
    "contrastive.learning_rate": (float, 0.05, "SGD step size"),
    "contrastive.hidden": (_ints, (64, 64), "representation layer widths"),
    "contrastive.projection_dim": (int, 32, "projection head output size P"),
    "contrastive.repeat_factor": (int, 1, "visits per sample per epoch"),
    "contrastive.noise_sigma": (float, 1.0, "augmentation: additive Gaussian noise"),
    "contrastive.mask_prob": (float, 0.0, "augmentation: coordinate dropout probability"),
    "contrastive.scale_jitter": (float, 0.0, "augmentation: multiplicative jitter half-width"),
    # clustering
    "clustering.k": (int, 30, "number of k-means clusters"),
    "clustering.normalize": (_bool, False, "L2-normalise representations before k-means"),
    "clustering.n_init": (int, 1, "k-means restarts (lowest inertia wins)"),
    # probe classifier
    "classifier.hidden": (int, 64, "hidden width of the probe"),
    "classifier.dropout": (float, 0.2, "dropout rate (needed by bald)"),
    "classifier.epochs": (int, 200, "maximum training epochs"),
    "classifier.learning_rate": (float, 0.05, "SGD step size"),
    "classifier.batch_size": (int, 16, "minibatch size"),
    "classifier.patience": (int, 20, "early-stopping patience in epochs"),
    "classifier.val_fraction": (float, 0.2, "validation share for early stopping"),
    "classifier.min_val_labels": (int, 10, "labels needed before a validation split is used"),
    "classifier.init": (str, "scratch", "probe trunk: scratch or encoder"),
    # strategy parameters
    "strategies.mc_passes": (int, 10, "stochastic passes for bald"),
    "strategies.augmentations": (int, 5, "augmented copies for consistency"),
    "strategies.consistency_noise": (float, 0.5, "noise for consistency augmentations"),
    "strategies.learn_epochs": (int, 30, "epochs of the supervised map for easy/hard-to-learn"),
    # query command
    "query.strategy": (str, "hard-to-contrast", "strategy used by `csal query`"),
    "query.budget": (int, 30, "budget used by `csal query`"),
    # run command
    "run.suite": (str, "custom", "custom (the matrix below) or trend (built-in benchmark suite)"),
    "run.seeds": (_seeds, tuple(range(10)), "seed list, e.g. 0-9 or 1,3,5"),
    "run.initial_strategies": (_names, ("hard-to-contrast", "random"), "strategies for cycle 0"),
    "run.cycle_strategy": (str, "random", "strategy for later cycles"),
    "run.initial": (int, 20, "cycle-0 budget"),
    "run.step": (int, 10, "labels added per later cycle"),
    "run.cycles": (int, 3, "number of later cycles"),
}


def parse_text(text, source="<config>"):
    """Parse ``key=value`` lines into a dict of typed overrides."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def _convert(raw):
    typed = {}
    for key, text in raw.items():
        if key not in KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
        parser = KEYS[key][0]
        try:
            typed[key] = parser(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    return typed


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_overrides(cls, raw=None):
        values = {k: spec[1] for k, spec in KEYS.items()}
        values.update(_convert(raw or {}))
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, overrides=None):
        raw = {}
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
            raw = parse_text(text, str(path))
        raw.update(overrides or {})
        return cls.from_overrides(raw)

    def with_seed(self, seed):
        values = dict(self.values, seed=int(seed))
        return RunConfig(values)

    def validate(self):
        # building every sub-config runs its own checks
        self.contrastive()
        self.harness()
        self.long_tail()
        if self["clustering.k"] < 1:
            raise ConfigError("clustering.k must be >= 1")
        if not 0 < self["data.test_fraction"] < 1:
            raise ConfigError("data.test_fraction must lie in (0, 1)")
        if self["run.suite"] not in ("custom", "trend"):
            raise ConfigError("run.suite must be custom or trend")
        if not self["run.seeds"]:
            raise ConfigError("run.seeds must name at least one seed")
        if self["seed"] < 0 or any(s < 0 for s in self["run.seeds"]):
            raise ConfigError("seeds must be non-negative")
        if self["query.budget"] < 1:
            raise ConfigError("query.budget must be >= 1")

    # ------------------------------------------------------------------
    # typed views
    # ------------------------------------------------------------------

    def long_tail(self, seed=None):
        return LongTailSpec(
            class_count=self["data.class_count"],
            samples_per_head=self["data.samples_per_head"],
            imbalance_ratio=self["data.imbalance_ratio"],
            dim=self["data.dim"],
            cluster_spread=self["data.cluster_spread"],
            separation=self["data.separation"],
            seed=self["seed"] if seed is None else seed,
        )

    def contrastive(self, seed=None):
        return ContrastiveConfig(
            batch_size=self["contrastive.batch_size"],
            epochs=self["contrastive.epochs"],
            temperature=self["contrastive.tau"],
            learning_rate=self["contrastive.learning_rate"],
            encoder_hidden=self["contrastive.hidden"],
            projection_dim=self["contrastive.projection_dim"],
            repeat_factor=self["contrastive.repeat_factor"],
            augment=AugmentSpec(
                noise_sigma=self["contrastive.noise_sigma"],
                mask_prob=self["contrastive.mask_prob"],
                scale_jitter=self["contrastive.scale_jitter"],
            ),
            seed=self["seed"] if seed is None else seed,
        )

    def classifier(self):
        return ClassifierConfig(
            hidden=self["classifier.hidden"],
            dropout=self["classifier.dropout"],
            epochs=self["classifier.epochs"],
            learning_rate=self["classifier.learning_rate"],
            batch_size=self["classifier.batch_size"],
            patience=self["classifier.patience"],
            val_fraction=self["classifier.val_fraction"],
            min_val_labels=self["classifier.min_val_labels"],
            seed=self["seed"],
        )

    def harness(self):
        return HarnessConfig(
            contrastive=self.contrastive(),
            classifier=self.classifier(),
            clusters=self["clustering.k"],
            kmeans_normalize=self["clustering.normalize"],
            kmeans_n_init=self["clustering.n_init"],
            classifier_init=self["classifier.init"],
            mc_passes=self["strategies.mc_passes"],
            augmentations=self["strategies.augmentations"],
            consistency_augment=AugmentSpec(noise_sigma=self["strategies.consistency_noise"]),
            learn_epochs=self["strategies.learn_epochs"],
        )

    def schedule(self):
        return Schedule(self["run.initial"], self["run.step"], self["run.cycles"])

    def to_text(self):
        lines = []
        for key, (_, _, doc) in KEYS.items():
            lines.append(f"# {doc}")
            lines.append(f"{key}={_fmt(self.values[key])}")
        return "\n".join(lines) + "\n"


def merged(cfg: RunConfig, **changes):
    """Copy of ``cfg`` with dotted keys replaced (use ``__`` for dots in keyword names)."""
    values = dict(cfg.values)
    for key, value in changes.items():
        values[key.replace("__", ".")] = value
    out = replace(cfg, values=values)
    out.validate()
    return out

"""Command-line front end.

    csal gen       --out DIR                 write the synthetic benchmark (features.csv)
    csal pretrain  --data FILE --out DIR     encoder, trajectory, embeddings, curve
    csal map       --out DIR                 dataset map from DIR's trajectory
    csal cluster   --out DIR                 k-means over DIR's embeddings
    csal query     --out DIR                 one query with query.strategy / query.budget
    csal run       --out DIR                 seeds x strategies active-learning runs
    csal analyze   RUN_DIR... --out FILE     aggregate summary.csv files
    csal config                              print the resolved configuration

Errors are reported as a single JSON line on stderr and the process exits
with 2 (configuration), 3 (data) or 4 (missing artifact).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import strategies as st
from .analysis import analyze_runs
from .cartography import build_map, export_map, read_map_csv
from .classifier import Classifier, train_classifier
from .clustering import kmeans, read_assignment_csv, write_assignment_csv
from .config import RunConfig
from .contrastive import Encoder, pretrain, write_curve_csv
from .datamodel import TrajectoryLog, write_features_csv, write_matrix_bin, write_trajectory_csv
from .datasources import generate_long_tail, ingest_embeddings, ingest_trajectory
from .errors import BudgetTooLarge, ConfigError, CsalError, MissingArtifact
from .harness import ColdStartContext, is_label_free, select
from .suite import experiments_for, run_suite, write_suite

CONFIG_COPY = "config.txt"


def _artifact(directory, name, hint):
    path = Path(directory) / name
    if not path.exists():
        raise MissingArtifact(f"{path} not found ({hint})")
    return path


def _freeze_config(cfg, out):
    (out / CONFIG_COPY).write_text(cfg.to_text())


def _out_dir(args):
    if args.out is None:
        raise ConfigError("--out is required for this command")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data(cfg, args):
    path = args.data or cfg["data.path"]
    if path:
        if not Path(path).exists():
            raise MissingArtifact(f"data file {path} not found")
        return ingest_embeddings(path, class_count=cfg["data.class_count"])
    return generate_long_tail(cfg.long_tail())


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_gen(cfg, args):
    out = _out_dir(args)
    ds = generate_long_tail(cfg.long_tail())
    write_features_csv(ds, out / "features.csv")
    _freeze_config(cfg, out)
    return {"features": str(out / "features.csv"), "M": ds.M, "D": ds.D}


def cmd_pretrain(cfg, args):
    out = _out_dir(args)
    ds = _data(cfg, args)
    result = pretrain(ds, cfg.contrastive())
    result.encoder.save(out / "encoder.npz")
    write_trajectory_csv(result.trajectory, out / "trajectory.csv")
    write_matrix_bin(result.embeddings, out / "embeddings.bin")
    write_curve_csv(result.curve, out / "curve.csv")
    _freeze_config(cfg, out)
    return {"out": str(out), "M": ds.M, "epochs": result.trajectory.epochs}


def _load_embeddings(directory):
    emb, _ = _read_bin(_artifact(directory, "embeddings.bin", "run `csal pretrain` first"))
    return emb


def _read_bin(path):
    from .datamodel import read_features_bin

    ds, remap = read_features_bin(path)
    return np.asarray(ds.features, dtype=np.float64), remap


def cmd_map(cfg, args):
    out = _out_dir(args)
    log = ingest_trajectory(_artifact(out, "trajectory.csv", "run `csal pretrain` first"))
    dmap = build_map(log, "contrast")
    emb = _load_embeddings(out)
    clusters = None
    if (out / "clusters.csv").exists():
        clusters = read_assignment_csv(out / "clusters.csv")
    labels = None
    if args.data:
        ds = ingest_embeddings(args.data, class_count=cfg["data.class_count"])
        if ds.has_labels:
            labels = ds.oracle_labels(purpose="export")
    export_map(dmap, emb, out / "map.csv", clusters=clusters, labels=labels)
    return {"map": str(out / "map.csv"), "M": len(dmap)}


def cmd_cluster(cfg, args):
    out = _out_dir(args)
    emb = _load_embeddings(out)
    res = kmeans(
        emb,
        cfg["clustering.k"],
        seed=cfg["seed"],
        n_init=cfg["clustering.n_init"],
        normalize=cfg["clustering.normalize"],
    )
    write_assignment_csv(res, out / "clusters.csv")
    return {"clusters": str(out / "clusters.csv"), "K": res.K, "inertia": res.inertia}


class _ArtifactContext:
    """Stand-in for the harness cold-start context that reads files from a directory."""

    def __init__(self, directory, dataset, cfg):
        self.directory = Path(directory)
        self.train = dataset
        self.cfg = cfg

    @property
    def contrast_map(self):
        if (self.directory / "map.csv").exists():
            return read_map_csv(self.directory / "map.csv")
        return build_map(ingest_trajectory(_artifact(self.directory, "trajectory.csv", "needed by map-based strategies")))

    @property
    def clusters(self):
        assign = read_assignment_csv(_artifact(self.directory, "clusters.csv", "run `csal cluster` first"))
        return _Assignment(assign)

    @property
    def pretrained(self):
        return _Pretrained(_load_embeddings(self.directory))

    @property
    def learn_map(self):
        return ColdStartContext(self.train, self.cfg, self.cfg.contrastive.seed).learn_map

    def encoder_or_none(self):
        if self.cfg.classifier_init != "encoder":
            return None
        return Encoder.load(_artifact(self.directory, "encoder.npz", "run `csal pretrain` first"))


class _Assignment:
    def __init__(self, assignment):
        self.assignment = assignment


class _Pretrained:
    def __init__(self, embeddings):
        self.embeddings = embeddings


def cmd_query(cfg, args):
    out = _out_dir(args)
    ds = _data(cfg, args)
    name = cfg["query.strategy"]
    budget = cfg["query.budget"]
    base = name.partition("+")[0]
    classifier = None
    if base in st.MODEL_BASED:
        classifier = Classifier.load(_artifact(out, "classifier.npz", f"{name} scores with a trained classifier"))
    ctx = _ArtifactContext(out, ds, cfg.harness())
    pool = np.arange(ds.M)
    if budget > ds.M:
        raise BudgetTooLarge(f"budget {budget} exceeds the {ds.M} samples")
    if is_label_free(name):
        with ds.oracle.forbid():
            result = select(name, ctx, pool, budget, classifier, (), cfg["seed"])
    else:
        result = select(name, ctx, pool, budget, classifier, (), cfg["seed"])
    path = Path(args.query_out) if args.query_out else out / "query.jsonl"
    st.write_query_jsonl(result, path, seed=cfg["seed"])
    return {"query": str(path), "selected": len(result)}


def cmd_train(cfg, args):
    """Fit the probe on the labels listed in a query file (used before model-based queries)."""
    out = _out_dir(args)
    ds = _data(cfg, args)
    qpath = _artifact(out, "query.jsonl", "run `csal query` first") if not args.labeled else Path(args.labeled)
    _, ids = st.read_query_jsonl(qpath)
    init = None
    if cfg["classifier.init"] == "encoder":
        init = Encoder.load(_artifact(out, "encoder.npz", "classifier.init=encoder needs a pretrained encoder"))
    clf = train_classifier(ds, ids, cfg.classifier(), init=init)
    clf.save(out / "classifier.npz")
    return {"classifier": str(out / "classifier.npz"), "labeled": int(ids.size)}


def cmd_run(cfg, args):
    out = _out_dir(args)
    exps = experiments_for(cfg)
    results = run_suite(cfg, experiments=exps)
    summary = write_suite(results, exps, out)
    _freeze_config(cfg, out)
    return {"summary": str(summary), "runs": len(results)}


def cmd_analyze(cfg, args):
    report = analyze_runs(args.run_dirs)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return {"strategies": len(report["curves"])}


def cmd_config(cfg, args):
    sys.stdout.write(cfg.to_text())
    return None


COMMANDS = {
    "gen": cmd_gen,
    "pretrain": cmd_pretrain,
    "map": cmd_map,
    "cluster": cmd_cluster,
    "query": cmd_query,
    "train": cmd_train,
    "run": cmd_run,
    "analyze": cmd_analyze,
    "config": cmd_config,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="csal", description="Cold-start active learning toolkit")
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one configuration key")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--out", help="output directory (analyze: output file)")
        if name in ("gen", "pretrain", "map", "query", "train"):
            p.add_argument("--data", help="features v1 file (csv or bin)")
        if name == "query":
            p.add_argument("--strategy", help="override query.strategy")
            p.add_argument("--budget", type=int, help="override query.budget")
            p.add_argument("--query-out", help="write the query here instead of DIR/query.jsonl")
        if name == "train":
            p.add_argument("--labeled", help="query file listing the labeled ids (default DIR/query.jsonl)")
        if name == "analyze":
            p.add_argument("run_dirs", nargs="+", help="directories holding summary.csv")
    return parser


def _resolve_config(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "strategy", None):
        overrides["query.strategy"] = args.strategy
    if getattr(args, "budget", None) is not None:
        overrides["query.budget"] = str(args.budget)
    return RunConfig.load(args.config, overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        info = COMMANDS[args.command](cfg, args)
    except CsalError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        print(json.dumps(err), file=sys.stderr)
        return exc.exit_code
    if info is not None:
        print(json.dumps(info))
    return 0


if __name__ == "__main__":
    sys.exit(main())

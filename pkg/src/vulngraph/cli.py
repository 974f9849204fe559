"""Command-line entry point wiring the pipeline stages to the file store.

Subcommands: synth, ingest, split, cluster, build-graph, train, predict,
evaluate, report.  Configuration precedence is flags > `store/config`
file > built-in defaults.  Exit codes: 0 success, 1 usage, 2 data error,
3 missing pipeline stage.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import evaluate as evalmod
from .cluster import export_assignments_csv, model_from_dict
from .errors import (
    DataError,
    MissingStageError,
    ParameterError,
    StoreLockedError,
    VulngraphError,
)
from .evaluate import (
    FittedModels,
    PipelineConfig,
    PRESETS,
    build_train_cases,
    emit_report,
    preset,
    report_from_dict,
    report_to_dict,
    run_permutation,
)
from .features import CategoricalEncoder, export_feature_csv, feature_set
from .graph import (
    PredictionContext,
    graph_from_dicts,
    graph_to_dicts,
    predict,
    train,
)
from .pca import PcaModel
from .records import (
    merge_records,
    parse_cve_feed,
    parse_dpkg_status,
    parse_nvd_feed,
    split_dataset,
)
from .store import Store
from .synth import generate_corpus, write_corpus
from .topics import TopicModel, export_keyword_csv

log = logging.getLogger("vulngraph")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_MISSING_STAGE = 3


@dataclass
class RunConfig:
    seed: int = 42
    feature_set: int = 1
    topic_count: int = 10
    topic_mode: str = "argmax"
    pca_dims: int | None = None  # None means full dimension
    cluster_algo: str = "kmeans"
    k: int = 6
    eps: float = 0.5
    min_pts: int = 5
    epochs: int = 50
    lr: float = 0.1
    threshold: float = 0.9
    depth: int = 2
    window_days: int = 45
    machine_tag: str = "vulnerable"


def _parse_pca_dims(token: str) -> int | None:
    if token == "full":
        return None
    try:
        value = int(token)
    except ValueError:
        raise DataError(f"pca_dims must be 'full' or an integer, got {token!r}") from None
    if value < 1:
        raise DataError("pca_dims must be >= 1")
    return value


_CONFIG_PARSERS = {
    "seed": int,
    "feature_set": int,
    "topic_count": int,
    "topic_mode": str,
    "pca_dims": _parse_pca_dims,
    "cluster_algo": str,
    "k": int,
    "eps": float,
    "min_pts": int,
    "epochs": int,
    "lr": float,
    "threshold": float,
    "depth": int,
    "window_days": int,
    "machine_tag": str,
}

_RANGE_CHECKS = {
    "feature_set": lambda v: 1 <= v <= 7,
    "topic_count": lambda v: v >= 1,
    "topic_mode": lambda v: v in ("argmax", "all_correlations"),
    "cluster_algo": lambda v: v in ("kmeans", "dbscan"),
    "k": lambda v: v >= 1,
    "eps": lambda v: v > 0,
    "min_pts": lambda v: v >= 1,
    "epochs": lambda v: v >= 0,
    "lr": lambda v: v > 0,
    "threshold": lambda v: 0.0 <= v <= 1.0,
    "depth": lambda v: v >= 1,
    "window_days": lambda v: v >= 0,
    "machine_tag": lambda v: v in ("vulnerable", "debian"),
}


def resolve_config(store: Store, args: argparse.Namespace) -> RunConfig:
    """Merge built-in defaults, the store config file, and CLI flags."""
    config = RunConfig()
    file_values = store.read_config_file()
    known = {f.name for f in fields(RunConfig)}
    for key, raw in file_values.items():
        if key not in known:
            raise DataError(f"unknown config key {key!r} in {store.config_path}")
        try:
            setattr(config, key, _CONFIG_PARSERS[key](raw))
        except ValueError as exc:
            raise DataError(f"bad config value for {key}: {exc}") from None
    for key in known:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            if key == "pca_dims":
                flag_value = _parse_pca_dims(flag_value)
            setattr(config, key, flag_value)
    for key, check in _RANGE_CHECKS.items():
        if not check(getattr(config, key)):
            raise DataError(f"config value out of range: {key}={getattr(config, key)!r}")
    return config


def pipeline_config(config: RunConfig) -> PipelineConfig:
    return PipelineConfig(
        seed=config.seed,
        cluster_algo=config.cluster_algo,
        k=config.k,
        eps=config.eps,
        min_pts=config.min_pts,
        lr=config.lr,
        depth=config.depth,
        window_days=config.window_days,
        report_threshold=config.threshold,
    )


# -- model persistence helpers -------------------------------------------------


def save_models(store: Store, models: FittedModels) -> None:
    payload = {
        "feature_set": models.spec.id,
        "topic_mode": models.topic_mode,
        "encoder": models.encoder.to_dict(),
        "topics": None if models.topic_model is None else models.topic_model.to_dict(),
        "pca": None if models.pca_model is None else models.pca_model.to_dict(),
        "cluster": models.cluster_model.to_dict(),
    }
    store.write_json(store.model_dir(models.spec.id) / "models.json", payload)


def load_models(store: Store, fs_id: int) -> FittedModels:
    payload = store.read_json(store.model_dir(fs_id) / "models.json", "cluster")
    return FittedModels(
        spec=feature_set(payload["feature_set"]),
        encoder=CategoricalEncoder.from_dict(payload["encoder"]),
        topic_model=None
        if payload["topics"] is None
        else TopicModel.from_dict(payload["topics"]),
        pca_model=None if payload["pca"] is None else PcaModel.from_dict(payload["pca"]),
        cluster_model=model_from_dict(payload["cluster"]),
        topic_mode=payload["topic_mode"],
    )


def load_split(store: Store, config: RunConfig):
    records = store.read_cves()
    by_id = {r.id: r for r in records}
    parts = store.read_split_ids(config.seed)
    from .records import DatasetSplit

    return records, DatasetSplit(
        populate=[by_id[i] for i in parts["populate"]],
        train=[by_id[i] for i in parts["train"]],
        test=[by_id[i] for i in parts["test"]],
    )


# -- subcommand handlers -----------------------------------------------------------


def cmd_synth(store: Store, args: argparse.Namespace, config: RunConfig) -> int:
    corpus = generate_corpus(
        seed=config.seed,
        n_libraries=args.libraries,
        n_cves=args.cves,
        n_machines=args.machines,
    )
    counts = write_corpus(corpus, args.out)
    print(f"synthetic corpus: {counts['cves']} CVEs, {counts['machines']} machines -> {args.out}")
    return EXIT_OK


def _feed_files(tokens) -> list[Path]:
    files: list[Path] = []
    for token in tokens:
        path = Path(token)
        if path.is_dir():
            found = sorted(path.glob("*.json"))
            if not found:
                raise DataError(f"no feed files under {path}")
            files.extend(found)
        elif path.exists():
            files.append(path)
        else:
            raise DataError(f"CVE feed path {path} does not exist")
    return files


def cmd_ingest(store: Store, args: argparse.Namespace, config: RunConfig) -> int:
    feeds = []
    for feed_file in _feed_files(args.cve or ()):
        try:
            feeds.append(parse_cve_feed(feed_file.read_bytes()))
        except VulngraphError as exc:
            raise DataError(f"{feed_file}: {exc}") from exc
    for feed_file in _feed_files(args.nvd or ()):
        try:
            feeds.append(parse_nvd_feed(feed_file.read_bytes()))
        except VulngraphError as exc:
            raise DataError(f"{feed_file}: {exc}") from exc
    if not feeds:
        raise DataError("nothing to ingest: no feed files given")
    records = merge_records(*feeds)

    inventories = []
    if args.machines:
        machines_dir = Path(args.machines)
        if not machines_dir.is_dir():
            raise DataError(f"machines path {machines_dir} is not a directory")
        for status_file in sorted(machines_dir.glob("*/*.status")):
            tag = status_file.parent.name
            if tag not in ("vulnerable", "debian"):
                raise DataError(f"{status_file}: unknown machine tag {tag!r}")
            inventories.append(
                parse_dpkg_status(
                    status_file.read_text(encoding="utf-8"), status_file.stem, tag
                )
            )

    with store.write_lock():
        store.write_cves(records)
        if inventories:
            store.write_machines(inventories)
    print(f"ingested {len(records)} CVEs, {len(inventories)} machines -> {store.root}")
    return EXIT_OK


def cmd_split(store: Store, args: argparse.Namespace, config: RunConfig) -> int:
    records = store.read_cves()
    split = split_dataset(records, config.seed)
    with store.write_lock():
        store.write_split(config.seed, split.part_ids())
    print(
        f"split seed {config.seed}: populate {len(split.populate)}, "
        f"train {len(split.train)}, test {len(split.test)}"
    )
    return EXIT_OK


def cmd_cluster(store: Store, args: argparse.Namespace, config: RunConfig) -> int:
    records, split = load_split(store, config)
    run_preset = evalmod.PermutationPreset(
        name="cli",
        topic_count=config.topic_count,
        topic_mode=config.topic_mode,
        pca_dims=config.pca_dims,
        epochs=config.epochs,
        machine_tag=config.machine_tag,
    )
    spec = feature_set(config.feature_set)
    fit_records = split.populate + split.train
    models, _ = evalmod.fit_feature_models(
        spec, fit_records, run_preset, pipeline_config(config)
    )
    stored = getattr(models.cluster_model, "assignments", None)
    if stored is None:
        stored = models.cluster_model.labels
    assignments = {r.id: int(stored[i]) for i, r in enumerate(fit_records)}

    with store.write_lock():
        save_models(store, models)
        export_assignments_csv(
            assignments, store.model_dir(config.feature_set) / "assignments.csv"
        )
        export_feature_csv(
            [models.feature_vector(r) for r in fit_records],
            store.model_dir(config.feature_set) / "features.csv",
        )
        if models.topic_model is not None:
            export_keyword_csv(
                models.topic_model, 5, store.model_dir(config.feature_set) / "keywords.csv"
            )
    n_clusters = getattr(models.cluster_model, "k", None) or getattr(
        models.cluster_model, "cluster_count", 0
    )
    print(
        f"clustered {len(fit_records)} CVEs into {n_clusters} clusters "
        f"(feature set {config.feature_set}, {config.cluster_algo})"
    )
    return EXIT_OK


def cmd_build_graph(store: Store, args: argparse.Namespace, config: RunConfig) -> int:
    records, split = load_split(store, config)
    assignments_path = store.model_dir(config.feature_set) / "assignments.csv"
    if not assignments_path.exists():
        raise MissingStageError(
            f"no cluster assignments for feature set {config.feature_set}",
            required_command="cluster",
        )
    assignments = {}
    with open(assignments_path, encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            assignments[row["cve_id"]] = int(row["cluster_id"])
    populate_assignments = {r.id: assignments[r.id] for r in split.populate}

    machines = store.read_machines()
    graph = evalmod.build_graph_for_run(
        split, machines, populate_assignments, config.machine_tag
    )
    nodes, edges = graph_to_dicts(graph)
    with store.write_lock():
        store._write_jsonl(store.graph_dir / "nodes.jsonl", nodes)
        store._write_jsonl(store.graph_dir / "edges.jsonl", edges)
    print(f"graph built: {len(nodes)} nodes, {len(edges)} edges (tag {config.machine_tag})")
    return EXIT_OK


def _load_graph(store: Store):
    nodes_path = store.graph_dir / "nodes.jsonl"
    edges_path = store.graph_dir / "edges.jsonl"
    if not nodes_path.exists() or not edges_path.exists():
        raise MissingStageError("no graph snapshot", required_command="build-graph")
    return graph_from_dicts(store._read_jsonl(nodes_path), store._read_jsonl(edges_path))


def cmd_train(store: Store, args: argparse.Namespace, config: RunConfig) -> int:
    records, split = load_split(store, config)
    graph = _load_graph(store)
    assignments_path = store.model_dir(config.feature_set) / "assignments.csv"
    if not assignments_path.exists():
        raise MissingStageError(
            f"no cluster assignments for feature set {config.feature_set}",
            required_command="cluster",
        )
    assignments = {}
    with open(assignments_path, encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            assignments[row["cve_id"]] = int(row["cluster_id"])

    cases = build_train_cases(split.train, records, config.window_days)
    for case in cases:
        case.input_cluster = assignments.get(case.record.id, -1)
    training = train(graph, cases, epochs=config.epochs, lr=config.lr)

    nodes, edges = graph_to_dicts(graph)
    with store.write_lock():
        store._write_jsonl(store.graph_dir / "nodes.jsonl", nodes)
        store._write_jsonl(store.graph_dir / "edges.jsonl", edges)
        store.write_json(
            store.graph_dir / "train_log.json",
            {
                "epochs": training.epochs,
                "lr": training.lr,
                "case_count": training.case_count,
                "skipped_cases": training.skipped_cases,
                "edge_evaluations": training.edge_evaluations,
                "mean_losses": training.mean_losses,
            },
        )
    print(f"epochs: {training.epochs}")
    print(
        f"trained on {training.case_count} cases "
        f"({training.edge_evaluations} edge evaluations per epoch); "
        f"mean loss {training.mean_losses[0]:.6f} -> {training.mean_losses[-1]:.6f}"
    )
    return EXIT_OK


def cmd_predict(store: Store, args: argparse.Namespace, config: RunConfig) -> int:
    graph = _load_graph(store)
    records = store.read_cves()
    if args.cve:
        by_id = {r.id: r for r in records}
        record = by_id.get(args.cve)
        if record is None:
            raise DataError(f"CVE {args.cve} is not in the store")
        models = load_models(store, config.feature_set)
        ctx = PredictionContext(
            input_cluster=models.cluster_of(record), input_time=record.published
        )
        result = predict(graph, record, config.threshold, config.depth, ctx)
    else:
        # library input has no cluster or timestamp of its own; use the
        # newest stored publication time as the reference point
        latest = max(r.published for r in records)
        ctx = PredictionContext(input_cluster=-1, input_time=latest)
        result = predict(graph, args.library, config.threshold, config.depth, ctx)

    print(f"input: {result.input_id}  threshold: {config.threshold}  depth: {config.depth}")
    print(f"{'library':<24} {'activation':>10} {'depth':>5}")
    for hit in result.hits:
        print(f"{hit.library:<24} {hit.activation:>10.6f} {hit.depth:>5}")
    if not result.hits:
        print("(no libraries exceed the threshold)")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["input_id", "library", "activation", "depth"])
            for hit in result.hits:
                writer.writerow(
                    [result.input_id, hit.library, f"{hit.activation:.12g}", hit.depth]
                )
    return EXIT_OK


def _parse_feature_sets(token: str) -> list[int]:
    try:
        ids = sorted({int(part) for part in token.split(",") if part.strip()})
    except ValueError:
        raise DataError(f"bad feature set list {token!r}") from None
    if not ids or any(i not in range(1, 8) for i in ids):
        raise DataError(f"feature set ids must be within 1..7, got {token!r}")
    return ids


def cmd_evaluate(store: Store, args: argparse.Namespace, config: RunConfig) -> int:
    records, split = load_split(store, config)
    machines = store.read_machines()
    run_preset = preset(args.preset)
    feature_ids = _parse_feature_sets(args.feature_sets)
    pipe = pipeline_config(config)
    report = run_permutation(run_preset, feature_ids, split, records, machines, pipe)

    out_dir = Path(args.out) if args.out else store.report_dir(run_preset.name)
    with store.write_lock():
        store.write_json(out_dir / "report.json", report_to_dict(report))
        written = emit_report(report, out_dir)
    for run in report.runs:
        mean = run.mean_accuracy_at(config.threshold)
        mean_text = "n/a" if mean is None else f"{mean:.4f}"
        print(
            f"permutation {report.permutation} fs {run.feature_set_id}: "
            f"mean acc@{config.threshold:.1f} = {mean_text}, "
            f"cases {run.sweep.evaluated_case_count}, dropped {run.sweep.dropped_count}"
        )
    print(f"best feature set: {report.best_feature_set}; wrote {len(written)} CSVs to {out_dir}")
    return EXIT_OK


def cmd_report(store: Store, args: argparse.Namespace, config: RunConfig) -> int:
    report_path = store.report_dir(args.preset) / "report.json"
    payload = store.read_json(report_path, "evaluate")
    report = report_from_dict(payload)
    out_dir = Path(args.out) if args.out else store.report_dir(args.preset)
    written = emit_report(report, out_dir)
    print(f"re-emitted {len(written)} CSVs to {out_dir}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(parser: argparse.ArgumentParser, *names: str) -> None:
    flags = {
        "seed": ("--seed", int, "RNG seed (default: 42)"),
        "feature_set": ("--feature-set", int, "feature set preset id 1..7 (default: 1)"),
        "topic_count": ("--topic-count", int, "NMF topic count (default: 10)"),
        "topic_mode": ("--topic-mode", str, "argmax | all_correlations (default: argmax)"),
        "pca_dims": ("--pca-dims", str, "'full' or target dimension (default: full)"),
        "cluster_algo": ("--cluster-algo", str, "kmeans | dbscan (default: kmeans)"),
        "k": ("--k", int, "k-means cluster count (default: 6)"),
        "eps": ("--eps", float, "DBSCAN radius (default: 0.5)"),
        "min_pts": ("--min-pts", int, "DBSCAN core threshold (default: 5)"),
        "epochs": ("--epochs", int, "training epochs (default: 50)"),
        "lr": ("--lr", float, "learning rate (default: 0.1)"),
        "threshold": ("--threshold", float, "activation threshold (default: 0.9)"),
        "depth": ("--depth", int, "prediction traversal depth (default: 2)"),
        "window_days": ("--window-days", int, "target window in days (default: 45)"),
        "machine_tag": ("--machine-tag", str, "vulnerable | debian (default: vulnerable)"),
    }
    for name in names:
        flag, type_, help_ = flags[name]
        parser.add_argument(flag, dest=name, type=type_, default=None, help=help_)


def build_parser() -> _Parser:
    parser = _Parser(prog="vulngraph", description=__doc__)
    parser.add_argument(
        "--store", default="store", help="store directory (default: store)"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--libraries", type=int, default=50, help="library count (default: 50)")
    p.add_argument("--cves", type=int, default=200, help="CVE count (default: 200)")
    p.add_argument("--machines", type=int, default=30, help="machine count (default: 30)")
    _add_config_flags(p, "seed")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("ingest", help="parse feeds and machine inventories into the store")
    p.add_argument("--cve", nargs="+", help="feed file(s) or directory (simplified schema)")
    p.add_argument("--nvd", nargs="+", help="NVD 1.1 JSON feed file(s) or directory")
    p.add_argument("--machines", help="directory with <tag>/<machine>.status files")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("split", help="write the populate/train/test split")
    _add_config_flags(p, "seed")
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("cluster", help="fit encoder, topics, PCA and clustering")
    _add_config_flags(
        p, "seed", "feature_set", "topic_count", "topic_mode", "pca_dims",
        "cluster_algo", "k", "eps", "min_pts",
    )
    p.set_defaults(handler=cmd_cluster)

    p = sub.add_parser("build-graph", help="populate the library graph")
    _add_config_flags(p, "seed", "feature_set", "machine_tag")
    p.set_defaults(handler=cmd_build_graph)

    p = sub.add_parser("train", help="train per-edge weights by gradient descent")
    _add_config_flags(p, "seed", "feature_set", "epochs", "lr", "window_days")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", help="predict potentially vulnerable libraries")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--cve", help="input CVE id (must be in the store)")
    group.add_argument("--library", help="input library name")
    p.add_argument("--out", help="also write hits to this CSV file")
    _add_config_flags(p, "seed", "feature_set", "threshold", "depth")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("evaluate", help="run a permutation preset end to end")
    p.add_argument(
        "--preset",
        required=True,
        choices=sorted(PRESETS),
        help="permutation preset name",
    )
    p.add_argument(
        "--feature-sets",
        default="1,2,3,4,5,6,7",
        help="comma-separated feature set ids (default: 1,2,3,4,5,6,7)",
    )
    p.add_argument("--out", help="report directory (default: store/reports/<preset>)")
    _add_config_flags(
        p, "seed", "k", "eps", "min_pts", "cluster_algo", "lr", "threshold",
        "depth", "window_days",
    )
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("report", help="re-emit CSVs from a saved evaluation report")
    p.add_argument("--preset", required=True, help="permutation preset name")
    p.add_argument("--out", help="output directory (default: store/reports/<preset>)")
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    store = Store(args.store)
    try:
        config = resolve_config(store, args)
        return args.handler(store, args, config)
    except MissingStageError as exc:
        log.error("%s", exc)
        return EXIT_MISSING_STAGE
    except (DataError, ParameterError, StoreLockedError, VulngraphError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

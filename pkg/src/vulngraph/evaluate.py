"""Evaluation harness: target windows, accuracy, threshold sweeps, permutations.

A test case pairs an input CVE with the libraries affected by any other
CVE published in the (0, window] day interval after it.  Prediction
accuracy per case is correct hits over all hits; zero-hit cases are
undefined and tallied separately, as are cases whose libraries never made
it into the graph.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import graph as graphmod
from .cluster import assign_cluster, fit_dbscan, fit_kmeans
from .errors import EmptySeedError, ParameterError
from .features import (
    CategoricalEncoder,
    FeatureSetSpec,
    encode_features,
    feature_set,
    fit_encoder,
    tokenize,
)
from .graph import (
    CohesionGraph,
    PredictionContext,
    TrainCase,
    TrainingLog,
    attach_clusters,
    populate_from_cves,
    populate_from_machines,
    predict,
    seed_libraries,
    train,
)
from .pca import PcaModel, apply_pca, fit_pca
from .records import (
    CveRecord,
    DatasetSplit,
    MachineInventory,
    build_cve_index,
    match_vulnerable,
)
from .topics import TopicModel, assign_topic, fit_nmf

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = tuple(round(i / 10, 1) for i in range(10))
DEFAULT_WINDOW_DAYS = 45


@dataclass
class EvalCase:
    record: CveRecord
    target_libs: set[str]
    input_cluster: int = -1


@dataclass(frozen=True)
class PermutationPreset:
    """One named pipeline variant; every field defaults to the base run."""

    name: str
    topic_count: int = 10
    topic_mode: str = "argmax"  # "argmax" | "all_correlations"
    pca_dims: int | None = None  # None = full dimension
    epochs: int = 50
    machine_tag: str = "vulnerable"


PRESETS: dict[str, PermutationPreset] = {
    "default": PermutationPreset("default"),
    "notraining": PermutationPreset("notraining", epochs=0),
    "20topics": PermutationPreset("20topics", topic_count=20),
    "multiple_topics": PermutationPreset("multiple_topics", topic_mode="all_correlations"),
    "1dimension": PermutationPreset("1dimension", pca_dims=1),
    "lessepochs": PermutationPreset("lessepochs", epochs=20),
    "debian": PermutationPreset("debian", machine_tag="debian"),
}


def preset(name: str) -> PermutationPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ParameterError(
            f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}"
        ) from None


# -- case construction -------------------------------------------------------


def _window_targets(
    record: CveRecord, all_cves: list[CveRecord], window_days: int
) -> set[str]:
    targets: set[str] = set()
    for other in all_cves:
        if other.id == record.id:
            continue
        delta = (other.published - record.published).total_seconds() / 86400.0
        if 0.0 < delta <= window_days:
            targets.update(ref.name for ref in other.affected)
    return targets


def build_eval_cases(
    test_cves: list[CveRecord],
    all_cves: list[CveRecord],
    window_days: int = DEFAULT_WINDOW_DAYS,
) -> tuple[list[EvalCase], int]:
    """One case per test CVE that has at least one later-published CVE.

    Returns (cases in input order, count of ineligible CVEs).
    """
    latest = max(r.published for r in all_cves)
    cases: list[EvalCase] = []
    ineligible = 0
    for record in test_cves:
        eligible = record.published < latest or any(
            o.published > record.published for o in all_cves if o.id != record.id
        )
        if not eligible:
            ineligible += 1
            continue
        cases.append(
            EvalCase(record=record, target_libs=_window_targets(record, all_cves, window_days))
        )
    if ineligible:
        log.info("%d test CVEs ineligible (no later CVE exists)", ineligible)
    return cases, ineligible


def build_train_cases(
    train_cves: list[CveRecord],
    all_cves: list[CveRecord],
    window_days: int = DEFAULT_WINDOW_DAYS,
) -> list[TrainCase]:
    """Training cases: eligible train CVEs whose target window is non-empty."""
    cases, _ = build_eval_cases(train_cves, all_cves, window_days)
    return [
        TrainCase(record=c.record, target_libs=c.target_libs)
        for c in cases
        if c.target_libs
    ]


def case_accuracy(prediction, case: EvalCase) -> float | None:
    """Correct hits over all hits; None when the prediction is empty."""
    if not prediction.hits:
        return None
    correct = sum(1 for hit in prediction.hits if hit.library in case.target_libs)
    return correct / len(prediction.hits)


# -- threshold sweep -----------------------------------------------------------


@dataclass
class CaseOutcome:
    cve_id: str
    prediction_count: int
    accuracy: float | None


@dataclass
class ThresholdResult:
    threshold: float
    outcomes: list[CaseOutcome]

    def defined_accuracies(self) -> list[float]:
        return [o.accuracy for o in self.outcomes if o.accuracy is not None]

    def undefined_count(self) -> int:
        return sum(1 for o in self.outcomes if o.accuracy is None)

    def mean_accuracy(self) -> float | None:
        accs = self.defined_accuracies()
        return sum(accs) / len(accs) if accs else None


@dataclass
class SweepResult:
    per_threshold: list[ThresholdResult]
    dropped_count: int
    evaluated_case_count: int


def threshold_sweep(
    graph: CohesionGraph,
    cases: list[EvalCase],
    thresholds=DEFAULT_THRESHOLDS,
    depth: int = 2,
) -> SweepResult:
    """Run every case through predict at every threshold.

    Cases whose libraries are absent from the graph are dropped once, up
    front; zero-hit cases stay in the outcome lists with an undefined
    accuracy.
    """
    usable: list[EvalCase] = []
    dropped = 0
    for case in cases:
        try:
            seed_libraries(graph, case.record)
        except EmptySeedError:
            dropped += 1
            continue
        usable.append(case)

    results = []
    for threshold in thresholds:
        outcomes = []
        for case in usable:
            ctx = PredictionContext(
                input_cluster=case.input_cluster, input_time=case.record.published
            )
            prediction = predict(graph, case.record, threshold, depth, ctx)
            outcomes.append(
                CaseOutcome(
                    cve_id=case.record.id,
                    prediction_count=len(prediction.hits),
                    accuracy=case_accuracy(prediction, case),
                )
            )
        results.append(ThresholdResult(threshold=threshold, outcomes=outcomes))
    return SweepResult(
        per_threshold=results, dropped_count=dropped, evaluated_case_count=len(usable)
    )


# -- full pipeline ---------------------------------------------------------------


@dataclass
class PipelineConfig:
    seed: int = 42
    cluster_algo: str = "kmeans"
    k: int = 6
    eps: float = 0.5
    min_pts: int = 5
    lr: float = 0.1
    depth: int = 2
    window_days: int = DEFAULT_WINDOW_DAYS
    thresholds: tuple = DEFAULT_THRESHOLDS
    report_threshold: float = 0.9
    nmf_max_iter: int = 200
    nmf_tol: float = 1e-4


@dataclass
class FittedModels:
    """Per-feature-set fitted artifacts, reusable for later predictions."""

    spec: FeatureSetSpec
    encoder: CategoricalEncoder
    topic_model: TopicModel | None
    pca_model: PcaModel | None
    cluster_model: object
    topic_mode: str = "argmax"

    def feature_vector(self, record: CveRecord):
        """Named feature vector before any PCA reduction."""
        topic_values = None
        topic_names = None
        if self.topic_model is not None:
            topic_id, correlations = assign_topic(record.description, self.topic_model)
            if self.topic_mode == "all_correlations":
                topic_values = [float(x) for x in correlations]
                topic_names = [f"topic_{i}" for i in range(self.topic_model.k)]
            else:
                topic_values = [topic_id / self.topic_model.k]
                topic_names = ["topic"]
        return encode_features(record, self.spec, self.encoder, topic_values, topic_names)

    def encode_record(self, record: CveRecord) -> np.ndarray:
        values = np.asarray(self.feature_vector(record).values, dtype=np.float64)
        if self.pca_model is not None:
            values = apply_pca(self.pca_model, values)
        return values

    def cluster_of(self, record: CveRecord) -> int:
        return assign_cluster(self.encode_record(record), self.cluster_model)


@dataclass
class FeatureSetRun:
    feature_set_id: int
    sweep: SweepResult
    training: TrainingLog | None
    unit_weights: bool
    graph_nodes: int
    graph_edges: int

    def mean_accuracy_at(self, threshold: float) -> float | None:
        for result in self.sweep.per_threshold:
            if abs(result.threshold - threshold) < 1e-9:
                return result.mean_accuracy()
        return None


@dataclass
class EvaluationReport:
    permutation: str
    seed: int
    report_threshold: float
    runs: list[FeatureSetRun] = field(default_factory=list)
    best_feature_set: int | None = None


def fit_feature_models(
    spec: FeatureSetSpec,
    fit_records: list[CveRecord],
    preset: PermutationPreset,
    config: PipelineConfig,
    topic_cache: dict[int, TopicModel] | None = None,
) -> tuple[FittedModels, np.ndarray]:
    """Fit encoder/topics/PCA/clustering on the populate+train corpus.

    Returns the fitted bundle plus the (possibly reduced) fit matrix whose
    rows align with ``fit_records``.
    """
    encoder = fit_encoder(fit_records, spec)
    topic_model = None
    if spec.use_topic_model:
        if topic_cache is not None and preset.topic_count in topic_cache:
            topic_model = topic_cache[preset.topic_count]
        else:
            corpus = [tokenize(r.description) for r in fit_records]
            topic_model = fit_nmf(
                corpus,
                preset.topic_count,
                config.seed,
                max_iter=config.nmf_max_iter,
                tol=config.nmf_tol,
            )
            if topic_cache is not None:
                topic_cache[preset.topic_count] = topic_model

    models = FittedModels(
        spec=spec,
        encoder=encoder,
        topic_model=topic_model,
        pca_model=None,
        cluster_model=None,
        topic_mode=preset.topic_mode,
    )
    matrix = np.vstack([models.encode_record(r) for r in fit_records])
    if preset.pca_dims is not None:
        models.pca_model = fit_pca(matrix, preset.pca_dims)
        matrix = np.vstack([apply_pca(models.pca_model, row) for row in matrix])

    if config.cluster_algo == "kmeans":
        models.cluster_model = fit_kmeans(matrix, config.k, config.seed)
    elif config.cluster_algo == "dbscan":
        models.cluster_model = fit_dbscan(matrix, config.eps, config.min_pts)
    else:
        raise ParameterError(f"unknown cluster algorithm {config.cluster_algo!r}")
    return models, matrix


def build_graph_for_run(
    split: DatasetSplit,
    machines: list[MachineInventory],
    assignments: dict[str, int],
    machine_tag: str,
) -> CohesionGraph:
    """Population pass: CVE co-occurrence, machine co-presence, cluster hists."""
    graph = CohesionGraph()
    populate_from_cves(graph, split.populate)
    index = build_cve_index(split.populate + split.train)
    matched = [(inv, match_vulnerable(inv, index)) for inv in machines]
    populate_from_machines(graph, matched, tag=machine_tag)
    attach_clusters(graph, assignments, split.populate)
    return graph


def run_feature_set(
    fs_id: int,
    preset: PermutationPreset,
    split: DatasetSplit,
    all_cves: list[CveRecord],
    machines: list[MachineInventory],
    config: PipelineConfig,
    topic_cache: dict[int, TopicModel] | None = None,
) -> tuple[FeatureSetRun, CohesionGraph, FittedModels]:
    spec = feature_set(fs_id)
    fit_records = split.populate + split.train
    models, matrix = fit_feature_models(spec, fit_records, preset, config, topic_cache)

    stored = getattr(models.cluster_model, "assignments", None)
    if stored is None:  # dbscan keeps labels, kmeans keeps assignments
        stored = models.cluster_model.labels
    assignments = {r.id: int(stored[i]) for i, r in enumerate(fit_records)}

    populate_assignments = {r.id: assignments[r.id] for r in split.populate}
    graph = build_graph_for_run(split, machines, populate_assignments, preset.machine_tag)

    training = None
    if preset.epochs > 0:
        train_cases = build_train_cases(split.train, all_cves, config.window_days)
        for case in train_cases:
            case.input_cluster = assignments[case.record.id]
        training = train(graph, train_cases, epochs=preset.epochs, lr=config.lr)

    cases, _ = build_eval_cases(split.test, all_cves, config.window_days)
    for case in cases:
        case.input_cluster = models.cluster_of(case.record)
    sweep = threshold_sweep(graph, cases, config.thresholds, config.depth)

    run = FeatureSetRun(
        feature_set_id=fs_id,
        sweep=sweep,
        training=training,
        unit_weights=graphmod.all_unit_weights(graph),
        graph_nodes=len(graph.nodes),
        graph_edges=len(graph.edges),
    )
    return run, graph, models


def run_permutation(
    preset: PermutationPreset,
    feature_set_ids: list[int],
    split: DatasetSplit,
    all_cves: list[CveRecord],
    machines: list[MachineInventory],
    config: PipelineConfig,
) -> EvaluationReport:
    """Full pipeline per feature set; the best set is picked by mean
    accuracy at the report threshold (ties to the lowest id)."""
    report = EvaluationReport(
        permutation=preset.name, seed=config.seed, report_threshold=config.report_threshold
    )
    topic_cache: dict[int, TopicModel] = {}
    for fs_id in feature_set_ids:
        run, _, _ = run_feature_set(
            fs_id, preset, split, all_cves, machines, config, topic_cache
        )
        report.runs.append(run)
        log.info(
            "permutation %s feature set %d: mean accuracy at %.1f = %s",
            preset.name,
            fs_id,
            config.report_threshold,
            run.mean_accuracy_at(config.report_threshold),
        )
    best, best_acc = None, -1.0
    for run in report.runs:
        acc = run.mean_accuracy_at(config.report_threshold)
        if acc is not None and acc > best_acc:
            best, best_acc = run.feature_set_id, acc
    report.best_feature_set = best if best is not None else feature_set_ids[0]
    return report


# -- report emission ----------------------------------------------------------------


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.12g}"


def _quartiles(values: list[float]) -> list[float] | None:
    if not values:
        return None
    return [float(q) for q in np.percentile(values, [0, 25, 50, 75, 100])]


def emit_report(report: EvaluationReport, out_dir: str | Path) -> list[Path]:
    """Write per-feature-set trend, boxplot-quartile and by-count CSVs."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    written: list[Path] = []
    for run in report.runs:
        suffix = f"{report.permutation}_{run.feature_set_id}"

        trend = out / f"trend_{suffix}.csv"
        with open(trend, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "mean_acc", "case_count"])
            for result in run.sweep.per_threshold:
                accs = result.defined_accuracies()
                writer.writerow(
                    [_fmt(result.threshold), _fmt(result.mean_accuracy()), len(accs)]
                )
        written.append(trend)

        box = out / f"box_{suffix}.csv"
        with open(box, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "min", "q1", "median", "q3", "max"])
            for result in run.sweep.per_threshold:
                quartiles = _quartiles(result.defined_accuracies())
                row = [_fmt(result.threshold)]
                row += [_fmt(q) for q in quartiles] if quartiles else [""] * 5
                writer.writerow(row)
        written.append(box)

        bycount = out / f"bycount_{suffix}.csv"
        with open(bycount, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["prediction_count_bucket", "mean_acc", "case_count"])
            for bucket, (mean_acc, count) in _bucketize(run, report.report_threshold):
                writer.writerow([bucket, _fmt(mean_acc), count])
        written.append(bycount)
    return written


def _bucketize(run: FeatureSetRun, threshold: float, cap: int = 60):
    """Accuracy by prediction count at one threshold; counts > cap pool
    into a single overflow bucket."""
    for result in run.sweep.per_threshold:
        if abs(result.threshold - threshold) < 1e-9:
            break
    else:
        return
    buckets: dict[int, list[float]] = {}
    for outcome in result.outcomes:
        if outcome.accuracy is None:
            continue
        key = outcome.prediction_count if outcome.prediction_count <= cap else cap + 1
        buckets.setdefault(key, []).append(outcome.accuracy)
    for key in sorted(buckets):
        label = str(key) if key <= cap else f"{cap}+"
        values = buckets[key]
        yield label, (sum(values) / len(values), len(values))


# -- report (de)serialization --------------------------------------------------------


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "permutation": report.permutation,
        "seed": report.seed,
        "report_threshold": report.report_threshold,
        "best_feature_set": report.best_feature_set,
        "runs": [
            {
                "feature_set_id": run.feature_set_id,
                "unit_weights": run.unit_weights,
                "graph_nodes": run.graph_nodes,
                "graph_edges": run.graph_edges,
                "dropped_count": run.sweep.dropped_count,
                "evaluated_case_count": run.sweep.evaluated_case_count,
                "training": None
                if run.training is None
                else {
                    "epochs": run.training.epochs,
                    "lr": run.training.lr,
                    "case_count": run.training.case_count,
                    "skipped_cases": run.training.skipped_cases,
                    "edge_evaluations": run.training.edge_evaluations,
                    "mean_losses": run.training.mean_losses,
                },
                "thresholds": [
                    {
                        "threshold": result.threshold,
                        "outcomes": [
                            [o.cve_id, o.prediction_count, o.accuracy]
                            for o in result.outcomes
                        ],
                    }
                    for result in run.sweep.per_threshold
                ],
            }
            for run in report.runs
        ],
    }


def report_from_dict(payload: dict) -> EvaluationReport:
    report = EvaluationReport(
        permutation=payload["permutation"],
        seed=payload["seed"],
        report_threshold=payload["report_threshold"],
        best_feature_set=payload["best_feature_set"],
    )
    for run_payload in payload["runs"]:
        training = None
        if run_payload["training"] is not None:
            t = run_payload["training"]
            training = TrainingLog(
                epochs=t["epochs"],
                lr=t["lr"],
                case_count=t["case_count"],
                skipped_cases=t["skipped_cases"],
                edge_evaluations=t["edge_evaluations"],
                mean_losses=t["mean_losses"],
            )
        per_threshold = [
            ThresholdResult(
                threshold=t["threshold"],
                outcomes=[
                    CaseOutcome(cve_id=o[0], prediction_count=o[1], accuracy=o[2])
                    for o in t["outcomes"]
                ],
            )
            for t in run_payload["thresholds"]
        ]
        report.runs.append(
            FeatureSetRun(
                feature_set_id=run_payload["feature_set_id"],
                sweep=SweepResult(
                    per_threshold=per_threshold,
                    dropped_count=run_payload["dropped_count"],
                    evaluated_case_count=run_payload["evaluated_case_count"],
                ),
                training=training,
                unit_weights=run_payload["unit_weights"],
                graph_nodes=run_payload["graph_nodes"],
                graph_edges=run_payload["graph_edges"],
            )
        )
    return report

"""The library co-vulnerability graph: population, scoring, prediction, training.

Nodes are libraries; an undirected edge exists between two libraries once
they have shared at least one CVE or one vulnerable machine.  Each edge
carries five trainable weights over five sub-scores; the sigmoid of the
weighted sum is the edge's activation, read as the chance that the far
library is also vulnerable given the input.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime
from itertools import combinations

import numpy as np

from . import kernels
from .errors import EmptySeedError, ParameterError, TrainingError
from .records import CveRecord, LibraryRef, MachineInventory

log = logging.getLogger(__name__)

WEIGHT_NAMES = ("w_cve", "w_machine", "w_cluster", "w_cluster_match", "w_time")
INITIAL_WEIGHT = 1.0
DAY_SECONDS = 86400.0


@dataclass
class LibraryNode:
    name: str
    cve_count: int = 0
    machine_count: int = 0
    cve_timestamps: list[datetime] = field(default_factory=list)
    cluster_hist: dict[int, int] = field(default_factory=dict)

    @property
    def gap_days(self) -> list[float]:
        """Day differences between consecutive CVE timestamps."""
        ts = self.cve_timestamps
        return [
            (ts[i + 1] - ts[i]).total_seconds() / DAY_SECONDS
            for i in range(len(ts) - 1)
        ]


@dataclass
class CohesionEdge:
    a: str
    b: str
    co_cve_count: int = 0
    co_machine_count: int = 0
    weights: list[float] = field(default_factory=lambda: [INITIAL_WEIGHT] * 5)

    def other(self, name: str) -> str:
        return self.b if name == self.a else self.a


@dataclass
class PredictionContext:
    """Input-CVE facts needed at scoring time but never stored in the graph."""

    input_cluster: int
    input_time: datetime


@dataclass
class PredictionHit:
    library: str
    activation: float
    depth: int


@dataclass
class PredictionResult:
    input_id: str
    hits: list[PredictionHit]
    threshold: float
    depth: int | None


class CohesionGraph:
    def __init__(self):
        self.nodes: dict[str, LibraryNode] = {}
        self.edges: dict[tuple[str, str], CohesionEdge] = {}
        self.adjacency: dict[str, set[str]] = {}

    def node(self, name: str) -> LibraryNode:
        node = self.nodes.get(name)
        if node is None:
            node = LibraryNode(name=name)
            self.nodes[name] = node
            self.adjacency[name] = set()
        return node

    def edge(self, a: str, b: str) -> CohesionEdge:
        if a == b:
            raise ParameterError(f"self edge on {a!r}")
        key = (a, b) if a < b else (b, a)
        edge = self.edges.get(key)
        if edge is None:
            edge = CohesionEdge(a=key[0], b=key[1])
            self.edges[key] = edge
            self.adjacency.setdefault(key[0], set()).add(key[1])
            self.adjacency.setdefault(key[1], set()).add(key[0])
        return edge

    def find_edge(self, a: str, b: str) -> CohesionEdge | None:
        key = (a, b) if a < b else (b, a)
        return self.edges.get(key)

    def neighbors(self, name: str) -> list[str]:
        return sorted(self.adjacency.get(name, ()))


# -- population ------------------------------------------------------------


def populate_from_cves(graph: CohesionGraph, records: list[CveRecord]) -> CohesionGraph:
    """Count per-library and per-pair CVE co-occurrence.

    A record increments each affected library once regardless of how many
    versions it lists, and every unordered pair of co-affected libraries
    gets its edge count bumped (edges are created with unit weights).
    """
    for record in records:
        names = sorted({ref.name for ref in record.affected})
        if not names:
            log.warning("%s affects no libraries, skipped in population", record.id)
            continue
        for name in names:
            node = graph.node(name)
            node.cve_count += 1
            node.cve_timestamps.append(record.published)
        for a, b in combinations(names, 2):
            graph.edge(a, b).co_cve_count += 1
    for node in graph.nodes.values():
        node.cve_timestamps.sort()
    return graph


def populate_from_machines(
    graph: CohesionGraph,
    matched: list[tuple[MachineInventory, list[tuple[LibraryRef, list[str]]]]],
    tag: str = "vulnerable",
) -> CohesionGraph:
    """Count per-library and per-pair vulnerable co-presence on machines.

    ``matched`` pairs each inventory with its vulnerable-library matches
    (the output of ``match_vulnerable``); only inventories carrying the
    requested tag contribute.
    """
    for inventory, matches in matched:
        if inventory.tag != tag:
            continue
        names = sorted({ref.name for ref, _ in matches})
        for name in names:
            graph.node(name).machine_count += 1
        for a, b in combinations(names, 2):
            graph.edge(a, b).co_machine_count += 1
    return graph


def attach_clusters(
    graph: CohesionGraph, assignments: dict[str, int], records: list[CveRecord]
) -> CohesionGraph:
    """Fold cluster assignments of populate CVEs into node histograms."""
    by_id = {record.id: record for record in records}
    for cve_id in assignments:
        if cve_id not in by_id:
            log.warning("cluster assignment for unknown CVE %s ignored", cve_id)
    for record in records:
        cluster = assignments.get(record.id)
        if cluster is None or cluster < 0:
            continue
        for name in sorted({ref.name for ref in record.affected}):
            if name not in graph.nodes:
                log.warning("%s affects %s which is not in the graph", record.id, name)
                continue
            hist = graph.nodes[name].cluster_hist
            hist[cluster] = hist.get(cluster, 0) + 1
    return graph


# -- sub-scores --------------------------------------------------------------


def cve_score(edge: CohesionEdge, start: LibraryNode, end: LibraryNode) -> float:
    return kernels.pair_score(edge.co_cve_count, start.cve_count, end.cve_count)


def machine_score(edge: CohesionEdge, start: LibraryNode, end: LibraryNode) -> float:
    return kernels.pair_score(edge.co_machine_count, start.machine_count, end.machine_count)


def _aligned_counts(start: LibraryNode, end: LibraryNode):
    union = sorted(set(start.cluster_hist) | set(end.cluster_hist))
    counts_a = np.array([float(start.cluster_hist.get(i, 0)) for i in union])
    counts_b = np.array([float(end.cluster_hist.get(i, 0)) for i in union])
    return counts_a, counts_b


def cluster_score(start: LibraryNode, end: LibraryNode) -> float:
    counts_a, counts_b = _aligned_counts(start, end)
    return kernels.cluster_score(counts_a, counts_b)


def cluster_match_score(
    start: LibraryNode, end: LibraryNode, ctx: PredictionContext
) -> float:
    c = ctx.input_cluster
    if c < 0:
        return 0.0
    total = float(sum(start.cluster_hist.values()) + sum(end.cluster_hist.values()))
    return kernels.cluster_match_score(
        float(start.cluster_hist.get(c, 0)), float(end.cluster_hist.get(c, 0)), total
    )


def time_score(target: LibraryNode, ctx: PredictionContext) -> float:
    gaps = target.gap_days
    if not gaps:
        return 0.0
    gap_max = max(gaps)
    gap_mean = sum(gaps) / len(gaps)
    since_last = (
        ctx.input_time - target.cve_timestamps[-1]
    ).total_seconds() / DAY_SECONDS
    return kernels.time_score(gap_mean, gap_max, since_last)


def edge_scores(
    edge: CohesionEdge,
    start: LibraryNode,
    end: LibraryNode,
    target: LibraryNode,
    ctx: PredictionContext,
) -> np.ndarray:
    """The five sub-scores in weight order [cve, machine, cluster, match, time]."""
    return np.array(
        [
            cve_score(edge, start, end),
            machine_score(edge, start, end),
            cluster_score(start, end),
            cluster_match_score(start, end, ctx),
            time_score(target, ctx),
        ],
        dtype=np.float64,
    )


def activation(
    edge: CohesionEdge,
    start: LibraryNode,
    end: LibraryNode,
    target_is_end: bool,
    ctx: PredictionContext,
) -> float:
    target = end if target_is_end else start
    scores = edge_scores(edge, start, end, target, ctx)
    return kernels.activation_value(np.asarray(edge.weights, dtype=np.float64), scores)


def loss(prediction_activation: float, target_vulnerable: bool) -> float:
    return kernels.edge_loss(prediction_activation, target_vulnerable)


# -- prediction ---------------------------------------------------------------


def seed_libraries(graph: CohesionGraph, input_: CveRecord | str) -> list[str]:
    """Graph nodes to start a prediction from; error when none exist."""
    if isinstance(input_, CveRecord):
        wanted = sorted({ref.name for ref in input_.affected})
        label = input_.id
    else:
        wanted = [input_]
        label = input_
    seeds = [name for name in wanted if name in graph.nodes]
    if not seeds:
        raise EmptySeedError(f"no library of {label} is present in the graph")
    return seeds


def predict(
    graph: CohesionGraph,
    input_: CveRecord | str,
    threshold: float,
    depth: int | None,
    ctx: PredictionContext,
) -> PredictionResult:
    """Breadth-first expansion from the seeds over activating edges.

    At each depth every frontier node's edges to unvisited nodes are
    evaluated; a strict activation > threshold adds the far node to the
    hits and the next frontier.  ``depth=None`` expands until the
    frontier empties.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError(f"threshold must be in [0,1], got {threshold}")
    if depth is not None and depth < 1:
        raise ParameterError(f"depth must be >= 1, got {depth}")
    seeds = seed_libraries(graph, input_)
    input_id = input_.id if isinstance(input_, CveRecord) else input_

    visited = set(seeds)
    frontier = list(seeds)
    hits: list[PredictionHit] = []
    level = 0
    while frontier and (depth is None or level < depth):
        level += 1
        next_frontier: list[str] = []
        for name in frontier:
            start = graph.nodes[name]
            for other in graph.neighbors(name):
                if other in visited:
                    continue
                edge = graph.find_edge(name, other)
                value = activation(edge, start, graph.nodes[other], True, ctx)
                if value > threshold:
                    visited.add(other)
                    hits.append(PredictionHit(library=other, activation=value, depth=level))
                    next_frontier.append(other)
        frontier = next_frontier
    hits.sort(key=lambda h: (-h.activation, h.library))
    return PredictionResult(input_id=input_id, hits=hits, threshold=threshold, depth=depth)


# -- training -----------------------------------------------------------------


@dataclass
class TrainCase:
    """One training input: a CVE, its later-window targets, its cluster."""

    record: CveRecord
    target_libs: set[str]
    input_cluster: int = -1


@dataclass
class TrainingLog:
    epochs: int
    lr: float
    case_count: int
    skipped_cases: int
    edge_evaluations: int
    mean_losses: list[float]  # epochs+1 entries, index 0 = before training


def _collect_case_rows(graph: CohesionGraph, cases: list[TrainCase], edge_order):
    """Flatten cases into (edge row index, five scores, vulnerable) arrays.

    Enumerates, per case, every edge from a seed to a non-seed neighbor
    so each such edge receives one gradient signal per epoch.  Scores
    depend only on populated counts plus the per-case context, so they
    are computed once and reused across epochs.
    """
    index_of = {key: i for i, key in enumerate(edge_order)}
    edge_rows: list[int] = []
    score_rows: list[np.ndarray] = []
    vuln_rows: list[bool] = []
    skipped = 0
    for case in sorted(cases, key=lambda c: c.record.id):
        try:
            seeds = seed_libraries(graph, case.record)
        except EmptySeedError:
            skipped += 1
            continue
        seed_set = set(seeds)
        ctx = PredictionContext(
            input_cluster=case.input_cluster, input_time=case.record.published
        )
        for name in seeds:
            start = graph.nodes[name]
            for other in graph.neighbors(name):
                if other in seed_set:
                    continue
                edge = graph.find_edge(name, other)
                key = (edge.a, edge.b)
                target = graph.nodes[other]
                score_rows.append(edge_scores(edge, start, target, target, ctx))
                edge_rows.append(index_of[key])
                vuln_rows.append(other in case.target_libs)
    if score_rows:
        scores = np.vstack(score_rows)
    else:
        scores = np.zeros((0, 5), dtype=np.float64)
    return (
        np.asarray(edge_rows, dtype=np.int64),
        scores,
        np.asarray(vuln_rows, dtype=np.uint8),
        skipped,
    )


def train(
    graph: CohesionGraph, cases: list[TrainCase], epochs: int = 50, lr: float = 0.1
) -> TrainingLog:
    """Gradient descent on the per-edge weights, one pass per epoch.

    For every case edge the loss is 1 - activation when the far node is a
    true target and 1 + activation otherwise; weights move against the
    analytic gradient with the given learning rate, case by case in id
    order.  Weights are updated in place on the graph.
    """
    if not cases:
        raise TrainingError("no training cases")
    if epochs < 0:
        raise ParameterError("epochs must be >= 0")
    edge_order = sorted(graph.edges)
    edge_index, scores, vulnerable, skipped = _collect_case_rows(graph, cases, edge_order)
    if len(edge_index) == 0:
        raise TrainingError("no training case touches any graph edge")
    weights = np.array(
        [graph.edges[key].weights for key in edge_order], dtype=np.float64
    )
    losses = kernels.train_epochs(weights, edge_index, scores, vulnerable, lr, epochs)
    for key, row in zip(edge_order, weights):
        graph.edges[key].weights = [float(w) for w in row]
    return TrainingLog(
        epochs=epochs,
        lr=lr,
        case_count=len(cases) - skipped,
        skipped_cases=skipped,
        edge_evaluations=int(len(edge_index)),
        mean_losses=[float(x) for x in losses],
    )


# -- persistence ----------------------------------------------------------------


def graph_to_dicts(graph: CohesionGraph) -> tuple[list[dict], list[dict]]:
    from .records import format_timestamp

    nodes = [
        {
            "name": node.name,
            "cve_count": node.cve_count,
            "machine_count": node.machine_count,
            "cve_timestamps": [format_timestamp(t) for t in node.cve_timestamps],
            "cluster_hist": {str(k): v for k, v in sorted(node.cluster_hist.items())},
        }
        for name, node in sorted(graph.nodes.items())
    ]
    edges = [
        {
            "a": edge.a,
            "b": edge.b,
            "co_cve_count": edge.co_cve_count,
            "co_machine_count": edge.co_machine_count,
            "weights": edge.weights,
        }
        for key, edge in sorted(graph.edges.items())
    ]
    return nodes, edges


def graph_from_dicts(node_rows: list[dict], edge_rows: list[dict]) -> CohesionGraph:
    from .records import parse_timestamp

    graph = CohesionGraph()
    for row in node_rows:
        node = graph.node(row["name"])
        node.cve_count = int(row["cve_count"])
        node.machine_count = int(row["machine_count"])
        node.cve_timestamps = sorted(parse_timestamp(t) for t in row["cve_timestamps"])
        node.cluster_hist = {int(k): int(v) for k, v in row["cluster_hist"].items()}
    for row in edge_rows:
        edge = graph.edge(row["a"], row["b"])
        edge.co_cve_count = int(row["co_cve_count"])
        edge.co_machine_count = int(row["co_machine_count"])
        edge.weights = [float(w) for w in row["weights"]]
    return graph


def all_unit_weights(graph: CohesionGraph) -> bool:
    return all(
        w == INITIAL_WEIGHT for edge in graph.edges.values() for w in edge.weights
    )

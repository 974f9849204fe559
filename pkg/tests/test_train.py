"""Gradient-descent training: gradient signs, finite differences, efficacy."""

import numpy as np
import pytest

from vulngraph import kernels
from vulngraph.errors import TrainingError
from vulngraph.graph import (
    CohesionGraph,
    TrainCase,
    all_unit_weights,
    populate_from_cves,
    train,
)

from conftest import make_record


def two_node_graph():
    graph = CohesionGraph()
    records = [
        make_record(cve_id="CVE-1", published="2020-01-01", affected=(("a", "1"), ("b", "1"))),
        make_record(cve_id="CVE-2", published="2020-02-01", affected=(("a", "1"), ("b", "1"))),
    ]
    populate_from_cves(graph, records)
    return graph


class TestGradientSigns:
    def test_vulnerable_target_raises_weights(self):
        graph = two_node_graph()
        case = TrainCase(
            record=make_record(cve_id="CVE-3", published="2020-03-01", affected=(("a", "1"),)),
            target_libs={"b"},
        )
        before = graph.find_edge("a", "b").weights[:]
        train(graph, [case], epochs=1, lr=0.1)
        after = graph.find_edge("a", "b").weights
        scores_positive = [0, 4]  # cve score and time score are nonzero here
        for i in scores_positive:
            assert after[i] > before[i]

    def test_non_vulnerable_target_lowers_weights(self):
        graph = two_node_graph()
        case = TrainCase(
            record=make_record(cve_id="CVE-3", published="2020-03-01", affected=(("a", "1"),)),
            target_libs={"zzz"},
        )
        before = graph.find_edge("a", "b").weights[:]
        train(graph, [case], epochs=1, lr=0.1)
        after = graph.find_edge("a", "b").weights
        for i in (0, 4):
            assert after[i] < before[i]

    def test_zero_score_weight_unchanged(self):
        graph = two_node_graph()
        case = TrainCase(
            record=make_record(cve_id="CVE-3", published="2020-03-01", affected=(("a", "1"),)),
            target_libs={"b"},
        )
        train(graph, [case], epochs=5, lr=0.1)
        # no machine data and no clusters: those weights keep their unit value
        weights = graph.find_edge("a", "b").weights
        assert weights[1] == 1.0 and weights[2] == 1.0 and weights[3] == 1.0


class TestGradientCheck:
    def test_analytic_matches_central_difference(self):
        rng = np.random.default_rng(123)
        h = 1e-5
        checked = 0
        for _ in range(100):
            weights = rng.normal(loc=1.0, scale=0.5, size=5)
            scores = rng.uniform(0.05, 1.0, size=5)
            for vulnerable in (True, False):
                z = float(weights @ scores)
                a = kernels.sigmoid(z)
                sign = -1.0 if vulnerable else 1.0
                analytic = sign * a * (1.0 - a) * scores
                for i in range(5):
                    bumped_up = weights.copy()
                    bumped_up[i] += h
                    bumped_down = weights.copy()
                    bumped_down[i] -= h
                    loss_up = kernels.edge_loss(
                        kernels.sigmoid(float(bumped_up @ scores)), vulnerable
                    )
                    loss_down = kernels.edge_loss(
                        kernels.sigmoid(float(bumped_down @ scores)), vulnerable
                    )
                    numeric = (loss_up - loss_down) / (2 * h)
                    rel = abs(analytic[i] - numeric) / max(abs(numeric), 1e-12)
                    assert rel < 1e-5
                    checked += 1
        assert checked == 100 * 2 * 5


class TestTrain:
    def _cases(self, corpus_split, corpus_records, graph):
        from vulngraph.evaluate import build_train_cases

        cases = build_train_cases(corpus_split.train, corpus_records)
        assert cases, "synthetic corpus must yield training cases"
        return cases

    def test_weights_start_at_one_and_move(self, corpus_split, corpus_records):
        graph = CohesionGraph()
        populate_from_cves(graph, corpus_split.populate)
        assert all_unit_weights(graph)
        cases = self._cases(corpus_split, corpus_records, graph)
        log = train(graph, cases, epochs=5, lr=0.1)
        assert not all_unit_weights(graph)
        assert log.epochs == 5
        assert len(log.mean_losses) == 6

    def test_mean_loss_decreases_over_training(self, corpus_split, corpus_records):
        graph = CohesionGraph()
        populate_from_cves(graph, corpus_split.populate)
        cases = self._cases(corpus_split, corpus_records, graph)
        log = train(graph, cases, epochs=50, lr=0.1)
        assert log.mean_losses[-1] < log.mean_losses[0]

    def test_deterministic(self, corpus_split, corpus_records):
        results = []
        for _ in range(2):
            graph = CohesionGraph()
            populate_from_cves(graph, corpus_split.populate)
            cases = self._cases(corpus_split, corpus_records, graph)
            log = train(graph, cases, epochs=3, lr=0.1)
            results.append(
                (log.mean_losses, {k: tuple(e.weights) for k, e in graph.edges.items()})
            )
        assert results[0] == results[1]

    def test_empty_cases_rejected(self):
        graph = two_node_graph()
        with pytest.raises(TrainingError):
            train(graph, [], epochs=1, lr=0.1)

    def test_cases_missing_from_graph_are_skipped(self):
        graph = two_node_graph()
        ghost = TrainCase(
            record=make_record(cve_id="CVE-9", affected=(("ghost", "1"),)),
            target_libs={"b"},
        )
        real = TrainCase(
            record=make_record(cve_id="CVE-8", published="2020-03-01", affected=(("a", "1"),)),
            target_libs={"b"},
        )
        log = train(graph, [ghost, real], epochs=1, lr=0.1)
        assert log.skipped_cases == 1
        assert log.case_count == 1

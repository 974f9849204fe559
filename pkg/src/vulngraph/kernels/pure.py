"""Pure-Python edge kernels; reference semantics for the compiled twin.

Every function here has an identical signature and identical float64
arithmetic (same operation order) in ``_fast.pyx``, so either backend can
serve the graph layer.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"


def sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def pair_score(co_count: float, start_count: float, end_count: float) -> float:
    """Shared-occurrence ratio: co count over the endpoint average."""
    denom = (start_count + end_count) / 2.0
    if denom == 0.0:
        return 0.0
    return co_count / denom


def cluster_score(counts_a, counts_b) -> float:
    """Mean min/max overlap across the union of cluster ids.

    ``counts_a``/``counts_b`` are float64 arrays aligned on the union of
    cluster ids appearing in either histogram (missing ids hold 0).
    """
    n = len(counts_a)
    if n == 0:
        return 0.0
    total = 0.0
    for i in range(n):
        a = counts_a[i]
        b = counts_b[i]
        hi = a if a > b else b
        lo = a if a < b else b
        if hi > 0.0:
            total += lo / hi
    return total / n


def cluster_match_score(count_a: float, count_b: float, total: float) -> float:
    """Share of both endpoints' cluster assignments that match the input's."""
    if total == 0.0:
        return 0.0
    return (count_a + count_b) / total


def time_score(gap_mean: float, gap_max: float, since_last: float) -> float:
    """How well the input timing fits the target node's vulnerability rhythm.

    ``gap_mean``/``gap_max`` summarize the day gaps between the node's
    consecutive CVEs; a node with no usable history scores 0.  May go
    negative when the input arrives far later than the rhythm predicts.
    """
    if gap_max == 0.0:
        return 0.0
    return (gap_mean - since_last) / gap_max


def activation_value(weights, scores) -> float:
    """Sigmoid of the weighted score sum for one edge."""
    z = 0.0
    for i in range(5):
        z += weights[i] * scores[i]
    return sigmoid(z)


def edge_loss(activation: float, vulnerable: bool) -> float:
    if vulnerable:
        return 1.0 - activation
    return 1.0 + activation


def train_epochs(weights, edge_index, scores, vulnerable, lr: float, epochs: int):
    """Sequential gradient descent over precomputed case-edge rows.

    ``weights`` is the E x 5 per-edge weight matrix, updated in place.
    Row j of ``scores`` holds the five sub-scores of case-edge j, which
    touches edge ``edge_index[j]``; ``vulnerable[j]`` says whether the
    far node was a true target.  Returns a float64 array of epochs+1
    mean losses: entry 0 before any update, entry t after t epochs.
    """
    n_rows = len(edge_index)
    losses = np.zeros(epochs + 1, dtype=np.float64)
    losses[0] = _mean_loss(weights, edge_index, scores, vulnerable)
    for epoch in range(epochs):
        for j in range(n_rows):
            e = edge_index[j]
            z = 0.0
            for i in range(5):
                z += weights[e, i] * scores[j, i]
            a = sigmoid(z)
            # dL/dw_i = -a(1-a)s_i when the target is vulnerable, else +a(1-a)s_i
            g = a * (1.0 - a)
            if vulnerable[j]:
                g = -g
            for i in range(5):
                weights[e, i] -= lr * g * scores[j, i]
        losses[epoch + 1] = _mean_loss(weights, edge_index, scores, vulnerable)
    return losses


def _mean_loss(weights, edge_index, scores, vulnerable) -> float:
    n_rows = len(edge_index)
    if n_rows == 0:
        return 0.0
    total = 0.0
    for j in range(n_rows):
        e = edge_index[j]
        z = 0.0
        for i in range(5):
            z += weights[e, i] * scores[j, i]
        total += edge_loss(sigmoid(z), bool(vulnerable[j]))
    return total / n_rows

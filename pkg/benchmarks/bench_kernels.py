#!/usr/bin/env python3
"""Benchmark the compiled edge kernels against the pure-Python fallback.

Times the two hot paths: single-edge activation evaluation (the prediction
sweep workload) and sequential training epochs over precomputed case-edge
rows (the training workload).

    python benchmarks/bench_kernels.py --edges 2000 --rows 50000 --epochs 10
"""

import argparse
import time

import numpy as np

from vulngraph.kernels import available_backends


def bench_activation(backend, weights, scores, repeats):
    started = time.perf_counter()
    total = 0.0
    for _ in range(repeats):
        for i in range(len(weights)):
            total += backend.activation_value(weights[i], scores[i])
    elapsed = time.perf_counter() - started
    calls = repeats * len(weights)
    return elapsed, calls, total


def bench_training(backend, n_edges, edge_index, scores, vulnerable, lr, epochs):
    weights = np.ones((n_edges, 5))
    started = time.perf_counter()
    losses = backend.train_epochs(weights, edge_index, scores, vulnerable, lr, epochs)
    elapsed = time.perf_counter() - started
    return elapsed, losses, weights


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--edges", type=int, default=2000, help="distinct edges")
    parser.add_argument("--rows", type=int, default=50000, help="case-edge rows")
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--activations", type=int, default=20000,
                        help="edges in the activation benchmark")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    backends = available_backends()
    print(f"backends: {', '.join(sorted(backends))}")

    act_weights = rng.normal(loc=1.0, scale=0.5, size=(args.activations, 5))
    act_scores = rng.uniform(0, 1, size=(args.activations, 5))
    edge_index = rng.integers(0, args.edges, args.rows).astype(np.int64)
    scores = rng.uniform(0, 1, (args.rows, 5))
    vulnerable = (rng.random(args.rows) < 0.4).astype(np.uint8)

    results = {}
    for name in sorted(backends):
        backend = backends[name]
        act_time, calls, checksum = bench_activation(
            backend, act_weights, act_scores, repeats=1
        )
        train_time, losses, weights = bench_training(
            backend, args.edges, edge_index, scores, vulnerable, 0.1, args.epochs
        )
        results[name] = (act_time, calls, checksum, train_time, losses, weights)
        print(
            f"{name:>9}: activation {calls / act_time:>12,.0f} calls/s "
            f"({act_time * 1e3:8.1f} ms)   "
            f"training {args.rows * args.epochs / train_time:>12,.0f} updates/s "
            f"({train_time * 1e3:8.1f} ms)"
        )

    if len(results) == 2:
        pure = results["python"]
        fast = results["compiled"]
        assert np.array_equal(pure[4], fast[4]), "backends disagree on losses"
        assert np.array_equal(pure[5], fast[5]), "backends disagree on weights"
        print(
            f"speedup: activation x{pure[0] / fast[0]:.1f}, "
            f"training x{pure[3] / fast[3]:.1f} (results bitwise identical)"
        )


if __name__ == "__main__":
    main()

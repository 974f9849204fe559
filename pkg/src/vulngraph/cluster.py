"""K-means and DBSCAN over feature vectors, plus assignment of unseen vectors.

Both algorithms are deterministic: K-means draws its k-means++ seeds from
a seeded generator and breaks distance ties toward the lowest centroid
index, DBSCAN numbers clusters in first-touch order over the input rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

NOISE = -1


@dataclass
class KMeansModel:
    centroids: np.ndarray  # k x n_features
    k: int
    assignments: np.ndarray  # per training row
    inertia: float
    inertia_history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "algo": "kmeans",
            "centroids": self.centroids.tolist(),
            "k": self.k,
            "assignments": self.assignments.tolist(),
            "inertia": self.inertia,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "KMeansModel":
        return cls(
            centroids=np.asarray(payload["centroids"], dtype=np.float64),
            k=int(payload["k"]),
            assignments=np.asarray(payload["assignments"], dtype=np.int64),
            inertia=float(payload["inertia"]),
        )


@dataclass
class DbscanModel:
    eps: float
    min_pts: int
    core_points: np.ndarray  # n_core x n_features
    core_labels: np.ndarray  # cluster id per core point
    labels: np.ndarray  # per training row, NOISE for outliers
    cluster_count: int

    def to_dict(self) -> dict:
        return {
            "algo": "dbscan",
            "eps": self.eps,
            "min_pts": self.min_pts,
            "core_points": self.core_points.tolist(),
            "core_labels": self.core_labels.tolist(),
            "labels": self.labels.tolist(),
            "cluster_count": self.cluster_count,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "DbscanModel":
        return cls(
            eps=float(payload["eps"]),
            min_pts=int(payload["min_pts"]),
            core_points=np.asarray(payload["core_points"], dtype=np.float64),
            core_labels=np.asarray(payload["core_labels"], dtype=np.int64),
            labels=np.asarray(payload["labels"], dtype=np.int64),
            cluster_count=int(payload["cluster_count"]),
        )


def _sq_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _plus_plus_seeds(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    centers[0] = X[rng.integers(n)]
    closest = _sq_distances(X, centers[:1]).min(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers[j] = X[idx]
        closest = np.minimum(closest, _sq_distances(X, centers[j : j + 1])[:, 0])
    return centers


def fit_kmeans(matrix: np.ndarray, k: int, seed: int, max_iter: int = 100) -> KMeansModel:
    """Lloyd iterations from k-means++ seeds until assignments stabilize.

    An emptied cluster is reseeded to the point farthest from its previous
    centroid.
    """
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim != 2:
        raise ParameterError("kmeans needs a 2-D matrix")
    n = X.shape[0]
    if k < 1 or k > n:
        raise ParameterError(f"cluster count {k} out of range 1..{n}")
    rng = np.random.default_rng(seed)
    centroids = _plus_plus_seeds(X, k, rng)

    assignments = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iter):
        d2 = _sq_distances(X, centroids)
        new_assignments = d2.argmin(axis=1)
        history.append(float(d2.min(axis=1).sum()))
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for j in range(k):
            members = X[assignments == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                farthest = _sq_distances(X, centroids[j : j + 1])[:, 0].argmax()
                centroids[j] = X[farthest]

    d2 = _sq_distances(X, centroids)
    assignments = d2.argmin(axis=1)
    inertia = float(d2.min(axis=1).sum())
    return KMeansModel(
        centroids=centroids,
        k=k,
        assignments=assignments,
        inertia=inertia,
        inertia_history=history,
    )


def fit_dbscan(matrix: np.ndarray, eps: float, min_pts: int) -> DbscanModel:
    """Density-reachability clustering; unreachable points get the noise label."""
    if eps <= 0:
        raise ParameterError("eps must be positive")
    if min_pts < 1:
        raise ParameterError("min_pts must be >= 1")
    X = np.asarray(matrix, dtype=np.float64)
    n = X.shape[0]
    d2 = _sq_distances(X, X)
    eps2 = eps * eps
    neighborhoods = [np.flatnonzero(d2[i] <= eps2) for i in range(n)]
    is_core = np.array([len(nb) >= min_pts for nb in neighborhoods])

    labels = np.full(n, NOISE, dtype=np.int64)
    cluster_id = 0
    for i in range(n):
        if labels[i] != NOISE or not is_core[i]:
            continue
        labels[i] = cluster_id
        queue = list(neighborhoods[i])
        pos = 0
        while pos < len(queue):
            j = queue[pos]
            pos += 1
            if labels[j] == NOISE:
                labels[j] = cluster_id
                if is_core[j]:
                    queue.extend(neighborhoods[j])
        cluster_id += 1

    core_idx = np.flatnonzero(is_core)
    return DbscanModel(
        eps=eps,
        min_pts=min_pts,
        core_points=X[core_idx],
        core_labels=labels[core_idx],
        labels=labels,
        cluster_count=cluster_id,
    )


def assign_cluster(vector: np.ndarray, model: KMeansModel | DbscanModel) -> int:
    """Cluster id for a new vector.

    K-means: nearest centroid, ties to the lowest index.  DBSCAN: cluster
    of the nearest core point within eps, otherwise noise.
    """
    v = np.asarray(vector, dtype=np.float64)
    if isinstance(model, KMeansModel):
        if v.shape[0] != model.centroids.shape[1]:
            raise ParameterError("vector dimension does not match the fitted model")
        d2 = _sq_distances(v[None, :], model.centroids)[0]
        return int(d2.argmin())
    if isinstance(model, DbscanModel):
        if len(model.core_points) == 0:
            return NOISE
        if v.shape[0] != model.core_points.shape[1]:
            raise ParameterError("vector dimension does not match the fitted model")
        d2 = _sq_distances(v[None, :], model.core_points)[0]
        nearest = int(d2.argmin())
        if d2[nearest] <= model.eps * model.eps:
            return int(model.core_labels[nearest])
        return NOISE
    raise ParameterError(f"unsupported model type {type(model).__name__}")


def model_from_dict(payload: dict) -> KMeansModel | DbscanModel:
    if payload.get("algo") == "kmeans":
        return KMeansModel.from_dict(payload)
    if payload.get("algo") == "dbscan":
        return DbscanModel.from_dict(payload)
    raise ParameterError(f"unknown cluster model {payload.get('algo')!r}")


def export_assignments_csv(assignments: dict[str, int], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cve_id", "cluster_id"])
        for cve_id in sorted(assignments):
            writer.writerow([cve_id, assignments[cve_id]])

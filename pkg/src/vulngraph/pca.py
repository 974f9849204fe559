"""Principal component analysis over the clustering feature matrix.

Eigenpairs of the sample covariance come from a cyclic Jacobi sweep
(off-diagonal Frobenius norm driven below 1e-10), so the reduction has no
dependency on LAPACK and is bit-reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

JACOBI_TOL = 1e-10


def jacobi_eigh(matrix: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 100):
    """Eigenvalues/vectors of a symmetric matrix via cyclic Jacobi rotations.

    Returns (eigenvalues desc, eigenvectors as rows in matching order).
    """
    A = np.array(matrix, dtype=np.float64, copy=True)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ParameterError("jacobi_eigh needs a square matrix")
    V = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2) * 2.0)
        if off <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < tol / max(1, n * n):
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p, rot_q = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * rot_p - s * rot_q
                A[:, q] = s * rot_p + c * rot_q
                rot_p, rot_q = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rot_p - s * rot_q
                A[q, :] = s * rot_p + c * rot_q
                vec_p, vec_q = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vec_p - s * vec_q
                V[:, q] = s * vec_p + c * vec_q
    eigenvalues = np.diag(A).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return eigenvalues[order], V[:, order].T


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # d x n_features, orthonormal rows
    explained_variance: np.ndarray  # non-increasing
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "PcaModel":
        return cls(
            mean=np.asarray(payload["mean"], dtype=np.float64),
            components=np.asarray(payload["components"], dtype=np.float64),
            explained_variance=np.asarray(payload["explained_variance"], dtype=np.float64),
            degenerate=bool(payload["degenerate"]),
        )


def fit_pca(matrix: np.ndarray, d: int) -> PcaModel:
    """Top-d eigenvectors of the sample covariance of the centered matrix.

    A matrix with no variance at all yields a degenerate model whose
    projections are zero vectors.
    """
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ParameterError("PCA needs a 2-D matrix with at least 2 rows")
    n_features = X.shape[1]
    if not 1 <= d <= n_features:
        raise ParameterError(f"target dimension {d} out of range 1..{n_features}")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (X.shape[0] - 1)
    if not np.any(np.abs(cov) > 1e-15):
        return PcaModel(
            mean=mean,
            components=np.zeros((d, n_features)),
            explained_variance=np.zeros(d),
            degenerate=True,
        )
    eigenvalues, eigenvectors = jacobi_eigh(cov)
    components = eigenvectors[:d].copy()
    # deterministic sign: orient each component's largest entry positive
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return PcaModel(
        mean=mean,
        components=components,
        explained_variance=np.maximum(eigenvalues[:d], 0.0),
        degenerate=False,
    )


def apply_pca(model: PcaModel, vector: np.ndarray) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    if v.shape[-1] != model.mean.shape[0]:
        raise ParameterError("vector dimension does not match the fitted model")
    if model.degenerate:
        return np.zeros(v.shape[:-1] + (model.components.shape[0],))
    return (v - model.mean) @ model.components.T

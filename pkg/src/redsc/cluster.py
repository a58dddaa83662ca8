"""Spectral clustering on self-expressive coefficients, plus evaluation metrics.

The affinity is the symmetrized absolute coefficient matrix. Clustering uses
the symmetric normalized graph Laplacian: eigenvectors of the n smallest
eigenvalues are row-normalized and fed to k-means. Metrics are the standard
trio: clustering error (one minus best one-to-one matching accuracy), NMI
normalized by the geometric mean of the entropies, and purity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans

from .errors import ConfigurationError

__all__ = [
    "ClusterResult",
    "build_affinity",
    "cluster_coefficients",
    "clustering_error",
    "nmi",
    "purity",
    "spectral_cluster",
    "write_labels_csv",
]

# floor for node degrees so isolated nodes do not divide by zero
DEGREE_FLOOR = 1e-12
KMEANS_RESTARTS = 20
KMEANS_MAX_ITER = 300


@dataclass
class ClusterResult:
    """Predicted labels plus metrics against ground truth (None when no truth)."""

    labels: np.ndarray
    n_clusters: int
    err: float | None = None
    nmi: float | None = None
    pur: float | None = None


def build_affinity(coefficients):
    """Symmetrized absolute coefficients with a zeroed diagonal."""
    c = np.asarray(coefficients, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ConfigurationError(f"affinity requires a square matrix, got shape {c.shape}")
    a = 0.5 * (np.abs(c) + np.abs(c.T))
    np.fill_diagonal(a, 0.0)
    return a


def spectral_cluster(affinity, n_clusters, seed):
    """Normalized spectral clustering; deterministic given the seed."""
    a = np.asarray(affinity, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigurationError(f"affinity must be square, got shape {a.shape}")
    n = a.shape[0]
    if not np.array_equal(a, a.T):
        raise ConfigurationError("affinity must be exactly symmetric")
    if np.any(a < 0):
        raise ConfigurationError("affinity entries must be nonnegative")
    if not (2 <= n_clusters <= n):
        raise ConfigurationError(f"n_clusters must be in [2, {n}], got {n_clusters}")
    if not a.any():
        raise ConfigurationError("degenerate affinity: all entries are zero")

    degrees = np.maximum(a.sum(axis=1), DEGREE_FLOOR)
    inv_sqrt = 1.0 / np.sqrt(degrees)
    laplacian = np.eye(n) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
    _, vectors = eigh(laplacian)  # ascending eigenvalues
    embedding = vectors[:, :n_clusters]
    norms = np.linalg.norm(embedding, axis=1)
    norms[norms < DEGREE_FLOOR] = 1.0
    embedding = embedding / norms[:, None]
    km = KMeans(
        n_clusters=n_clusters,
        n_init=KMEANS_RESTARTS,
        max_iter=KMEANS_MAX_ITER,
        random_state=seed,
    )
    return km.fit_predict(embedding).astype(int)


def _contingency(pred, truth):
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.shape != truth.shape:
        raise ConfigurationError(
            f"label arrays must have equal length, got {pred.shape[0]} and {truth.shape[0]}"
        )
    if pred.size == 0:
        raise ConfigurationError("label arrays must be nonempty")
    _, pred_idx = np.unique(pred, return_inverse=True)
    _, truth_idx = np.unique(truth, return_inverse=True)
    k_pred = pred_idx.max() + 1
    k_truth = truth_idx.max() + 1
    table = np.zeros((k_pred, k_truth), dtype=np.int64)
    np.add.at(table, (pred_idx, truth_idx), 1)
    return table


def clustering_error(pred, truth):
    """1 - best one-to-one matching accuracy (optimal assignment)."""
    table = _contingency(pred, truth)
    rows, cols = linear_sum_assignment(-table)
    matched = table[rows, cols].sum()
    return 1.0 - matched / table.sum()


def nmi(pred, truth):
    """Mutual information over the geometric mean of entropies; 0/0 is 0."""
    table = _contingency(pred, truth).astype(float)
    n = table.sum()
    joint = table / n
    p_pred = joint.sum(axis=1)
    p_truth = joint.sum(axis=0)
    nonzero = joint > 0
    outer = p_pred[:, None] * p_truth[None, :]
    info = float(np.sum(joint[nonzero] * np.log(joint[nonzero] / outer[nonzero])))
    h_pred = float(-np.sum(p_pred[p_pred > 0] * np.log(p_pred[p_pred > 0])))
    h_truth = float(-np.sum(p_truth[p_truth > 0] * np.log(p_truth[p_truth > 0])))
    denom = np.sqrt(h_pred * h_truth)
    if denom == 0.0:
        return 0.0
    return float(min(1.0, max(0.0, info / denom)))


def purity(pred, truth):
    """Fraction of points in the majority true class of their cluster."""
    table = _contingency(pred, truth)
    return float(table.max(axis=1).sum() / table.sum())


def cluster_coefficients(coefficients, n_clusters, seed, truth=None):
    """Affinity construction, spectral clustering, and (optional) scoring."""
    affinity = build_affinity(coefficients)
    labels = spectral_cluster(affinity, n_clusters, seed)
    result = ClusterResult(labels=labels, n_clusters=int(n_clusters))
    if truth is not None:
        result.err = clustering_error(labels, truth)
        result.nmi = nmi(labels, truth)
        result.pur = purity(labels, truth)
    return result


def write_labels_csv(path, pred, truth=None):
    """CSV with one row per sample: index, predicted, truth (blank if unknown)."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["index", "predicted", "truth"])
        for i, p in enumerate(np.asarray(pred).reshape(-1)):
            row = [i, int(p), "" if truth is None else int(np.asarray(truth).reshape(-1)[i])]
            writer.writerow(row)

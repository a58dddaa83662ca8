"""Closed-form ridge self-expression: classical baseline and analytic oracle.

For feature matrices Z_1..Z_m (each D_i x N) the unconstrained minimizer of
sum_i ||Z_i - Z_i C||_F^2 + lam ||C||_F^2 is C* = (G + lam I)^-1 G with
G = sum_i Z_i^T Z_i. With m = 1 and raw data columns this is the classical
least-squares-regression subspace clustering baseline; with network latents
it is the exact target the trained self-expressive matrix must reach.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .cluster import cluster_coefficients
from .errors import ConfigurationError

__all__ = ["RidgeProblem", "lsr_baseline_cluster", "ridge_closed_form"]


@dataclass
class RidgeProblem:
    """Feature matrices (columns are samples), ridge weight, and constraint flag."""

    features: list = field(default_factory=list)
    regularization: float = 1.0
    zero_diag: bool = False


def ridge_closed_form(problem):
    """The exact unconstrained minimizer C* = (G + lam I)^-1 G."""
    if problem.zero_diag:
        raise ConfigurationError(
            "the closed form exists only without the zero-diagonal constraint"
        )
    lam = float(problem.regularization)
    if lam < 0:
        raise ConfigurationError(f"regularization must be >= 0, got {lam}")
    if not problem.features:
        raise ConfigurationError("at least one feature matrix is required")
    n = None
    for z in problem.features:
        z = np.asarray(z)
        if z.ndim != 2:
            raise ConfigurationError(f"feature matrices must be 2-d, got shape {z.shape}")
        if n is None:
            n = z.shape[1]
        elif z.shape[1] != n:
            raise ConfigurationError(
                f"inconsistent sample counts across feature matrices: {z.shape[1]} vs {n}"
            )
    gram = np.zeros((n, n))
    for z in problem.features:
        z = np.asarray(z, dtype=float)
        gram += z.T @ z
    system = gram + lam * np.eye(n)
    try:
        factor = cho_factor(system)
    except LinAlgError as exc:
        raise ConfigurationError(
            "regularization required: the unregularized system is singular"
        ) from exc
    return cho_solve(factor, gram)


def lsr_baseline_cluster(x_columns, regularization, n_clusters, seed, truth=None):
    """Ridge coefficients on raw data columns, then spectral clustering."""
    x = np.asarray(x_columns, dtype=float)
    if x.ndim != 2:
        raise ConfigurationError(f"expected a D x N data matrix, got shape {x.shape}")
    if n_clusters < 2:
        raise ConfigurationError(f"n_clusters must be >= 2, got {n_clusters}")
    coefficients = ridge_closed_form(RidgeProblem([x], regularization=regularization))
    return cluster_coefficients(coefficients, n_clusters, seed, truth=truth)

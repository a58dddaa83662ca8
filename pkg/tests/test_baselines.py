"""Tests for the closed-form ridge self-expression solver and LSR pipeline."""

import numpy as np
import pytest

from redsc.baselines import RidgeProblem, lsr_baseline_cluster, ridge_closed_form
from redsc.errors import ConfigurationError


def orthonormal_columns(d, n, seed=0):
    q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(d, n)))
    return q[:, :n]


def test_orthonormal_gram_gives_half_identity():
    z = orthonormal_columns(20, 6)
    c = ridge_closed_form(RidgeProblem([z], regularization=1.0))
    assert np.allclose(c, np.eye(6) / 2.0, atol=1e-12)


def test_huge_regularization_shrinks_solution():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(15, 8))
    g = z.T @ z
    c = ridge_closed_form(RidgeProblem([z], regularization=1e8))
    assert np.linalg.norm(c) < 1e-4 * np.linalg.norm(g)


def test_first_order_optimality():
    # gradient of sum_i ||Z_i - Z_i C||_F^2 + lam ||C||_F^2 vanishes at C*
    rng = np.random.default_rng(2)
    features = [rng.normal(size=(12, 9)), rng.normal(size=(7, 9))]
    lam = 0.8
    c = ridge_closed_form(RidgeProblem(features, regularization=lam))
    g = sum(z.T @ z for z in features)
    gradient = 2.0 * (g @ c - g) + 2.0 * lam * c
    assert np.max(np.abs(gradient)) < 1e-8


def test_multiple_feature_sets_equal_stacked_matrix():
    rng = np.random.default_rng(3)
    z1 = rng.normal(size=(5, 6))
    z2 = rng.normal(size=(9, 6))
    separate = ridge_closed_form(RidgeProblem([z1, z2], regularization=0.5))
    stacked = ridge_closed_form(RidgeProblem([np.vstack([z1, z2])], regularization=0.5))
    assert np.allclose(separate, stacked, atol=1e-10)


def test_zero_diag_constraint_has_no_closed_form():
    z = np.random.default_rng(4).normal(size=(5, 4))
    with pytest.raises(ConfigurationError):
        ridge_closed_form(RidgeProblem([z], regularization=1.0, zero_diag=True))


def test_unregularized_singular_problem_rejected():
    z = np.zeros((4, 3))
    with pytest.raises(ConfigurationError, match="regularization"):
        ridge_closed_form(RidgeProblem([z], regularization=0.0))


def test_unregularized_full_rank_problem_allowed():
    z = orthonormal_columns(10, 4, seed=5)
    c = ridge_closed_form(RidgeProblem([z], regularization=0.0))
    assert np.allclose(c, np.eye(4), atol=1e-10)


def test_inconsistent_sample_counts_rejected():
    with pytest.raises(ConfigurationError):
        ridge_closed_form(RidgeProblem([np.zeros((3, 4)), np.zeros((3, 5))], regularization=1.0))


def test_duplicated_points_share_affinity_rows():
    from redsc.cluster import build_affinity

    rng = np.random.default_rng(6)
    x = rng.normal(size=(8, 6))
    x[:, 3] = x[:, 1]  # duplicate one sample
    c = ridge_closed_form(RidgeProblem([x], regularization=1.0))
    a = build_affinity(c)
    keep = [k for k in range(6) if k not in (1, 3)]
    assert np.allclose(a[1, keep], a[3, keep], atol=1e-10)
    assert a[1, 3] == a[3, 1]


def test_lsr_baseline_on_separated_subspaces():
    rng = np.random.default_rng(7)
    blocks = []
    labels = []
    for k in range(3):
        basis, _ = np.linalg.qr(rng.normal(size=(30, 3)))
        blocks.append(basis[:, :3] @ rng.normal(size=(3, 15)))
        labels += [k] * 15
    x = np.hstack(blocks)
    result = lsr_baseline_cluster(x, regularization=1.0, n_clusters=3, seed=0, truth=np.array(labels))
    assert result.err < 0.05
    assert result.nmi > 0.9
    assert result.labels.shape == (45,)
    assert result.n_clusters == 3


def test_lsr_baseline_rejects_single_cluster():
    x = np.random.default_rng(8).normal(size=(10, 12))
    with pytest.raises(ConfigurationError):
        lsr_baseline_cluster(x, regularization=1.0, n_clusters=1, seed=0)

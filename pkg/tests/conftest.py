"""Shared helpers for the test suite."""

import numpy as np

from redsc.autodiff import constant, matmul, reshape


def graph_sum(value):
    """Sum of all entries as a scalar graph node, built from existing ops."""
    flat = reshape(value, (1, -1))
    ones = constant(np.ones((flat.shape[1], 1)))
    return reshape(matmul(flat, ones), ())


def numeric_gradient(fn, array, epsilon=1e-5):
    """Central finite differences of a scalar-valued fn w.r.t. every entry."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + epsilon
        plus = fn()
        flat[i] = original - epsilon
        minus = fn()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * epsilon)
    return grad


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=float).reshape(-1)
    n = np.asarray(numeric, dtype=float).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)
    return float(np.max(np.abs(a - n) / denom))

"""Shared test utilities: finite-difference oracles and small graph builders."""

from __future__ import annotations

import numpy as np


def finite_difference_grad(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. array x.

    ``fn`` must recompute the scalar from the current contents of ``x``;
    the array is perturbed in place and restored.
    """
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        fp = fn()
        flat[idx] = orig - h
        fm = fn()
        flat[idx] = orig
        gflat[idx] = (fp - fm) / (2.0 * h)
    return grad


def rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max entrywise relative error with an absolute floor for tiny gradients."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def random_symmetric(n: int, rng: np.random.Generator, low=0.0, high=1.0) -> np.ndarray:
    """Random symmetric zero-diagonal matrix with entries in [low, high]."""
    m = rng.uniform(low, high, size=(n, n))
    m = (m + m.T) / 2.0
    np.fill_diagonal(m, 0.0)
    return m


def random_graph(n: int, p: float, rng: np.random.Generator):
    """Erdos-Renyi style BinaryGraph."""
    from f2s.graphmetrics import BinaryGraph

    adj = rng.random((n, n)) < p
    adj = np.triu(adj, 1)
    adj = adj | adj.T
    return BinaryGraph(n, adj)

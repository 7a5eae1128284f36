"""Graph-theoretic measurements on connectivity matrices.

Weighted matrices are binarized by proportional thresholding (top fraction
of upper-triangle weights, lexicographic tie-break) before any path-based
metric, so shortest-path counts are well-defined integers. Betweenness uses
Brandes' accumulation over per-source BFS trees.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

Array = np.ndarray


@dataclass(frozen=True)
class BinaryGraph:
    """Undirected simple graph: symmetric boolean adjacency, empty diagonal."""

    n: int
    adj: Array


def _values(x) -> Array:
    v = getattr(x, "values", x)
    return np.asarray(v, dtype=np.float64)


def binarize(weights, density: float) -> BinaryGraph:
    """Keep the strongest ``density`` fraction of upper-triangle edges.

    Exactly floor(density * n(n-1)/2) edges are kept; equal weights are
    broken by (i, j) lexicographic order so the result is deterministic.
    """
    if not 0.0 < density <= 1.0:
        raise ConfigError(f"density must be in (0, 1], got {density}")
    a = _values(weights)
    n = a.shape[0]
    iu, ju = np.triu_indices(n, 1)
    w = a[iu, ju]
    k = int(np.floor(density * n * (n - 1) / 2))
    order = np.lexsort((ju, iu, -w))
    keep = order[:k]
    adj = np.zeros((n, n), dtype=bool)
    adj[iu[keep], ju[keep]] = True
    adj |= adj.T
    return BinaryGraph(n, adj)


def degree(g: BinaryGraph) -> Array:
    return g.adj.sum(axis=1).astype(np.float64)


def strength(weights) -> Array:
    """Weighted node strength (row sums of the weighted matrix)."""
    a = _values(weights)
    return a.sum(axis=1)


def clustering(g: BinaryGraph) -> Array:
    a = g.adj.astype(np.float64)
    tri = np.diag(a @ a @ a) / 2.0
    k = a.sum(axis=1)
    out = np.zeros(g.n)
    mask = k >= 2
    out[mask] = 2.0 * tri[mask] / (k[mask] * (k[mask] - 1.0))
    return out


def _neighbors(g: BinaryGraph) -> list[Array]:
    return [np.flatnonzero(g.adj[i]) for i in range(g.n)]


def betweenness(g: BinaryGraph) -> Array:
    """Normalized betweenness centrality, endpoints excluded.

    Brandes' algorithm on hop-count shortest paths; unreachable pairs
    contribute nothing. Normalization is (n-1)(n-2)/2, bounding each value
    to [0, 1].
    """
    n = g.n
    nbrs = _neighbors(g)
    bc = np.zeros(n)
    for s in range(n):
        dist = np.full(n, -1, dtype=np.int64)
        sigma = np.zeros(n)
        preds: list[list[int]] = [[] for _ in range(n)]
        dist[s] = 0
        sigma[s] = 1.0
        order: list[int] = []
        queue: deque[int] = deque([s])
        while queue:
            v = queue.popleft()
            order.append(v)
            dv = dist[v]
            for w in nbrs[v]:
                if dist[w] < 0:
                    dist[w] = dv + 1
                    queue.append(w)
                if dist[w] == dv + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(n)
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    bc /= 2.0  # each unordered pair was counted from both endpoints
    norm = (n - 1) * (n - 2) / 2.0
    return bc / norm if norm > 0 else bc


def hop_distances(g: BinaryGraph, source: int) -> Array:
    """BFS hop counts from ``source``; unreachable nodes get -1."""
    dist = np.full(g.n, -1, dtype=np.int64)
    dist[source] = 0
    queue: deque[int] = deque([source])
    nbrs = _neighbors(g)
    while queue:
        v = queue.popleft()
        for w in nbrs[v]:
            if dist[w] < 0:
                dist[w] = dist[v] + 1
                queue.append(w)
    return dist


def global_efficiency(g: BinaryGraph) -> float:
    """Mean of 1/d(i, j) over ordered pairs, with 1/unreachable = 0."""
    n = g.n
    if n < 2:
        return 0.0
    total = 0.0
    for s in range(n):
        dist = hop_distances(g, s)
        reachable = dist > 0
        total += (1.0 / dist[reachable]).sum()
    return total / (n * (n - 1))


def local_efficiency(g: BinaryGraph) -> Array:
    """Per node, the global efficiency of its neighbor-induced subgraph."""
    out = np.zeros(g.n)
    for i in range(g.n):
        nb = np.flatnonzero(g.adj[i])
        if nb.size < 2:
            continue
        sub = BinaryGraph(nb.size, g.adj[np.ix_(nb, nb)])
        out[i] = global_efficiency(sub)
    return out


METRIC_NAMES = (
    "mae",
    "cc",
    "degree_error",
    "strength_error",
    "clustering_error",
    "betweenness_error",
    "local_efficiency_error",
    "global_efficiency_error",
)


@dataclass(frozen=True)
class MetricReport:
    """The eight per-subject evaluation metrics."""

    mae: float
    cc: float
    degree_error: float
    strength_error: float
    clustering_error: float
    betweenness_error: float
    local_efficiency_error: float
    global_efficiency_error: float

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def metric_errors(pred, emp, density: float = 0.2) -> MetricReport:
    """Compare a predicted matrix against the empirical one.

    MAE and CC are computed on the weighted off-diagonal entries; strength
    error on the weighted matrices; the remaining graph metrics on graphs
    binarized at ``density``.
    """
    from .losses import pearson  # deferred: losses imports this module

    p = _values(pred)
    e = _values(emp)
    if p.shape != e.shape:
        raise ShapeError(f"metric_errors: shapes {p.shape} and {e.shape} differ")
    n = p.shape[0]
    off = ~np.eye(n, dtype=bool)
    gp = binarize(p, density)
    ge = binarize(e, density)
    return MetricReport(
        mae=float(np.abs(p - e)[off].mean()),
        cc=pearson(p, e),
        degree_error=float(np.abs(degree(gp) - degree(ge)).mean()),
        strength_error=float(np.abs(strength(p) - strength(e)).mean()),
        clustering_error=float(np.abs(clustering(gp) - clustering(ge)).mean()),
        betweenness_error=float(np.abs(betweenness(gp) - betweenness(ge)).mean()),
        local_efficiency_error=float(
            np.abs(local_efficiency(gp) - local_efficiency(ge)).mean()
        ),
        global_efficiency_error=float(
            abs(global_efficiency(gp) - global_efficiency(ge))
        ),
    )

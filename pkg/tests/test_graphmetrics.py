import itertools
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from f2s.errors import ConfigError, ShapeError
from f2s.graphmetrics import (
    BinaryGraph,
    betweenness,
    binarize,
    clustering,
    degree,
    global_efficiency,
    hop_distances,
    local_efficiency,
    metric_errors,
    strength,
)

from helpers import random_graph, random_symmetric


# independent oracles -----------------------------------------------------------


def enumerate_shortest_paths(adj: np.ndarray, i: int, j: int) -> list[list[int]]:
    """All shortest i-j paths by explicit breadth-first enumeration."""
    n = adj.shape[0]
    dist = np.full(n, -1)
    dist[i] = 0
    q = deque([i])
    while q:
        v = q.popleft()
        for w in np.flatnonzero(adj[v]):
            if dist[w] < 0:
                dist[w] = dist[v] + 1
                q.append(w)
    if dist[j] < 0:
        return []
    paths = []

    def extend(path):
        v = path[-1]
        if v == j:
            paths.append(path)
            return
        for w in np.flatnonzero(adj[v]):
            if dist[w] == dist[v] + 1 and dist[w] <= dist[j]:
                extend(path + [w])

    extend([i])
    return [p for p in paths if len(p) - 1 == dist[j]]


def brute_betweenness(g: BinaryGraph) -> np.ndarray:
    """Betweenness via literal shortest-path enumeration; endpoints excluded."""
    n = g.n
    bc = np.zeros(n)
    for i in range(n):
        for j in range(i + 1, n):
            paths = enumerate_shortest_paths(g.adj, i, j)
            if not paths:
                continue
            for k in range(n):
                if k == i or k == j:
                    continue
                through = sum(1 for p in paths if k in p[1:-1])
                bc[k] += through / len(paths)
    norm = (n - 1) * (n - 2) / 2
    return bc / norm if norm > 0 else bc


def floyd_warshall(adj: np.ndarray) -> np.ndarray:
    n = adj.shape[0]
    dist = np.where(adj, 1.0, np.inf)
    np.fill_diagonal(dist, 0.0)
    for k in range(n):
        dist = np.minimum(dist, dist[:, k : k + 1] + dist[k : k + 1, :])
    return dist


def brute_clustering(g: BinaryGraph) -> np.ndarray:
    n = g.n
    out = np.zeros(n)
    for i in range(n):
        nbrs = np.flatnonzero(g.adj[i])
        k = nbrs.size
        if k < 2:
            continue
        tri = sum(
            1 for a, b in itertools.combinations(nbrs, 2) if g.adj[a, b]
        )
        out[i] = tri / (k * (k - 1) / 2)
    return out


def path_graph(n: int) -> BinaryGraph:
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = True
    return BinaryGraph(n, adj)


def complete_graph(n: int) -> BinaryGraph:
    adj = ~np.eye(n, dtype=bool)
    return BinaryGraph(n, adj)


def star_graph(n: int) -> BinaryGraph:
    adj = np.zeros((n, n), dtype=bool)
    adj[0, 1:] = adj[1:, 0] = True
    return BinaryGraph(n, adj)


# binarize -----------------------------------------------------------------------


def test_binarize_density_one_is_complete():
    rng = np.random.default_rng(0)
    g = binarize(random_symmetric(5, rng, 0.1, 1.0), 1.0)
    assert np.array_equal(g.adj, complete_graph(5).adj)


def test_binarize_keeps_single_dominant_edge():
    m = np.zeros((4, 4))
    m[1, 3] = m[3, 1] = 0.9
    m[0, 2] = m[2, 0] = 0.1
    g = binarize(m, 1.0 / 6.0)  # floor(1/6 * 6) = 1 edge
    assert g.adj[1, 3] and g.adj[3, 1]
    assert g.adj.sum() == 2


def test_binarize_ties_lexicographic_and_stable():
    m = np.full((4, 4), 0.5)
    np.fill_diagonal(m, 0.0)
    picks = [binarize(m, 0.5).adj for _ in range(3)]  # floor(0.5*6) = 3 edges
    expected = np.zeros((4, 4), dtype=bool)
    for i, j in [(0, 1), (0, 2), (0, 3)]:
        expected[i, j] = expected[j, i] = True
    for adj in picks:
        assert np.array_equal(adj, expected)


def test_binarize_rejects_bad_density():
    with pytest.raises(ConfigError):
        binarize(np.zeros((3, 3)), 0.0)


# degree / strength / clustering ---------------------------------------------------


def test_degree_complete_k4():
    assert np.array_equal(degree(complete_graph(4)), [3, 3, 3, 3])


def test_degree_empty():
    assert np.array_equal(degree(BinaryGraph(3, np.zeros((3, 3), bool))), [0, 0, 0])


def test_strength_uniform_half():
    m = np.full((4, 4), 0.5)
    np.fill_diagonal(m, 0.0)
    assert np.allclose(strength(m), 1.5)


def test_clustering_triangle_is_one():
    assert np.array_equal(clustering(complete_graph(3)), [1.0, 1.0, 1.0])


def test_clustering_star_is_zero():
    assert np.array_equal(clustering(star_graph(5)), np.zeros(5))


def test_clustering_matches_triple_enumeration():
    rng = np.random.default_rng(42)
    for _ in range(20):
        g = random_graph(7, 0.45, rng)
        assert np.array_equal(clustering(g), brute_clustering(g))


# betweenness ---------------------------------------------------------------------


def test_betweenness_three_node_path():
    bc = betweenness(path_graph(3))
    assert np.array_equal(bc, [0.0, 1.0, 0.0])


def test_betweenness_complete_graph_zero():
    assert np.array_equal(betweenness(complete_graph(6)), np.zeros(6))


def test_betweenness_matches_enumeration_small_graphs():
    rng = np.random.default_rng(7)
    for trial in range(30):
        n = int(rng.integers(3, 8))
        g = random_graph(n, float(rng.uniform(0.2, 0.8)), rng)
        got = betweenness(g)
        want = brute_betweenness(g)
        assert np.allclose(got, want, rtol=0, atol=1e-12), f"trial {trial}"


def test_betweenness_disconnected_pairs_contribute_zero():
    adj = np.zeros((4, 4), dtype=bool)
    adj[0, 1] = adj[1, 0] = True  # component {0,1}; nodes 2,3 isolated
    bc = betweenness(BinaryGraph(4, adj))
    assert np.array_equal(bc, np.zeros(4))


# distances / efficiency ------------------------------------------------------------


def test_bfs_hops_equal_floyd_warshall():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = int(rng.integers(2, 9))
        g = random_graph(n, float(rng.uniform(0.2, 0.9)), rng)
        fw = floyd_warshall(g.adj)
        for src in range(n):
            hops = hop_distances(g, src)
            expect = np.where(np.isinf(fw[src]), -1, fw[src])
            assert np.array_equal(hops, expect)


def test_global_efficiency_complete():
    assert global_efficiency(complete_graph(5)) == 1.0


def test_global_efficiency_disconnected():
    assert global_efficiency(BinaryGraph(4, np.zeros((4, 4), bool))) == 0.0


def test_global_efficiency_four_path_hand_value():
    # distances {1,1,1,2,2,3} per direction: E = (3 + 2*0.5 + 1/3) / 6 = 13/18
    assert abs(global_efficiency(path_graph(4)) - 13.0 / 18.0) <= 1e-12


def test_local_efficiency_low_degree_zero():
    le = local_efficiency(path_graph(3))
    assert le[0] == 0.0 and le[2] == 0.0
    # middle node's neighbors {0, 2} are not adjacent: efficiency 0
    assert le[1] == 0.0


def test_local_efficiency_complete():
    assert np.allclose(local_efficiency(complete_graph(4)), 1.0)


# isomorphism invariance -------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metrics_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 9))
    g = random_graph(n, 0.5, rng)
    perm = rng.permutation(n)
    padj = g.adj[np.ix_(perm, perm)]
    pg = BinaryGraph(n, padj)
    for fn in (degree, clustering, betweenness, local_efficiency):
        assert np.allclose(fn(pg), fn(g)[perm], atol=1e-12)
    assert abs(global_efficiency(pg) - global_efficiency(g)) <= 1e-12


def test_metric_ranges():
    rng = np.random.default_rng(5)
    for _ in range(10):
        g = random_graph(7, 0.5, rng)
        assert np.all((clustering(g) >= 0) & (clustering(g) <= 1))
        assert np.all((betweenness(g) >= 0) & (betweenness(g) <= 1))
        assert 0.0 <= global_efficiency(g) <= 1.0


# metric_errors ---------------------------------------------------------------------


def test_metric_errors_identical_inputs_all_zero():
    rng = np.random.default_rng(3)
    m = random_symmetric(8, rng)
    report = metric_errors(m, m, density=0.25)
    for value in report.as_dict().values():
        assert value == 0.0 or value == 1.0  # cc of identical is 1
    assert report.cc == 1.0
    assert report.mae == 0.0


def test_metric_errors_constant_offset_mae():
    rng = np.random.default_rng(4)
    base = random_symmetric(6, rng, 0.2, 0.8)
    shifted = np.clip(base + 0.01, 0, 1)
    np.fill_diagonal(shifted, 0.0)
    report = metric_errors(shifted, base, density=0.3)
    assert abs(report.mae - 0.01) <= 1e-12


def test_metric_errors_shape_mismatch():
    with pytest.raises(ShapeError):
        metric_errors(np.zeros((3, 3)), np.zeros((4, 4)))


def test_metric_errors_against_naive_recomputation():
    from f2s.losses import pearson

    rng = np.random.default_rng(9)
    pred = random_symmetric(8, rng)
    emp = random_symmetric(8, rng)
    density = 0.25
    report = metric_errors(pred, emp, density)
    gp, ge = binarize(pred, density), binarize(emp, density)
    off = ~np.eye(8, dtype=bool)
    naive = {
        "mae": np.abs(pred - emp)[off].mean(),
        "cc": pearson(pred, emp),
        "degree_error": np.abs(gp.adj.sum(1) - ge.adj.sum(1)).mean(),
        "strength_error": np.abs(pred.sum(1) - emp.sum(1)).mean(),
        "clustering_error": np.abs(brute_clustering(gp) - brute_clustering(ge)).mean(),
        "betweenness_error": np.abs(brute_betweenness(gp) - brute_betweenness(ge)).mean(),
        "local_efficiency_error": np.abs(
            local_efficiency(gp) - local_efficiency(ge)
        ).mean(),
        "global_efficiency_error": abs(
            global_efficiency(gp) - global_efficiency(ge)
        ),
    }
    got = report.as_dict()
    for name, value in naive.items():
        assert abs(got[name] - value) <= 1e-12, name

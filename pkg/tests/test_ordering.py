import numpy as np
import pytest

from icpack import ann
from icpack.embeddings import EmbeddingStore
from icpack.errors import FormatError, IcpackError
from icpack.graph import DocumentGraph, build_graph
from icpack.neighbors import NeighborList
from icpack.ordering import (
    SortedPath,
    brute_force_max_path,
    cluster_order,
    knn_sequence,
    path_weight,
    random_order,
    read_path,
    tsp_path,
    write_path,
)


def graph_from_edges(n, edges):
    """edges: {(i, j): w} with i < j."""
    rows, cols, weights = [], [], []
    for (i, j), w in edges.items():
        rows += [i, j]
        cols += [j, i]
        weights += [w, w]
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float32)
    order = np.lexsort((cols, -weights, rows))
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=offsets[1:])
    return DocumentGraph(offsets, cols[order].astype(np.uint32), weights[order])


TRIANGLE = {(0, 1): 0.9, (1, 2): 0.8, (0, 2): 0.7}
TWO_PAIRS = {(0, 1): 0.9, (2, 3): 0.8}


def slow_tsp(graph):
    """Naive reference for the deterministic (rng=None) traversal."""
    n = graph.node_count
    unvisited = set(range(n))

    def dyn_deg(v):
        return sum(1 for u in graph.row_ids(v).tolist() if u in unvisited)

    def pick():
        m = min(dyn_deg(v) for v in unvisited)
        return min(v for v in unvisited if dyn_deg(v) == m)

    order, jumps, total = [], [], 0.0
    cur = pick()
    unvisited.discard(cur)
    order.append(cur)
    while unvisited:
        cands = [
            (u, w)
            for u, w in zip(
                graph.row_ids(cur).tolist(), graph.row_weights(cur).tolist()
            )
            if u in unvisited
        ]
        if cands:
            nxt, w = max(cands, key=lambda t: (t[1], -t[0]))
            total += w
        else:
            jumps.append(len(order))
            nxt = pick()
        unvisited.discard(nxt)
        order.append(nxt)
        cur = nxt
    return order, jumps, total


def test_two_pair_graph():
    g = graph_from_edges(4, TWO_PAIRS)
    p = tsp_path(g)
    assert p.order.tolist() == [0, 1, 2, 3]
    assert p.jumps.tolist() == [2]
    assert p.total_weight == pytest.approx(1.7)
    _, best = brute_force_max_path(g)
    assert best == pytest.approx(1.7)
    assert p.total_weight <= best + 1e-9


def test_triangle_greedy_is_optimal():
    g = graph_from_edges(3, TRIANGLE)
    p = tsp_path(g)
    assert p.order.tolist() == [0, 1, 2]
    assert p.total_weight == pytest.approx(1.7)
    order, best = brute_force_max_path(g)
    assert best == pytest.approx(1.7)
    assert sorted(order.tolist()) == [0, 1, 2]


def test_single_node():
    g = graph_from_edges(1, {})
    p = tsp_path(g)
    assert p.order.tolist() == [0]
    assert p.total_weight == 0.0
    assert p.jumps.tolist() == []


def test_empty_graph_rejected():
    g = graph_from_edges(0, {})
    with pytest.raises(IcpackError, match="empty"):
        tsp_path(g)


def test_argmin_variant():
    g = graph_from_edges(3, TRIANGLE)
    p = tsp_path(g, use_argmin=True)
    assert p.order.tolist() == [0, 2, 1]
    assert p.total_weight == pytest.approx(0.7 + 0.8)
    assert p.strategy == "icp-argmin"


def test_static_degree_still_permutation():
    g = graph_from_edges(4, TWO_PAIRS)
    p = tsp_path(g, static_degree=True)
    assert p.is_permutation_of(4)


def test_seeded_traversal_deterministic():
    g = graph_from_edges(4, TWO_PAIRS)
    a = tsp_path(g, rng=np.random.default_rng(5))
    b = tsp_path(g, rng=np.random.default_rng(5))
    assert np.array_equal(a.order, b.order)
    assert np.array_equal(a.jumps, b.jumps)


def random_knn_graph(seed, n=None):
    rng = np.random.default_rng(seed)
    if n is None:
        n = int(rng.integers(1, 41))
    dim, k = 8, min(int(rng.integers(1, 6)), max(n - 1, 1))
    data = rng.standard_normal((n, dim)).astype(np.float32)
    data /= np.linalg.norm(data, axis=1, keepdims=True)
    if n == 1:
        return build_graph(NeighborList.from_rows([([], [])]))
    nl = ann.exact_search(data, data, k, query_ids=np.arange(n, dtype=np.uint32))
    return build_graph(nl)


def test_matches_slow_reference():
    for seed in range(30):
        g = random_knn_graph(seed)
        fast = tsp_path(g)
        order, jumps, total = slow_tsp(g)
        assert fast.order.tolist() == order, f"seed {seed}"
        assert fast.jumps.tolist() == jumps, f"seed {seed}"
        assert fast.total_weight == pytest.approx(total), f"seed {seed}"


def test_permutation_and_weight_consistency():
    for seed in range(12):
        g = random_knn_graph(100 + seed)
        for kwargs in ({}, {"use_argmin": True}, {"static_degree": True}):
            p = tsp_path(g, rng=np.random.default_rng(seed), **kwargs)
            assert p.is_permutation_of(g.node_count)
            assert path_weight(p.order, g) == pytest.approx(p.total_weight)


def test_brute_force_errors_and_edge_cases():
    with pytest.raises(IcpackError, match="capped"):
        brute_force_max_path(graph_from_edges(11, {}))
    _, w = brute_force_max_path(graph_from_edges(3, {}))
    assert w == 0.0
    order, w = brute_force_max_path(graph_from_edges(2, {(0, 1): 0.5}))
    assert w == pytest.approx(0.5)
    assert sorted(order.tolist()) == [0, 1]


def test_greedy_never_beats_brute_force():
    for seed in range(25):
        g = random_knn_graph(seed, n=int(np.random.default_rng(seed).integers(2, 9)))
        p = tsp_path(g, rng=np.random.default_rng(seed))
        _, best = brute_force_max_path(g)
        assert p.total_weight <= best + 1e-9


def test_random_order_properties():
    ids = np.arange(17, dtype=np.uint32)
    a = random_order(ids, seed=3)
    b = random_order(ids, seed=3)
    assert np.array_equal(a.order, b.order)
    assert sorted(a.order.tolist()) == list(range(17))
    assert a.strategy == "random"


def test_random_order_never_beats_tsp_on_two_pairs():
    g = graph_from_edges(4, TWO_PAIRS)
    best = tsp_path(g).total_weight
    for seed in range(24):
        w = path_weight(random_order(np.arange(4), seed).order, g)
        assert w <= best + 1e-9


def test_knn_sequence_example():
    nl = NeighborList.from_rows(
        [
            (np.array([1], dtype=np.uint32), np.array([0.9], dtype=np.float32)),
            (np.array([0], dtype=np.uint32), np.array([0.9], dtype=np.float32)),
            (np.array([1], dtype=np.uint32), np.array([0.8], dtype=np.float32)),
        ]
    )
    p = knn_sequence(nl, k=1)
    assert p.order.tolist() == [0, 1, 1, 0, 2, 1]
    assert p.strategy == "knn"

    heads_only = knn_sequence(nl, k=0)
    assert heads_only.order.tolist() == [0, 1, 2]

    with pytest.raises(IcpackError, match="exceeds"):
        knn_sequence(nl, k=2)


def test_knn_sequence_every_head_present():
    rng = np.random.default_rng(4)
    data = rng.standard_normal((20, 8)).astype(np.float32)
    data /= np.linalg.norm(data, axis=1, keepdims=True)
    nl = ann.exact_search(data, data, 3, query_ids=np.arange(20, dtype=np.uint32))
    p = knn_sequence(nl, k=3, rng=np.random.default_rng(0))
    assert set(p.order.tolist()) == set(range(20))
    assert len(p.order) == 20 * 4


def separated_embeddings(n=40, seed=9):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(8)
    b = -a
    rows = []
    labels = []
    for i in range(n):
        base = a if i % 2 == 0 else b
        v = base + 0.05 * rng.standard_normal(8)
        rows.append(v / np.linalg.norm(v))
        labels.append(i % 2)
    return EmbeddingStore(np.array(rows, dtype=np.float32), normalized=True), labels


def test_cluster_order_groups_contiguously():
    emb, labels = separated_embeddings()
    p = cluster_order(emb, n_clusters=2, seed=1)
    assert p.is_permutation_of(40)
    seen = [labels[i] for i in p.order.tolist()]
    flips = sum(1 for x, y in zip(seen, seen[1:]) if x != y)
    assert flips == 1  # one block of each planted cluster


def test_cluster_order_degenerate_k_equals_n():
    emb, _ = separated_embeddings(n=12)
    p = cluster_order(emb, n_clusters=12, seed=2)
    assert p.is_permutation_of(12)


def test_cluster_order_too_many_clusters():
    emb, _ = separated_embeddings(n=12)
    with pytest.raises(IcpackError, match="exceeds"):
        cluster_order(emb, n_clusters=13, seed=0)


def test_path_weight_cases():
    g = graph_from_edges(3, TRIANGLE)
    assert path_weight([0, 1, 2], g) == pytest.approx(1.7)
    assert path_weight([0], g) == 0.0
    g2 = graph_from_edges(4, TWO_PAIRS)
    assert path_weight([1, 0, 2, 3], g2) == pytest.approx(0.9 + 0.0 + 0.8)
    with pytest.raises(IcpackError, match="not a graph node"):
        path_weight([0, 7], g)


def test_path_file_roundtrip(tmp_path):
    p = SortedPath(
        order=np.array([3, 1, 2, 0], dtype=np.uint32),
        jumps=np.array([2], dtype=np.int64),
        strategy="icp",
    )
    f1, f2 = tmp_path / "a.icpp", tmp_path / "b.icpp"
    write_path(p, f1)
    back = read_path(f1)
    assert back.order.tolist() == p.order.tolist()
    assert back.jumps.tolist() == p.jumps.tolist()
    assert back.strategy == "icp"
    write_path(back, f2)
    assert f1.read_bytes() == f2.read_bytes()


def test_path_file_bad_trailer(tmp_path):
    p = SortedPath(order=np.array([0, 1], dtype=np.uint32), strategy="random")
    f = tmp_path / "a.icpp"
    write_path(p, f)
    raw = f.read_bytes() + b"\x01\x02\x03"
    f.write_bytes(raw)
    with pytest.raises(FormatError, match="jump list"):
        read_path(f)


def test_unknown_strategy_rejected():
    with pytest.raises(IcpackError, match="strategy"):
        SortedPath(order=np.array([0], dtype=np.uint32), strategy="mystery")

import json

import numpy as np
import pytest

from icpack.ann import exact_search
from icpack.config import PipelineConfig
from icpack.embeddings import EmbeddingStore
from icpack.errors import IcpackError
from icpack.graph import build_graph
from icpack.metrics import (
    build_order,
    intra_context_similarity,
    repetition_rate,
    strategy_report,
    write_report,
    write_report_csv,
)
from icpack.packing import PackedContext

from test_packing import store_from_lengths


def unit_rows(rows):
    data = np.asarray(rows, dtype=np.float32)
    return EmbeddingStore(data / np.linalg.norm(data, axis=1, keepdims=True), True)


def ctx(*doc_ids):
    # metrics only look at span doc ids, token content is irrelevant here
    spans = [(d, 0, 1) for d in doc_ids]
    return PackedContext(tokens=np.zeros(len(doc_ids), dtype=np.uint32), spans=spans)


def test_repetition_rate_examples():
    assert repetition_rate(np.array([0, 1, 1, 0, 2, 1])) == 0.5
    assert repetition_rate(np.array([3, 1, 4, 0, 2])) == 0.0
    assert repetition_rate(np.array([7, 7])) == 0.5
    with pytest.raises(IcpackError):
        repetition_rate(np.array([], dtype=np.uint32))


def test_intra_similarity_single_pair():
    emb = unit_rows([[1.0, 0.0], [0.8, 0.6]])
    got = intra_context_similarity([ctx(0, 1)], emb)
    assert got == pytest.approx(0.8, abs=1e-6)


def test_intra_similarity_excludes_single_doc_contexts():
    emb = unit_rows([[1.0, 0.0], [0.8, 0.6], [0.0, 1.0]])
    # the singleton context and the context whose spans all name doc 2
    # contribute nothing
    lonely = PackedContext(
        tokens=np.zeros(4, dtype=np.uint32), spans=[(2, 0, 2), (2, 2, 2)]
    )
    got = intra_context_similarity([ctx(0, 1), ctx(2), lonely], emb)
    assert got == pytest.approx(0.8, abs=1e-6)


def test_intra_similarity_three_docs():
    emb = unit_rows([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    # pairwise cosines 1, 0, 0
    got = intra_context_similarity([ctx(0, 1, 2)], emb)
    assert got == pytest.approx(1.0 / 3.0, abs=1e-6)


def test_intra_similarity_undefined_when_all_excluded():
    emb = unit_rows([[1.0, 0.0]])
    with pytest.raises(IcpackError, match="undefined"):
        intra_context_similarity([ctx(0)], emb)


def test_intra_similarity_unnormalized_input():
    emb = EmbeddingStore(np.array([[2.0, 0.0], [3.0, 0.0]], dtype=np.float32), False)
    got = intra_context_similarity([ctx(0, 1)], emb)
    assert got == pytest.approx(1.0, abs=1e-6)


def mixture_fixture(n=60, seed=7):
    """Two well-separated clusters plus matching corpus/neighbors/graph."""
    rng = np.random.default_rng(seed)
    half = n // 2
    a = np.array([1.0, 0.0, 0.0, 0.0])
    b = np.array([0.0, 1.0, 0.0, 0.0])
    pts = np.concatenate(
        [
            a + 0.05 * rng.standard_normal((half, 4)),
            b + 0.05 * rng.standard_normal((n - half, 4)),
        ]
    )
    emb = unit_rows(pts)
    store = store_from_lengths([3] * n)
    nl = exact_search(emb.data, emb.data, 5, query_ids=np.arange(n, dtype=np.uint32))
    graph = build_graph(nl)
    return store, emb, nl, graph


def test_build_order_dispatch_and_determinism():
    store, emb, nl, graph = mixture_fixture()
    cfg = PipelineConfig(dim=4, m=2, knn_k=5, n_clusters=2, context_length=12, seed=3)
    for strategy in ("icp", "random", "cluster"):
        first = build_order(strategy, emb, nl, graph, cfg)
        again = build_order(strategy, emb, nl, graph, cfg)
        assert first.is_permutation_of(emb.count)
        assert np.array_equal(first.order, again.order)
    knn = build_order("knn", emb, nl, graph, cfg)
    assert len(knn.order) == emb.count * 6  # every head plus its 5 neighbours
    with pytest.raises(IcpackError, match="unknown ordering strategy"):
        build_order("zigzag", emb, nl, graph, cfg)


def test_ordered_beats_random_on_separated_clusters():
    store, emb, nl, graph = mixture_fixture()
    cfg = PipelineConfig(dim=4, m=2, knn_k=5, n_clusters=2, context_length=12, seed=3)
    report = strategy_report(
        store, emb, nl, graph, ["icp", "cluster", "random"], cfg
    )
    icp = report["strategies"]["icp"]["intra_context_similarity"]
    cluster = report["strategies"]["cluster"]["intra_context_similarity"]
    rand = report["strategies"]["random"]["intra_context_similarity"]
    assert icp > rand
    assert cluster > rand


def test_strategy_report_shape_and_coverage():
    store, emb, nl, graph = mixture_fixture()
    cfg = PipelineConfig(
        dim=4, m=2, knn_k=5, n_clusters=2, context_length=12, seed=3, drop_last=False
    )
    report = strategy_report(
        store, emb, nl, graph, ["icp", "random", "cluster", "knn"], cfg
    )
    assert report["document_count"] == store.document_count
    for strategy in ("icp", "random", "cluster"):
        r = report["strategies"][strategy]
        assert r["repetition_rate"] == 0.0
        assert r["coverage"]["ok"]
        assert r["order_length"] == store.document_count
        assert r["packed_tokens"] + r["dropped_tokens"] == (
            r["document_tokens"] + r["separator_count"]
        )
    knn = report["strategies"]["knn"]
    assert knn["repetition_rate"] > 0.0
    assert knn["coverage"]["ok"]


def test_strategy_failures_are_isolated():
    store, emb, nl, graph = mixture_fixture()
    cfg = PipelineConfig(dim=4, m=2, knn_k=5, n_clusters=2, context_length=12, seed=3)
    report = strategy_report(store, emb, None, graph, ["knn", "random"], cfg)
    assert "error" in report["strategies"]["knn"]
    assert report["strategies"]["random"]["coverage"]["ok"]


def test_report_is_reproducible_and_serializable(tmp_path):
    store, emb, nl, graph = mixture_fixture()
    cfg = PipelineConfig(dim=4, m=2, knn_k=5, n_clusters=2, context_length=12, seed=9)
    strategies = ["icp", "random", "cluster", "knn"]
    r1 = strategy_report(store, emb, nl, graph, strategies, cfg)
    r2 = strategy_report(store, emb, nl, graph, strategies, cfg)
    assert json.dumps(r1, sort_keys=True) == json.dumps(r2, sort_keys=True)

    p1, p2 = tmp_path / "r1.json", tmp_path / "r2.json"
    write_report(r1, p1)
    write_report(r2, p2)
    assert p1.read_bytes() == p2.read_bytes()
    parsed = json.loads(p1.read_text())
    assert parsed["config"]["seed"] == 9


def test_report_csv_flattening(tmp_path):
    store, emb, nl, graph = mixture_fixture()
    cfg = PipelineConfig(dim=4, m=2, knn_k=5, n_clusters=2, context_length=12, seed=3)
    report = strategy_report(store, emb, nl, graph, ["random"], cfg)
    p = tmp_path / "r.csv"
    write_report_csv(report, p)
    lines = p.read_text().strip().splitlines()
    assert lines[0] == "strategy,metric,value"
    cells = {tuple(line.split(",")[:2]) for line in lines[1:]}
    assert ("random", "repetition_rate") in cells
    assert ("random", "coverage.ok") in cells

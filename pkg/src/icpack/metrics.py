"""Ordering-quality metrics and the per-strategy comparison report."""

import csv
import json

import numpy as np

from .errors import IcpackError
from .ordering import (
    cluster_order,
    knn_sequence,
    path_weight,
    random_order,
    tsp_path,
)
from .packing import coverage_check, pack_contexts

# strategies whose orders may legitimately repeat documents
_REPEATING = {"knn"}


def intra_context_similarity(contexts, embeddings):
    """Mean pairwise cosine between the distinct documents of each context.

    Contexts holding fewer than two distinct documents carry no pairwise
    signal and are excluded from the average. If every context is excluded
    the metric is undefined and a hard error is raised.
    """
    unit = embeddings.data.astype(np.float64)
    if not embeddings.normalized:
        norms = np.linalg.norm(unit, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise IcpackError("intra_context_similarity: zero-norm embedding row")
        unit = unit / norms

    means = []
    for c in contexts:
        docs = c.span_doc_ids()
        if len(docs) < 2:
            continue
        g = unit[docs.astype(np.int64)] @ unit[docs.astype(np.int64)].T
        n = len(docs)
        off_diag = (g.sum() - np.trace(g)) / (n * (n - 1))
        means.append(off_diag)
    if not means:
        raise IcpackError(
            "intra_context_similarity is undefined: no context holds two distinct documents"
        )
    return float(np.mean(means))


def repetition_rate(order):
    """Fraction of order entries that repeat an earlier document: 1 - distinct/total."""
    ids = np.asarray(getattr(order, "order", order))
    if ids.ndim != 1 or ids.size == 0:
        raise IcpackError("repetition_rate of an empty order is undefined")
    return 1.0 - len(np.unique(ids)) / len(ids)


def build_order(strategy, embeddings, neighbors, graph, config):
    """Construct a document order for one strategy. Deterministic per seed."""
    rng = np.random.default_rng(config.seed)
    n = embeddings.count
    if strategy == "icp":
        return tsp_path(graph, rng=rng)
    if strategy == "random":
        return random_order(np.arange(n, dtype=np.uint32), config.seed)
    if strategy == "knn":
        k = min(config.knn_k, neighbors.max_row_len())
        return knn_sequence(neighbors, k, rng=rng)
    if strategy == "cluster":
        return cluster_order(embeddings, min(config.n_clusters, n), config.seed)
    raise IcpackError(f"unknown ordering strategy {strategy!r}")


def _strategy_metrics(strategy, store, embeddings, neighbors, graph, config):
    order = build_order(strategy, embeddings, neighbors, graph, config)
    contexts, pack_report = pack_contexts(
        order,
        store,
        config.context_length,
        separator=config.separator,
        drop_last=config.drop_last,
    )
    coverage = coverage_check(
        contexts, pack_report, store, order, allow_repeats=strategy in _REPEATING
    )
    out = {
        "order_length": int(len(order.order)),
        "repetition_rate": repetition_rate(order),
        "path_weight": path_weight(order.order, graph),
        "intra_context_similarity": intra_context_similarity(contexts, embeddings),
        "coverage": coverage,
    }
    out.update(pack_report.to_dict())
    return out


def strategy_report(store, embeddings, neighbors, graph, strategies, config):
    """Run every strategy end to end and collect its metrics.

    A strategy that fails is reported as {"error": ...} without stopping
    the others. The result is plain JSON-ready data, stable across reruns
    with the same inputs and seed.
    """
    results = {}
    for strategy in strategies:
        try:
            results[strategy] = _strategy_metrics(
                strategy, store, embeddings, neighbors, graph, config
            )
        except Exception as e:  # noqa: BLE001 - isolate per-strategy failures
            results[strategy] = {"error": f"{type(e).__name__}: {e}"}
    return {
        "document_count": int(store.document_count),
        "probed_fraction": config.probed_fraction,
        "config": config.to_dict(),
        "strategies": results,
    }


def write_report(report, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(report, sort_keys=True, indent=2, default=float) + "\n")


def _flatten(prefix, value, into):
    if isinstance(value, dict):
        for k in sorted(value):
            _flatten(f"{prefix}.{k}" if prefix else str(k), value[k], into)
    else:
        into[prefix] = value


def write_report_csv(report, path):
    """Flatten the per-strategy results to strategy,metric,value rows."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["strategy", "metric", "value"])
        for strategy in sorted(report["strategies"]):
            flat = {}
            _flatten("", report["strategies"][strategy], flat)
            for key in sorted(flat):
                v = flat[key]
                if isinstance(v, float):
                    v = f"{v:.10g}"
                w.writerow([strategy, key, v])

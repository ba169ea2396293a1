"""The end-to-end ordering pipeline.

Stages run in a fixed sequence, each reading and writing named artifact
files under one output directory. Every stage records a signature (its
parameters plus content digests of its inputs) and the digests of its
outputs; a rerun skips stages whose signature and outputs are unchanged,
so deleting any intermediate file reproduces exactly that part of the
work. A failed stage leaves its partial outputs in place for inspection
and is rerun next time because no record is written for it.
"""

import hashlib
import json
import logging
import os
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .ann import add, read_index, rescore_exact, search, sharded_search, train, write_index
from .config import PipelineConfig
from .corpus import TokenizerConfig, ingest, read_store, write_store
from .dedup import apply_keep_set, find_duplicates, write_keep_set, write_remap
from .embeddings import embed_corpus, read_embeddings, write_embeddings
from .errors import ConfigError, IcpackError, StageError
from .graph import build_graph, read_graph, write_graph
from .neighbors import read_neighbors, write_neighbors
from .ordering import path_weight, read_path, write_path
from .packing import (
    coverage_check,
    pack_contexts,
    read_contexts,
    shuffle_contexts,
    write_contexts,
    write_spans,
)

log = logging.getLogger(__name__)

STAGE_DIR = ".stages"
LOCK_NAME = ".lock"

STAGE_NAMES = (
    "ingest",
    "embed",
    "index",
    "search",
    "dedup",
    "graph",
    "sort",
    "pack",
    "stats",
)

# the artifact files a complete run must leave behind
CANONICAL_ARTIFACTS = (
    "corpus/tokens.icpt",
    "embeddings.icpe",
    "index.icpi",
    "neighbors.icpn",
    "graph.icpg",
    "path.icpp",
    "contexts.icpx",
    "report.json",
)


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@contextmanager
def _locked(out_dir):
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise IcpackError(
            f"output directory {out_dir} is in use by another run "
            f"(delete {lock} if that run crashed)"
        ) from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


class _Stage:
    def __init__(self, name, params, inputs, outputs, fn):
        self.name = name
        self.params = params
        self.inputs = inputs  # {label: absolute Path}
        self.outputs = outputs  # [relative path str]
        self.fn = fn


def _input_digests(stage):
    digests = {}
    for label, path in stage.inputs.items():
        if not Path(path).is_file():
            raise StageError(
                stage.name, f"missing input artifact {label}; run earlier stages first"
            )
        digests[label] = _sha256_file(path)
    return digests


def _run_stage(out_dir, stage):
    """Returns True when the stage was skipped as up to date."""
    signature = hashlib.sha256(
        json.dumps(
            {
                "stage": stage.name,
                "params": stage.params,
                "inputs": _input_digests(stage),
            },
            sort_keys=True,
        ).encode()
    ).hexdigest()

    state_path = out_dir / STAGE_DIR / f"{stage.name}.json"
    if state_path.is_file():
        try:
            state = json.loads(state_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            state = {}
        if state.get("signature") == signature and all(
            (out_dir / rel).is_file()
            and _sha256_file(out_dir / rel) == digest
            for rel, digest in state.get("outputs", {}).items()
        ):
            log.info("stage %s: up to date, skipped", stage.name)
            return True

    log.info("stage %s: running", stage.name)
    try:
        stage.fn()
    except StageError:
        raise
    except Exception as e:
        raise StageError(stage.name, f"{type(e).__name__}: {e}") from e

    outputs = {}
    for rel in stage.outputs:
        path = out_dir / rel
        if not path.is_file():
            raise StageError(stage.name, f"stage finished without writing {rel}")
        outputs[rel] = _sha256_file(path)
    state_path.parent.mkdir(exist_ok=True)
    state_path.write_text(
        json.dumps({"signature": signature, "outputs": outputs}, sort_keys=True, indent=2)
        + "\n",
        encoding="utf-8",
    )
    return False


def _build_stages(config, input_path, out_dir):
    def p(rel):
        return out_dir / rel

    def ingest_fn():
        ingest(input_path, TokenizerConfig(vocab_size=config.vocab_size), p("corpus"))

    def embed_fn():
        store = read_store(p("corpus"))
        if config.embedder == "builtin-hash":
            emb = embed_corpus(store, config.dim)
        else:
            emb = read_embeddings(config.external_embeddings)
            if emb.count != store.document_count:
                raise IcpackError(
                    f"external embeddings hold {emb.count} rows for "
                    f"{store.document_count} documents"
                )
            if emb.dim != config.dim:
                raise IcpackError(
                    f"external embeddings have dim {emb.dim}, config says {config.dim}"
                )
        write_embeddings(emb, p("embeddings.icpe"))

    def index_fn():
        emb = read_embeddings(p("embeddings.icpe"))
        rng = np.random.default_rng(config.seed)
        want = min(emb.count, max(config.train_sample, config.nlist, 256))
        sample = emb.data[np.sort(rng.choice(emb.count, size=want, replace=False))]
        idx = train(
            sample,
            config.nlist,
            config.m,
            config.seed,
            store_raw=config.index_mode == "flat",
        )
        add(idx, emb.data, np.arange(emb.count, dtype=np.uint32))
        write_index(idx, p("index.icpi"))

    def search_fn():
        emb = read_embeddings(p("embeddings.icpe"))
        idx = read_index(p("index.icpi"))
        n = emb.count
        query_ids = np.arange(n, dtype=np.uint32)
        if n > config.shard_size:
            shards = []
            for lo in range(0, n, config.shard_size):
                hi = min(lo + config.shard_size, n)
                shards.append((query_ids[lo:hi], emb.data[lo:hi]))
            nl = sharded_search(
                shards,
                emb.data,
                config.knn_k,
                nprobe=config.nprobe,
                trained=idx,
                query_ids=query_ids,
            )
        else:
            nl = search(idx, emb.data, config.knn_k, config.nprobe, query_ids=query_ids)
        if config.index_mode == "pq":
            # quantized scores are asymmetric; dedup thresholds and graph
            # symmetry need true cosines of the retrieved pairs
            nl = rescore_exact(nl, emb.data)
        write_neighbors(nl, p("neighbors.icpn"), k=config.knn_k)

    def dedup_fn():
        nl = read_neighbors(p("neighbors.icpn"))
        store = read_store(p("corpus"))
        emb = read_embeddings(p("embeddings.icpe"))
        keep = find_duplicates(nl, config.dedup_threshold)
        write_keep_set(keep, p("keepset.txt"))
        new_store, new_emb, new_nl, remap = apply_keep_set(store, emb, nl, keep)
        write_remap(remap, p("remap.bin"))
        write_store(new_store, p("corpus_dedup"))
        write_embeddings(new_emb, p("embeddings_dedup.icpe"))
        write_neighbors(new_nl, p("neighbors_dedup.icpn"))

    def graph_fn():
        nl = read_neighbors(p("neighbors_dedup.icpn"))
        write_graph(build_graph(nl), p("graph.icpg"))

    def sort_fn():
        g = read_graph(p("graph.icpg"))
        emb = read_embeddings(p("embeddings_dedup.icpe"))
        nl = read_neighbors(p("neighbors_dedup.icpn"))
        order = metrics_mod.build_order(config.strategy, emb, nl, g, config)
        write_path(order, p("path.icpp"))

    def pack_fn():
        order = read_path(p("path.icpp"))
        store = read_store(p("corpus_dedup"))
        contexts, _ = pack_contexts(
            order,
            store,
            config.context_length,
            separator=config.separator,
            drop_last=config.drop_last,
        )
        if not contexts:
            raise IcpackError(
                "packing produced zero contexts; lower context_length or "
                "disable drop_last"
            )
        if config.shuffle_contexts:
            contexts = shuffle_contexts(contexts, np.random.default_rng(config.seed))
        write_contexts(contexts, p("contexts.icpx"), config.context_length)
        write_spans(contexts, p("contexts_spans.jsonl"))

    def metrics_fn():
        order = read_path(p("path.icpp"))
        store = read_store(p("corpus_dedup"))
        emb = read_embeddings(p("embeddings_dedup.icpe"))
        g = read_graph(p("graph.icpg"))
        full_store = read_store(p("corpus"))

        # measure the order actually packed, not a rebuilt one
        contexts, pack_report = pack_contexts(
            order,
            store,
            config.context_length,
            separator=config.separator,
            drop_last=config.drop_last,
        )
        written_rows, _ = read_contexts(p("contexts.icpx"))
        if sum(len(r) for r in written_rows) != pack_report.packed_tokens:
            raise IcpackError("contexts.icpx disagrees with a repack of path.icpp")
        coverage = coverage_check(
            contexts,
            pack_report,
            store,
            order,
            allow_repeats=order.strategy.startswith("knn"),
        )
        result = {
            "order_length": int(len(order.order)),
            "repetition_rate": metrics_mod.repetition_rate(order),
            "path_weight": path_weight(order.order, g),
            "intra_context_similarity": metrics_mod.intra_context_similarity(
                contexts, emb
            ),
            "coverage": coverage,
        }
        result.update(pack_report.to_dict())
        report = {
            "document_count": int(full_store.document_count),
            "documents_after_dedup": int(store.document_count),
            "probed_fraction": config.probed_fraction,
            "config": config.to_dict(),
            "strategies": {order.strategy: result},
        }
        metrics_mod.write_report(report, p("report.json"))

    return [
        _Stage(
            "ingest",
            {"vocab_size": config.vocab_size},
            {"input": Path(input_path)} if input_path is not None else {},
            ["corpus/manifest.json", "corpus/tokens.icpt"],
            ingest_fn,
        ),
        _Stage(
            "embed",
            {
                "dim": config.dim,
                "embedder": config.embedder,
            },
            {
                "corpus/tokens.icpt": p("corpus/tokens.icpt"),
                **(
                    {"external_embeddings": Path(config.external_embeddings)}
                    if config.embedder == "external-file"
                    else {}
                ),
            },
            ["embeddings.icpe"],
            embed_fn,
        ),
        _Stage(
            "index",
            {
                "nlist": config.nlist,
                "m": config.m,
                "seed": config.seed,
                "index_mode": config.index_mode,
                "train_sample": config.train_sample,
            },
            {"embeddings.icpe": p("embeddings.icpe")},
            ["index.icpi"],
            index_fn,
        ),
        _Stage(
            "search",
            {
                "knn_k": config.knn_k,
                "nprobe": config.nprobe,
                "shard_size": config.shard_size,
                "index_mode": config.index_mode,
            },
            {
                "index.icpi": p("index.icpi"),
                "embeddings.icpe": p("embeddings.icpe"),
            },
            ["neighbors.icpn"],
            search_fn,
        ),
        _Stage(
            "dedup",
            {"dedup_threshold": config.dedup_threshold},
            {
                "neighbors.icpn": p("neighbors.icpn"),
                "corpus/tokens.icpt": p("corpus/tokens.icpt"),
                "embeddings.icpe": p("embeddings.icpe"),
            },
            [
                "keepset.txt",
                "remap.bin",
                "corpus_dedup/manifest.json",
                "corpus_dedup/tokens.icpt",
                "embeddings_dedup.icpe",
                "neighbors_dedup.icpn",
            ],
            dedup_fn,
        ),
        _Stage(
            "graph",
            {},
            {"neighbors_dedup.icpn": p("neighbors_dedup.icpn")},
            ["graph.icpg"],
            graph_fn,
        ),
        _Stage(
            "sort",
            {
                "strategy": config.strategy,
                "seed": config.seed,
                "knn_k": config.knn_k,
                "n_clusters": config.n_clusters,
            },
            {
                "graph.icpg": p("graph.icpg"),
                "embeddings_dedup.icpe": p("embeddings_dedup.icpe"),
                "neighbors_dedup.icpn": p("neighbors_dedup.icpn"),
            },
            ["path.icpp"],
            sort_fn,
        ),
        _Stage(
            "pack",
            {
                "context_length": config.context_length,
                "separator": config.separator,
                "drop_last": config.drop_last,
                "shuffle_contexts": config.shuffle_contexts,
                "seed": config.seed,
            },
            {
                "path.icpp": p("path.icpp"),
                "corpus_dedup/tokens.icpt": p("corpus_dedup/tokens.icpt"),
            },
            ["contexts.icpx", "contexts_spans.jsonl"],
            pack_fn,
        ),
        _Stage(
            "stats",
            {
                "strategy": config.strategy,
                "seed": config.seed,
                "context_length": config.context_length,
                "separator": config.separator,
                "drop_last": config.drop_last,
            },
            {
                "path.icpp": p("path.icpp"),
                "contexts.icpx": p("contexts.icpx"),
                "corpus/tokens.icpt": p("corpus/tokens.icpt"),
                "corpus_dedup/tokens.icpt": p("corpus_dedup/tokens.icpt"),
                "embeddings_dedup.icpe": p("embeddings_dedup.icpe"),
                "neighbors_dedup.icpn": p("neighbors_dedup.icpn"),
                "graph.icpg": p("graph.icpg"),
            },
            ["report.json"],
            metrics_fn,
        ),
    ]


def run_pipeline(config, input_path, out_dir, only=None):
    """Run the pipeline (or the `only` subset of stages) into out_dir.

    Returns {stage_name: "ran" | "skipped"} for the stages executed.
    """
    if not isinstance(config, PipelineConfig):
        raise IcpackError("run_pipeline needs a PipelineConfig")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if only is not None:
        unknown = set(only) - set(STAGE_NAMES)
        if unknown:
            raise IcpackError(f"unknown stage name(s): {', '.join(sorted(unknown))}")
        wanted = [s for s in STAGE_NAMES if s in set(only)]
    else:
        wanted = list(STAGE_NAMES)
    if "ingest" in wanted and input_path is None:
        raise ConfigError("the ingest stage needs an input JSONL file")

    results = {}
    with _locked(out_dir):
        for stage in _build_stages(config, input_path, out_dir):
            if stage.name not in wanted:
                continue
            skipped = _run_stage(out_dir, stage)
            results[stage.name] = "skipped" if skipped else "ran"
    return results


def artifact_summary(out_dir):
    """What a pipeline output directory currently holds."""
    out_dir = Path(out_dir)
    present = {rel: (out_dir / rel).is_file() for rel in CANONICAL_ARTIFACTS}
    summary = {"out_dir": str(out_dir), "artifacts": present}
    manifest = out_dir / "corpus" / "manifest.json"
    if manifest.is_file():
        summary["corpus"] = json.loads(manifest.read_text(encoding="utf-8"))
    report = out_dir / "report.json"
    if report.is_file():
        summary["report"] = json.loads(report.read_text(encoding="utf-8"))
    return summary

"""icpack: reorder a pretraining corpus so each fixed-size training context
holds semantically related documents.

Pipeline: ingest -> embed -> index -> neighbor search -> semantic dedup ->
document graph -> ordering (greedy max-weight traversal or baselines) ->
fixed-size context packing -> ordering-quality metrics.
"""

__version__ = "0.1.0"

from .ann import (
    IvfPqIndex,
    exact_search,
    probed_fraction,
    read_index,
    recall,
    rescore_exact,
    search,
    sharded_search,
    train,
    write_index,
)
from .config import PipelineConfig, parse_config
from .corpus import CorpusManifest, CorpusStore, TokenizerConfig, corpus_stats, ingest, tokenize
from .dedup import KeepSet, apply_keep_set, find_duplicates
from .embeddings import EmbeddingStore, cosine, embed_corpus, hash_embed, read_embeddings, write_embeddings
from .errors import ConfigError, FormatError, IcpackError, StageError
from .graph import DocumentGraph, build_graph, read_graph, write_graph
from .metrics import intra_context_similarity, repetition_rate, strategy_report
from .neighbors import NeighborList, read_neighbors, write_neighbors
from .ordering import SortedPath, cluster_order, knn_sequence, random_order, read_path, tsp_path, write_path
from .packing import PackReport, PackedContext, coverage_check, pack_contexts, read_contexts
from .pipeline import run_pipeline

__all__ = [
    "ConfigError",
    "CorpusManifest",
    "CorpusStore",
    "DocumentGraph",
    "EmbeddingStore",
    "FormatError",
    "IcpackError",
    "IvfPqIndex",
    "KeepSet",
    "NeighborList",
    "PackReport",
    "PackedContext",
    "PipelineConfig",
    "SortedPath",
    "StageError",
    "TokenizerConfig",
    "apply_keep_set",
    "build_graph",
    "cluster_order",
    "corpus_stats",
    "cosine",
    "coverage_check",
    "embed_corpus",
    "exact_search",
    "find_duplicates",
    "hash_embed",
    "ingest",
    "intra_context_similarity",
    "knn_sequence",
    "pack_contexts",
    "parse_config",
    "probed_fraction",
    "random_order",
    "read_contexts",
    "read_embeddings",
    "read_graph",
    "read_index",
    "read_neighbors",
    "read_path",
    "recall",
    "rescore_exact",
    "repetition_rate",
    "run_pipeline",
    "search",
    "sharded_search",
    "strategy_report",
    "tokenize",
    "train",
    "tsp_path",
    "write_embeddings",
    "write_graph",
    "write_index",
    "write_neighbors",
    "write_path",
    "__version__",
]

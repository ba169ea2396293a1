"""Document embeddings: cosine similarity, the built-in hash embedder, and
the "ICPE" embedding file.

File layout: magic "ICPE", version u32 LE = 1, count u64 LE, dim u32 LE,
flags u32 LE (bit 0 = rows are L2-normalized), then count*dim float32 LE,
row-major. Stored embeddings are normalized at write time so downstream
search can use inner product interchangeably with cosine.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, IcpackError
from .fileio import expect_eof, read_array, read_exact, read_header, write_header
from .stablehash import mix64

EMBED_MAGIC = b"ICPE"
EMBED_VERSION = 1
FLAG_NORMALIZED = 1

# Feature-space salts for the hash embedder (arbitrary, frozen constants).
_SALT_UNIGRAM = np.uint64(0xA076_1D64_78BD_642F)
_SALT_BIGRAM = np.uint64(0xE703_7ED1_A0B4_28DB)
_SALT_SIGN = np.uint64(0x8EBC_6AF0_9C88_C6E3)


@dataclass
class EmbeddingStore:
    """In-memory embedding matrix; row i is the embedding of document i."""

    data: np.ndarray  # (count, dim) float32
    normalized: bool

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise IcpackError(f"embedding matrix must be 2-d, got shape {self.data.shape}")
        if self.normalized:
            norms = np.linalg.norm(self.data, axis=1)
            if len(norms) and np.max(np.abs(norms - 1.0)) > 1e-4:
                raise IcpackError("store flagged normalized but row norms deviate from 1.0")

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def select(self, keep_ids: np.ndarray) -> "EmbeddingStore":
        return EmbeddingStore(self.data[np.asarray(keep_ids, dtype=np.int64)], self.normalized)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two vectors; hard error on a zero-norm input."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise IcpackError(f"cosine: shape mismatch {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise IcpackError("cosine undefined for a zero-norm vector")
    return float(np.dot(u, v) / (nu * nv))


def hash_embed(tokens: np.ndarray, dim: int) -> np.ndarray:
    """Deterministic feature-hashing embedding of a token sequence.

    Every token, and every adjacent 2-gram of *distinct* tokens, contributes
    +-1 to one of `dim` buckets (bucket and sign from independent stable
    hashes). A self-pair 2-gram is skipped so a run of one repeated token
    stays exactly collinear with the single token. The accumulated vector is
    L2-normalized.
    """
    tokens = np.asarray(tokens, dtype=np.uint64)
    if tokens.ndim != 1 or len(tokens) == 0:
        raise IcpackError("hash_embed requires a nonempty 1-d token sequence")
    if dim < 8:
        raise IcpackError(f"hash_embed dim must be >= 8, got {dim}")

    features = [mix64(tokens ^ _SALT_UNIGRAM)]
    if len(tokens) > 1:
        a, b = tokens[:-1], tokens[1:]
        distinct = a != b
        if np.any(distinct):
            pair = mix64(a[distinct] ^ _SALT_BIGRAM) ^ mix64(b[distinct])
            features.append(mix64(pair))
    feats = np.concatenate(features)

    buckets = (feats % np.uint64(dim)).astype(np.int64)
    signs = np.where(mix64(feats ^ _SALT_SIGN) & np.uint64(1), 1.0, -1.0)
    vec = np.zeros(dim, dtype=np.float64)
    np.add.at(vec, buckets, signs)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise IcpackError("hash_embed produced an all-zero vector; cannot normalize")
    return (vec / norm).astype(np.float32)


def embed_corpus(store, dim: int) -> EmbeddingStore:
    """hash_embed every document of a corpus store, in id order."""
    out = np.empty((store.document_count, dim), dtype=np.float32)
    for doc_id in range(store.document_count):
        out[doc_id] = hash_embed(store.doc_tokens(doc_id), dim)
    return EmbeddingStore(out, normalized=True)


def normalize_rows(data: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=np.float32)
    norms = np.linalg.norm(data, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise IcpackError("cannot normalize embedding rows with zero norm")
    return data / norms


def write_embeddings(store: EmbeddingStore, path: str | Path) -> None:
    if not store.normalized:
        store = EmbeddingStore(normalize_rows(store.data), normalized=True)
    with open(path, "wb") as f:
        write_header(f, EMBED_MAGIC, EMBED_VERSION)
        f.write(struct.pack("<QII", store.count, store.dim, FLAG_NORMALIZED))
        store.data.astype("<f4").tofile(f)


def read_embeddings(path: str | Path) -> EmbeddingStore:
    path = str(path)
    with open(path, "rb") as f:
        read_header(f, EMBED_MAGIC, EMBED_VERSION, path)
        count, dim, flags = struct.unpack("<QII", read_exact(f, 16, path, "header fields"))
        if count * dim > 2**40:
            raise FormatError(f"{path}: implausible size count={count} dim={dim}")
        data = read_array(f, "<f4", count * dim, path, "embedding rows")
        expect_eof(f, path)
    return EmbeddingStore(data.reshape(count, dim), normalized=bool(flags & FLAG_NORMALIZED))

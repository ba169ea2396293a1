"""Document ingestion, tokenization, and the on-disk document store.

The store is a directory holding ``manifest.json`` and ``tokens.icpt``.
Token file layout: magic "ICPT", version u32 LE, doc_count u64 LE, then per
document a u32 LE token count followed by that many u32 LE token ids.

The tokenizer is a deterministic stand-in, not a real subword model: text is
split on whitespace and each word is hashed into the id range
[3, vocab_size). Ids 0..2 are reserved (0 pad, 1 document separator, 2
unknown) and are never produced by tokenization.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import FormatError, IcpackError
from .fileio import expect_eof, read_array, read_exact, read_header, write_header
from .stablehash import hash_word

log = logging.getLogger(__name__)

TOKENS_MAGIC = b"ICPT"
TOKENS_VERSION = 1
MANIFEST_NAME = "manifest.json"
TOKENS_NAME = "tokens.icpt"

PAD_ID = 0
SEPARATOR_ID = 1
UNKNOWN_ID = 2
FIRST_WORD_ID = 3


@dataclass(frozen=True)
class TokenizerConfig:
    vocab_size: int = 65536
    tokenizer_id: str = "hashword-v1"

    def __post_init__(self):
        if self.vocab_size < 4:
            raise ValueError(
                f"vocab_size must be >= 4 (3 reserved ids + 1), got {self.vocab_size}"
            )


@dataclass(frozen=True)
class Document:
    id: int
    text: str
    tokens: np.ndarray

    @property
    def token_count(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class CorpusManifest:
    document_count: int
    total_tokens: int
    tokenizer_id: str
    vocab_size: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, raw: str) -> "CorpusManifest":
        return cls(**json.loads(raw))


def tokenize(text: str, cfg: TokenizerConfig) -> np.ndarray:
    """Map text to token ids: 3 + blake2b64(word) mod (vocab_size - 3) per word.

    Deterministic across runs and platforms; the empty string maps to an
    empty sequence.
    """
    words = text.split()
    if not words:
        return np.empty(0, dtype=np.uint32)
    span = cfg.vocab_size - 3
    ids = [FIRST_WORD_ID + hash_word(w) % span for w in words]
    return np.asarray(ids, dtype=np.uint32)


class CorpusStore:
    """Immutable tokenized corpus: ragged token rows in a flat array."""

    def __init__(self, offsets: np.ndarray, tokens: np.ndarray, manifest: CorpusManifest):
        self.offsets = np.ascontiguousarray(offsets, dtype=np.int64)
        self.tokens = np.ascontiguousarray(tokens, dtype=np.uint32)
        self.manifest = manifest
        if len(self.offsets) != manifest.document_count + 1:
            raise IcpackError("offsets length does not match manifest document_count")

    @property
    def document_count(self) -> int:
        return self.manifest.document_count

    def token_counts(self) -> np.ndarray:
        return np.diff(self.offsets).astype(np.int64)

    def doc_tokens(self, doc_id: int) -> np.ndarray:
        return self.tokens[self.offsets[doc_id] : self.offsets[doc_id + 1]]

    def select(self, keep_ids: np.ndarray, manifest_update: bool = True) -> "CorpusStore":
        """New store holding only keep_ids, in the given order (ids become 0..M-1)."""
        keep_ids = np.asarray(keep_ids, dtype=np.int64)
        counts = self.token_counts()[keep_ids]
        offsets = np.zeros(len(keep_ids) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        flat = np.empty(int(offsets[-1]), dtype=np.uint32)
        for new_id, old_id in enumerate(keep_ids):
            flat[offsets[new_id] : offsets[new_id + 1]] = self.doc_tokens(int(old_id))
        manifest = CorpusManifest(
            document_count=len(keep_ids),
            total_tokens=int(offsets[-1]),
            tokenizer_id=self.manifest.tokenizer_id,
            vocab_size=self.manifest.vocab_size,
        )
        return CorpusStore(offsets, flat, manifest)


def ingest(jsonl_path: str | Path, cfg: TokenizerConfig, store_dir: str | Path) -> CorpusManifest:
    """Tokenize a JSONL corpus and persist the document store.

    Ids are assigned by line order. Documents that tokenize to nothing are
    skipped (with a logged count); a malformed line or a corpus with zero
    surviving documents is a hard error.
    """
    jsonl_path = Path(jsonl_path)
    rows: list[np.ndarray] = []
    skipped = 0
    with open(jsonl_path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                raise IcpackError(f"{jsonl_path}:{lineno}: blank line in JSONL input")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise IcpackError(f"{jsonl_path}:{lineno}: malformed JSON ({e.msg})") from e
            if not isinstance(obj, dict) or not isinstance(obj.get("text"), str):
                raise IcpackError(
                    f"{jsonl_path}:{lineno}: expected an object with a string 'text' field"
                )
            tokens = tokenize(obj["text"], cfg)
            if len(tokens) == 0:
                skipped += 1
                continue
            rows.append(tokens)
    if skipped:
        log.info("ingest: skipped %d empty-after-tokenization document(s)", skipped)
    if not rows:
        raise IcpackError(f"{jsonl_path}: zero surviving documents after tokenization")

    counts = np.array([len(r) for r in rows], dtype=np.int64)
    offsets = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    flat = np.concatenate(rows) if rows else np.empty(0, dtype=np.uint32)
    manifest = CorpusManifest(
        document_count=len(rows),
        total_tokens=int(offsets[-1]),
        tokenizer_id=cfg.tokenizer_id,
        vocab_size=cfg.vocab_size,
    )
    store = CorpusStore(offsets, flat, manifest)
    write_store(store, store_dir)
    return manifest


def write_store(store: CorpusStore, store_dir: str | Path) -> None:
    store_dir = Path(store_dir)
    store_dir.mkdir(parents=True, exist_ok=True)
    (store_dir / MANIFEST_NAME).write_text(store.manifest.to_json(), encoding="utf-8")
    with open(store_dir / TOKENS_NAME, "wb") as f:
        write_header(f, TOKENS_MAGIC, TOKENS_VERSION)
        f.write(struct.pack("<Q", store.document_count))
        counts = store.token_counts()
        for doc_id in range(store.document_count):
            f.write(struct.pack("<I", int(counts[doc_id])))
            store.doc_tokens(doc_id).astype("<u4").tofile(f)


def read_store(store_dir: str | Path) -> CorpusStore:
    store_dir = Path(store_dir)
    manifest_path = store_dir / MANIFEST_NAME
    tokens_path = store_dir / TOKENS_NAME
    if not manifest_path.is_file() or not tokens_path.is_file():
        raise IcpackError(f"document store missing or incomplete at {store_dir}")
    manifest = CorpusManifest.from_json(manifest_path.read_text(encoding="utf-8"))
    path = str(tokens_path)
    with open(tokens_path, "rb") as f:
        read_header(f, TOKENS_MAGIC, TOKENS_VERSION, path)
        (doc_count,) = struct.unpack("<Q", read_exact(f, 8, path, "document count"))
        offsets = np.zeros(doc_count + 1, dtype=np.int64)
        rows = []
        for doc_id in range(doc_count):
            (count,) = struct.unpack("<I", read_exact(f, 4, path, "token count"))
            rows.append(read_array(f, "<u4", count, path, f"tokens of doc {doc_id}"))
            offsets[doc_id + 1] = offsets[doc_id] + count
        expect_eof(f, path)
    flat = np.concatenate(rows) if rows else np.empty(0, dtype=np.uint32)
    store = CorpusStore(offsets, flat, manifest)
    recomputed = corpus_stats(store)
    if recomputed != manifest:
        raise FormatError(f"{store_dir}: manifest disagrees with token file contents")
    return store


def corpus_stats(store: CorpusStore) -> CorpusManifest:
    """Recompute the manifest from store contents (must equal the persisted one)."""
    if store.document_count == 0:
        raise IcpackError("empty document store")
    return CorpusManifest(
        document_count=store.document_count,
        total_tokens=int(store.token_counts().sum()),
        tokenizer_id=store.manifest.tokenizer_id,
        vocab_size=store.manifest.vocab_size,
    )

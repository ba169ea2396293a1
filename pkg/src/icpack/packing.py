"""Pack an ordered corpus into fixed-length training contexts.

Documents are emitted in order as one token stream (each followed by a
separator token when enabled) and the stream is cut every `context_length`
tokens. A document may straddle a cut. Span records trace every context
position back to the document that produced it.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import SEPARATOR_ID
from .errors import FormatError, IcpackError
from . import fileio

CONTEXTS_MAGIC = b"ICPX"
CONTEXTS_VERSION = 1


@dataclass
class PackedContext:
    tokens: np.ndarray
    # (doc_id, start, length): `start` indexes into the document's emitted
    # sequence (its tokens plus the trailing separator slot, if any), so a
    # straddling document shows up as one span per context it touches and
    # the span lengths of a context always sum to len(tokens).
    spans: list = field(default_factory=list)

    def span_doc_ids(self):
        return np.array(sorted({d for d, _, _ in self.spans}), dtype=np.uint32)


@dataclass
class PackReport:
    context_count: int
    packed_tokens: int
    dropped_tokens: int
    separator_count: int
    document_tokens: int

    def to_dict(self):
        return {
            "context_count": self.context_count,
            "packed_tokens": self.packed_tokens,
            "dropped_tokens": self.dropped_tokens,
            "separator_count": self.separator_count,
            "document_tokens": self.document_tokens,
        }


def _order_ids(order):
    ids = np.asarray(getattr(order, "order", order))
    if ids.ndim != 1 or ids.size == 0:
        raise IcpackError("nothing to pack: order is empty")
    return ids.astype(np.int64)


def pack_contexts(order, store, context_length, separator=True, drop_last=True):
    """Return (contexts, report) for the given document order."""
    if context_length < 2:
        raise IcpackError(f"context_length must be at least 2, got {context_length}")
    ids = _order_ids(order)
    counts = store.token_counts()
    if ids.min() < 0 or ids.max() >= store.document_count:
        raise IcpackError(f"order names document {int(ids.max())} outside the corpus")

    sep = 1 if separator else 0
    emit_lens = counts[ids].astype(np.int64) + sep
    offsets = np.zeros(len(ids) + 1, dtype=np.int64)
    np.cumsum(emit_lens, out=offsets[1:])
    total = int(offsets[-1])

    stream = np.empty(total, dtype=np.uint32)
    for i, d in enumerate(ids):
        pos = offsets[i]
        toks = store.doc_tokens(int(d))
        stream[pos : pos + len(toks)] = toks
        if sep:
            stream[pos + len(toks)] = SEPARATOR_ID

    full, tail = divmod(total, context_length)
    n_contexts = full + (1 if tail and not drop_last else 0)
    kept = full * context_length + (tail if not drop_last else 0)

    contexts = []
    for c in range(n_contexts):
        lo = c * context_length
        hi = min(lo + context_length, total)
        # emissions overlapping [lo, hi)
        first = int(np.searchsorted(offsets, lo, side="right")) - 1
        last = int(np.searchsorted(offsets, hi, side="left"))
        spans = []
        for j in range(first, last):
            s = max(lo, offsets[j])
            e = min(hi, offsets[j + 1])
            if e > s:
                spans.append((int(ids[j]), int(s - offsets[j]), int(e - s)))
        contexts.append(PackedContext(tokens=stream[lo:hi].copy(), spans=spans))

    report = PackReport(
        context_count=n_contexts,
        packed_tokens=kept,
        dropped_tokens=total - kept,
        separator_count=int(sep * len(ids)),
        document_tokens=int(counts[ids].sum()),
    )
    return contexts, report


def coverage_check(contexts, report, store, order, allow_repeats=False):
    """Verify packing bookkeeping; raises IcpackError naming the first bad doc.

    Every document in `order` whose emission begins inside a kept context
    must open exactly one span (repeated appearances are only tolerated
    when allow_repeats is set, e.g. for neighbour-expanded orders).
    """
    if report.document_tokens + report.separator_count != (
        report.packed_tokens + report.dropped_tokens
    ):
        raise IcpackError(
            "token conservation violated: "
            f"{report.document_tokens} + {report.separator_count} != "
            f"{report.packed_tokens} + {report.dropped_tokens}"
        )
    got_packed = sum(len(c.tokens) for c in contexts)
    if got_packed != report.packed_tokens:
        raise IcpackError(
            f"contexts hold {got_packed} tokens but the report says {report.packed_tokens}"
        )
    for c in contexts:
        if sum(length for _, _, length in c.spans) != len(c.tokens):
            raise IcpackError("span lengths do not cover a context")

    ids = _order_ids(order)
    counts = store.token_counts()
    sep = 1 if report.separator_count else 0
    emit_lens = counts[ids].astype(np.int64) + sep
    starts = np.concatenate(([0], np.cumsum(emit_lens)[:-1]))

    opened = {}
    for c in contexts:
        for d, start, _ in c.spans:
            if start == 0:
                opened[d] = opened.get(d, 0) + 1

    expected = {}
    dropped_docs = 0
    for d, s, el in zip(ids, starts, emit_lens):
        if el == 0:
            continue
        if s < report.packed_tokens:
            expected[int(d)] = expected.get(int(d), 0) + 1
        else:
            dropped_docs += 1

    repeated = sum(1 for d, n in expected.items() if n > 1)
    if repeated and not allow_repeats:
        bad = min(d for d, n in expected.items() if n > 1)
        raise IcpackError(f"document {bad} appears more than once in the order")
    for d, want in expected.items():
        got = opened.get(d, 0)
        ok = got >= 1 if allow_repeats else got == want
        if not ok:
            raise IcpackError(
                f"document {d} opens {got} spans in packed contexts, expected {want}"
            )
    for d in opened:
        if d not in expected:
            raise IcpackError(f"document {d} appears in spans but not in the order")

    return {
        "documents": int(store.document_count),
        "placed_documents": len(expected),
        "dropped_documents": dropped_docs,
        "repeated_documents": repeated,
        "ok": True,
    }


def shuffle_contexts(contexts, rng):
    """Seeded reshuffle of whole contexts. A short final context stays last
    so the fixed-length file layout is preserved."""
    if len(contexts) < 2:
        return list(contexts)
    body = list(contexts)
    tail = []
    if len(body[-1].tokens) != len(body[0].tokens):
        tail = [body.pop()]
    perm = rng.permutation(len(body))
    return [body[i] for i in perm] + tail


def write_contexts(contexts, path, context_length):
    if not contexts:
        raise IcpackError("refusing to write an empty context set")
    for c in contexts[:-1]:
        if len(c.tokens) != context_length:
            raise IcpackError("a non-final context is not exactly context_length tokens")
    if not 0 < len(contexts[-1].tokens) <= context_length:
        raise IcpackError("final context length is out of range")
    with open(path, "wb") as f:
        fileio.write_header(f, CONTEXTS_MAGIC, CONTEXTS_VERSION)
        f.write(np.uint32(context_length).tobytes())
        f.write(np.uint64(len(contexts)).tobytes())
        for c in contexts:
            fileio.write_array(f, c.tokens, "<u4")


def read_contexts(path):
    """Returns (list of token arrays, context_length)."""
    with open(path, "rb") as f:
        fileio.read_header(f, CONTEXTS_MAGIC, CONTEXTS_VERSION, path)
        context_length = int(
            np.frombuffer(fileio.read_exact(f, 4, path, "context length"), "<u4")[0]
        )
        count = int(np.frombuffer(fileio.read_exact(f, 8, path, "context count"), "<u8")[0])
        if count == 0:
            raise FormatError(f"{path}: context count is zero")
        body = f.read()
    if len(body) % 4:
        raise FormatError(f"{path}: token payload is not a whole number of tokens")
    tokens = np.frombuffer(body, dtype="<u4")
    final = len(tokens) - (count - 1) * context_length
    if not 0 < final <= context_length:
        raise FormatError(
            f"{path}: payload of {len(tokens)} tokens does not fit "
            f"{count} contexts of length {context_length}"
        )
    out = [
        tokens[i * context_length : min((i + 1) * context_length, len(tokens))].copy()
        for i in range(count)
    ]
    return out, context_length


def write_spans(contexts, path):
    with open(path, "w", encoding="utf-8") as f:
        for i, c in enumerate(contexts):
            rec = {"context": i, "spans": [list(s) for s in c.spans]}
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_spans(path):
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("context") != len(out):
                raise FormatError(f"{path}: span records are out of order")
            out.append([tuple(s) for s in rec["spans"]])
    return out

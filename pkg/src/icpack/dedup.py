"""Near-duplicate removal driven by the retrieval neighbor lists.

The duplicate test only sees pairs that appear in some kNN list, so the
guarantee is per observed pair, not all-pairs. Survivor choice is the
lowest id: ids are scanned ascending and id j is dropped exactly when an
already-kept lower id i was observed with similarity >= threshold.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import IcpackError

KEEPSET_NAME = "keepset.txt"
REMAP_NAME = "remap.bin"


@dataclass
class KeepSet:
    kept: np.ndarray  # uint32, ascending
    removed: np.ndarray  # uint32, ascending
    threshold: float

    def __post_init__(self):
        self.kept = np.asarray(self.kept, dtype=np.uint32)
        self.removed = np.asarray(self.removed, dtype=np.uint32)
        total = len(self.kept) + len(self.removed)
        both = np.concatenate([self.kept, self.removed])
        if len(np.unique(both)) != total or (total and both.max() != total - 1):
            raise IcpackError("kept and removed must partition 0..n-1 exactly")

    @property
    def doc_count(self):
        return len(self.kept) + len(self.removed)

    def remap(self):
        """old id -> new dense id for kept docs, -1 for removed."""
        table = np.full(self.doc_count, -1, dtype=np.int64)
        table[self.kept] = np.arange(len(self.kept))
        return table


def find_duplicates(neighbors, threshold):
    if not 0.0 < threshold <= 1.0:
        raise IcpackError(f"threshold must be in (0, 1], got {threshold}")
    n = neighbors.query_count
    # collect every observed pair (i < j) at or above threshold
    over = [[] for _ in range(n)]  # over[j] = lower ids observed >= threshold
    for i in range(n):
        ids = neighbors.row_ids(i)
        hits = ids[neighbors.row_scores(i) >= threshold]
        for j in hits.tolist():
            if j >= n:
                raise IcpackError(f"neighbor id {j} outside corpus of {n}")
            lo, hi = (i, j) if i < j else (j, i)
            if lo != hi:
                over[hi].append(lo)

    keep_mask = np.ones(n, dtype=bool)
    for j in range(n):
        if any(keep_mask[i] for i in over[j]):
            keep_mask[j] = False
    ids = np.arange(n, dtype=np.uint32)
    return KeepSet(kept=ids[keep_mask], removed=ids[~keep_mask], threshold=threshold)


def apply_keep_set(store, embeddings, neighbors, keep):
    """Filter corpus, embeddings, and neighbor lists down to kept ids.

    Removed ids are purged from surviving lists (which may shrink) and all
    surviving ids are renumbered densely. Returns
    (store, embeddings, neighbors, remap table).
    """
    from .neighbors import NeighborList

    n = keep.doc_count
    if store.document_count != n or embeddings.count != n or neighbors.query_count != n:
        raise IcpackError("keep set does not cover all structures")
    remap = keep.remap()
    kept_idx = keep.kept.astype(np.int64)
    new_store = store.select(kept_idx)
    new_embeddings = embeddings.select(kept_idx)

    rows = []
    for old in kept_idx.tolist():
        ids = neighbors.row_ids(old)
        scores = neighbors.row_scores(old)
        mapped = remap[ids]
        alive = mapped >= 0
        rows.append((mapped[alive].astype(np.uint32), scores[alive]))
    new_neighbors = NeighborList.from_rows(rows)

    kept_count = len(keep.kept)
    if len(new_neighbors.ids) and new_neighbors.ids.max() >= kept_count:
        raise IcpackError("dangling neighbor id survived the purge")
    return new_store, new_embeddings, new_neighbors, remap


def write_keep_set(keep, path):
    header = {
        "threshold": keep.threshold,
        "kept": len(keep.kept),
        "removed": len(keep.removed),
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for rid in keep.removed.tolist():
            f.write(f"{rid}\n")


def read_keep_set(path, doc_count):
    with open(path, "r", encoding="utf-8") as f:
        header = json.loads(f.readline())
        removed = np.array([int(line) for line in f], dtype=np.uint32)
    if len(removed) != header["removed"]:
        raise IcpackError(f"{path}: removed count does not match header")
    mask = np.ones(doc_count, dtype=bool)
    mask[removed] = False
    kept = np.arange(doc_count, dtype=np.uint32)[mask]
    if len(kept) != header["kept"]:
        raise IcpackError(f"{path}: kept count does not match header")
    return KeepSet(kept=kept, removed=removed, threshold=header["threshold"])


def write_remap(remap, path):
    """u32 LE (old, new) pairs for surviving docs."""
    old = np.flatnonzero(remap >= 0)
    pairs = np.empty((len(old), 2), dtype="<u4")
    pairs[:, 0] = old
    pairs[:, 1] = remap[old]
    with open(path, "wb") as f:
        f.write(pairs.tobytes())

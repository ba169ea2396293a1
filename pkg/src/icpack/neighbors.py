"""Per-query neighbor lists and their on-disk format.

Rows are ragged in memory (CSR layout, query ids implicit 0..Q-1). The file
format is fixed-k: short rows are padded with a sentinel entry
(id 0xFFFFFFFF, score -1.0) that is stripped back out on read.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, IcpackError
from .fileio import expect_eof, read_array, read_exact, read_header, write_header

NEIGHBORS_MAGIC = b"ICPN"
NEIGHBORS_VERSION = 1

SENTINEL_ID = 0xFFFFFFFF
SENTINEL_SCORE = np.float32(-1.0)

_ENTRY = np.dtype([("id", "<u4"), ("score", "<f4")])


@dataclass
class NeighborList:
    offsets: np.ndarray  # int64, len Q+1
    ids: np.ndarray  # uint32, flat
    scores: np.ndarray  # float32, flat
    truncated: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.int64)
        self.ids = np.ascontiguousarray(self.ids, dtype=np.uint32)
        self.scores = np.ascontiguousarray(self.scores, dtype=np.float32)
        if len(self.offsets) < 1 or self.offsets[0] != 0:
            raise IcpackError("neighbor offsets must start at 0")
        if self.offsets[-1] != len(self.ids) or len(self.ids) != len(self.scores):
            raise IcpackError("neighbor offsets do not cover the entry arrays")
        if np.any(np.diff(self.offsets) < 0):
            raise IcpackError("neighbor offsets must be non-decreasing")

    @classmethod
    def from_rows(cls, rows):
        """rows: iterable of (ids array, scores array) per query."""
        offsets = [0]
        all_ids, all_scores = [], []
        for ids, scores in rows:
            if len(ids) != len(scores):
                raise IcpackError("row ids and scores differ in length")
            all_ids.append(np.asarray(ids, dtype=np.uint32))
            all_scores.append(np.asarray(scores, dtype=np.float32))
            offsets.append(offsets[-1] + len(ids))
        cat = lambda parts, dt: (
            np.concatenate(parts) if parts else np.array([], dtype=dt)
        )
        return cls(
            np.asarray(offsets, dtype=np.int64),
            cat(all_ids, np.uint32),
            cat(all_scores, np.float32),
        )

    @property
    def query_count(self):
        return len(self.offsets) - 1

    def row_ids(self, q):
        return self.ids[self.offsets[q] : self.offsets[q + 1]]

    def row_scores(self, q):
        return self.scores[self.offsets[q] : self.offsets[q + 1]]

    def max_row_len(self):
        if self.query_count == 0:
            return 0
        return int(np.diff(self.offsets).max())

    def validate_sorted(self):
        """Scores non-increasing within each row; self ids absent."""
        for q in range(self.query_count):
            s = self.row_scores(q)
            if len(s) > 1 and np.any(np.diff(s) > 0):
                raise IcpackError(f"row {q} scores are not non-increasing")
            if np.any(self.row_ids(q) == q):
                raise IcpackError(f"row {q} contains its own query id")


def write_neighbors(nl, path, k=None):
    if k is None:
        k = nl.max_row_len()
    if nl.max_row_len() > k:
        raise IcpackError(f"a row exceeds k={k}")
    q = nl.query_count
    table = np.empty((q, k), dtype=_ENTRY)
    table["id"] = SENTINEL_ID
    table["score"] = SENTINEL_SCORE
    for i in range(q):
        n = nl.offsets[i + 1] - nl.offsets[i]
        table["id"][i, :n] = nl.row_ids(i)
        table["score"][i, :n] = nl.row_scores(i)
    with open(path, "wb") as f:
        write_header(f, NEIGHBORS_MAGIC, NEIGHBORS_VERSION)
        f.write(np.uint64(q).tobytes())
        f.write(np.uint32(k).tobytes())
        f.write(table.tobytes())


def read_neighbors(path):
    path = str(path)
    with open(path, "rb") as f:
        read_header(f, NEIGHBORS_MAGIC, NEIGHBORS_VERSION, path)
        q = int(np.frombuffer(read_exact(f, 8, path, "doc count"), dtype="<u8")[0])
        k = int(np.frombuffer(read_exact(f, 4, path, "k"), dtype="<u4")[0])
        table = read_array(f, _ENTRY, q * k, path, "neighbor entries").reshape(q, k)
        expect_eof(f, path)
    rows = []
    for i in range(q):
        keep = table["id"][i] != SENTINEL_ID
        if np.any(keep[1:] & ~keep[:-1]):
            raise FormatError("sentinel padding interrupted by a real entry")
        rows.append((table["id"][i][keep], table["score"][i][keep]))
    return NeighborList.from_rows(rows)

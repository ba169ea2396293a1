"""Undirected weighted document graph built from kNN lists.

An edge i-j exists iff j appears in i's neighbor list or vice versa; its
weight is the cosine similarity. Adjacency is CSR, each row sorted by
descending weight then ascending id so greedy traversal can walk a row
front to back.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, IcpackError
from .fileio import expect_eof, read_array, read_exact, read_header, write_header

GRAPH_MAGIC = b"ICPG"
GRAPH_VERSION = 1

_PAIR = np.dtype([("id", "<u4"), ("weight", "<f4")])
_SCORE_TOL = 1e-5


@dataclass
class DocumentGraph:
    offsets: np.ndarray  # int64, node_count + 1
    nbr_ids: np.ndarray  # uint32, flat adjacency
    nbr_weights: np.ndarray  # float32, parallel to nbr_ids
    _by_id: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.int64)
        self.nbr_ids = np.ascontiguousarray(self.nbr_ids, dtype=np.uint32)
        self.nbr_weights = np.ascontiguousarray(self.nbr_weights, dtype=np.float32)
        if self.offsets[0] != 0 or self.offsets[-1] != len(self.nbr_ids):
            raise IcpackError("graph offsets do not cover the adjacency arrays")

    @property
    def node_count(self):
        return len(self.offsets) - 1

    @property
    def edge_count(self):
        return len(self.nbr_ids) // 2

    def degrees(self):
        return np.diff(self.offsets)

    def row_ids(self, node):
        return self.nbr_ids[self.offsets[node] : self.offsets[node + 1]]

    def row_weights(self, node):
        return self.nbr_weights[self.offsets[node] : self.offsets[node + 1]]

    def row_sources(self):
        """Flat source-node array parallel to nbr_ids."""
        return np.repeat(np.arange(self.node_count, dtype=np.int64), self.degrees())

    def edge_weight(self, i, j):
        """Weight of edge i-j, or None when absent."""
        if self._by_id is None:
            order = np.lexsort((self.nbr_ids, self.row_sources()))
            self._by_id = (self.nbr_ids[order], self.nbr_weights[order])
        ids, weights = self._by_id
        lo, hi = self.offsets[i], self.offsets[i + 1]
        pos = lo + np.searchsorted(ids[lo:hi], j)
        if pos < hi and ids[pos] == j:
            return float(weights[pos])
        return None


def build_graph(neighbors):
    """Union the directed kNN edges into a symmetric weighted graph."""
    n = neighbors.query_count
    src = np.repeat(np.arange(n, dtype=np.int64), np.diff(neighbors.offsets))
    dst = neighbors.ids.astype(np.int64)
    score = neighbors.scores.astype(np.float64)
    if np.any(src == dst):
        raise IcpackError("neighbor lists contain self-matches")
    if len(dst) and dst.max() >= n:
        raise IcpackError("neighbor id outside the corpus")

    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    order = np.lexsort((hi, lo))
    lo, hi, score = lo[order], hi[order], score[order]
    if len(lo):
        same = (lo[1:] == lo[:-1]) & (hi[1:] == hi[:-1])
        clash = same & (np.abs(score[1:] - score[:-1]) > _SCORE_TOL)
        if np.any(clash):
            at = int(np.flatnonzero(clash)[0])
            raise IcpackError(
                f"edge {lo[at]}-{hi[at]} carries disagreeing scores "
                f"{score[at]:.6f} vs {score[at + 1]:.6f}"
            )
        first = np.concatenate([[True], ~same])
        lo, hi, score = lo[first], hi[first], score[first]

    rows = np.concatenate([lo, hi])
    cols = np.concatenate([hi, lo])
    weights = np.concatenate([score, score]).astype(np.float32)
    order = np.lexsort((cols, -weights, rows))
    rows, cols, weights = rows[order], cols[order], weights[order]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=offsets[1:])
    return DocumentGraph(offsets, cols.astype(np.uint32), weights)


def dynamic_degrees(graph, unvisited_mask):
    """Degree of each node counted over edges into unvisited nodes."""
    src = graph.row_sources()
    sel = unvisited_mask[graph.nbr_ids]
    return np.bincount(src[sel], minlength=graph.node_count)


def min_degree_select(graph, unvisited, rng=None, static=False):
    """Pick an unvisited node of minimum degree.

    Degree is dynamic (restricted to unvisited endpoints) unless static is
    set. Ties go to a seeded random choice, or to the lowest id when rng is
    None.
    """
    unvisited = np.asarray(unvisited, dtype=np.int64)
    if len(unvisited) == 0:
        raise IcpackError("cannot select from an empty unvisited set")
    if static:
        deg = graph.degrees()[unvisited]
    else:
        mask = np.zeros(graph.node_count, dtype=bool)
        mask[unvisited] = True
        deg = dynamic_degrees(graph, mask)[unvisited]
    bucket = np.sort(unvisited[deg == deg.min()])
    if rng is None:
        return int(bucket[0])
    return int(bucket[rng.integers(len(bucket))])


def write_graph(graph, path):
    with open(path, "wb") as f:
        write_header(f, GRAPH_MAGIC, GRAPH_VERSION)
        f.write(np.uint64(graph.node_count).tobytes())
        f.write(np.ascontiguousarray(graph.offsets, dtype="<u8").tobytes())
        pairs = np.empty(len(graph.nbr_ids), dtype=_PAIR)
        pairs["id"] = graph.nbr_ids
        pairs["weight"] = graph.nbr_weights
        f.write(pairs.tobytes())


def read_graph(path):
    path = str(path)
    with open(path, "rb") as f:
        read_header(f, GRAPH_MAGIC, GRAPH_VERSION, path)
        n = int(np.frombuffer(read_exact(f, 8, path, "node count"), dtype="<u8")[0])
        offsets = read_array(f, "<u8", n + 1, path, "offsets").astype(np.int64)
        if n and (offsets[0] != 0 or np.any(np.diff(offsets) < 0)):
            raise FormatError(f"{path}: corrupt offsets")
        pairs = read_array(f, _PAIR, int(offsets[-1]) if n else 0, path, "adjacency")
        expect_eof(f, path)
    return DocumentGraph(offsets, pairs["id"], pairs["weight"])

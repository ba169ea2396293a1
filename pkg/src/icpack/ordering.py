"""Document ordering strategies.

The main strategy walks the document graph greedily: start at a minimum
degree node, repeatedly step to the best unvisited neighbor, and when
stranded jump (weight 0) to a random unvisited minimum-degree node. The
baselines are a seeded shuffle, kNN grouping (with repetition), and
cluster grouping.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, IcpackError
from .fileio import read_array, read_exact, read_header, write_header
from .graph import dynamic_degrees
from .kmeans import kmeans

PATH_MAGIC = b"ICPP"
PATH_VERSION = 1

STRATEGY_TAGS = {"icp": 1, "random": 2, "knn": 3, "cluster": 4, "icp-argmin": 5}
_TAG_NAMES = {v: k for k, v in STRATEGY_TAGS.items()}

BRUTE_FORCE_LIMIT = 10


@dataclass
class SortedPath:
    order: np.ndarray  # uint32 document ids, repetition allowed for knn
    jumps: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    total_weight: float = None
    strategy: str = "icp"

    def __post_init__(self):
        self.order = np.ascontiguousarray(self.order, dtype=np.uint32)
        self.jumps = np.ascontiguousarray(self.jumps, dtype=np.int64)
        if self.strategy not in STRATEGY_TAGS:
            raise IcpackError(f"unknown strategy {self.strategy!r}")

    def __len__(self):
        return len(self.order)

    def is_permutation_of(self, n):
        return len(self.order) == n and len(np.unique(self.order)) == n


def tsp_path(graph, rng=None, use_argmin=False, static_degree=False):
    """Greedy heavy-path traversal of the whole graph.

    rng=None selects lowest-id tie-breaks everywhere (reproducible without
    a seed); use_argmin flips the extension step to the lightest neighbor.
    """
    n = graph.node_count
    if n == 0:
        raise IcpackError("cannot order an empty graph")

    visited = np.zeros(n, dtype=bool)
    if static_degree:
        dyndeg = graph.degrees().copy()
    else:
        dyndeg = dynamic_degrees(graph, np.ones(n, dtype=bool)).copy()

    def visit(v):
        visited[v] = True
        if not static_degree:
            dyndeg[graph.row_ids(v)] -= 1

    def pick_start():
        ids = np.flatnonzero(~visited)
        bucket = ids[dyndeg[ids] == dyndeg[ids].min()]
        if rng is None:
            return int(bucket[0])
        return int(bucket[rng.integers(len(bucket))])

    order = np.empty(n, dtype=np.uint32)
    jumps = []
    total = 0.0
    cursor = np.zeros(n, dtype=np.int64)  # per-node scan position, max mode

    current = pick_start()
    visit(current)
    order[0] = current
    for pos in range(1, n):
        ids = graph.row_ids(current)
        nxt = None
        if use_argmin:
            alive = ~visited[ids]
            if alive.any():
                w = graph.row_weights(current)[alive]
                cand = ids[alive]
                best = np.lexsort((cand, w))[0]
                nxt, step_w = int(cand[best]), float(w[best])
        else:
            # rows are sorted by (weight desc, id asc); skip visited once
            c = cursor[current]
            while c < len(ids) and visited[ids[c]]:
                c += 1
            cursor[current] = c
            if c < len(ids):
                nxt = int(ids[c])
                step_w = float(graph.row_weights(current)[c])
        if nxt is None:
            nxt = pick_start()
            jumps.append(pos)
        else:
            total += step_w
        visit(nxt)
        order[pos] = nxt
        current = nxt
    return SortedPath(
        order=order,
        jumps=np.asarray(jumps, dtype=np.int64),
        total_weight=total,
        strategy="icp-argmin" if use_argmin else "icp",
    )


def brute_force_max_path(graph):
    """Exhaustive max-weight Hamiltonian path. Oracle for tiny graphs."""
    n = graph.node_count
    if n > BRUTE_FORCE_LIMIT:
        raise IcpackError(f"brute force is capped at {BRUTE_FORCE_LIMIT} nodes, got {n}")
    if n == 0:
        raise IcpackError("cannot order an empty graph")
    if n == 1:
        return np.array([0], dtype=np.uint32), 0.0
    w = np.zeros((n, n), dtype=np.float64)
    src = graph.row_sources()
    w[src, graph.nbr_ids] = graph.nbr_weights
    best, best_w = None, -np.inf
    it = itertools.permutations(range(n))
    while True:
        chunk = list(itertools.islice(it, 40320))
        if not chunk:
            break
        perms = np.asarray(chunk, dtype=np.int8)
        weights = w[perms[:, :-1], perms[:, 1:]].sum(axis=1)
        at = int(np.argmax(weights))
        if weights[at] > best_w:
            best, best_w = perms[at].astype(np.uint32), float(weights[at])
    return best, best_w


def random_order(ids, seed):
    ids = np.asarray(ids, dtype=np.uint32)
    if len(ids) == 0:
        raise IcpackError("cannot shuffle an empty id list")
    rng = np.random.default_rng(seed)
    return SortedPath(order=rng.permutation(ids), strategy="random")


def knn_sequence(neighbors, k, rng=None):
    """Each document followed by its top-k neighbors; groups concatenated.

    Heads are emitted in seeded-random order (id order when rng is None).
    The stream repeats documents by construction.
    """
    if k < 0:
        raise IcpackError("k must be non-negative")
    if k > neighbors.max_row_len():
        raise IcpackError(
            f"k={k} exceeds the stored neighbor count {neighbors.max_row_len()}"
        )
    n = neighbors.query_count
    heads = np.arange(n, dtype=np.uint32)
    if rng is not None:
        heads = rng.permutation(heads)
    parts = []
    for d in heads.tolist():
        parts.append([d] + neighbors.row_ids(d)[:k].tolist())
    stream = np.asarray(list(itertools.chain.from_iterable(parts)), dtype=np.uint32)
    return SortedPath(order=stream, strategy="knn")


def cluster_order(embeddings, n_clusters, seed):
    """k-means groups, clusters and members both in seeded-random order."""
    n = embeddings.count
    if n_clusters > n:
        raise IcpackError(f"n_clusters={n_clusters} exceeds document count {n}")
    _, labels = kmeans(embeddings.data, n_clusters, seed)
    rng = np.random.default_rng(seed)
    parts = []
    for c in rng.permutation(n_clusters).tolist():
        members = np.flatnonzero(labels == c).astype(np.uint32)
        parts.append(rng.permutation(members))
    return SortedPath(order=np.concatenate(parts), strategy="cluster")


def path_weight(order, graph):
    """Sum of existing-edge weights over consecutive pairs."""
    order = np.asarray(order, dtype=np.int64)
    if len(order) and order.max() >= graph.node_count:
        raise IcpackError(f"id {int(order.max())} is not a graph node")
    total = 0.0
    for a, b in zip(order[:-1].tolist(), order[1:].tolist()):
        w = graph.edge_weight(a, b)
        if w is not None:
            total += w
    return total


def write_path(path_obj, fname):
    with open(fname, "wb") as f:
        write_header(f, PATH_MAGIC, PATH_VERSION)
        f.write(np.uint64(len(path_obj.order)).tobytes())
        f.write(np.uint8(STRATEGY_TAGS[path_obj.strategy]).tobytes())
        f.write(np.ascontiguousarray(path_obj.order, dtype="<u4").tobytes())
        f.write(np.ascontiguousarray(path_obj.jumps, dtype="<u8").tobytes())


def read_path(fname):
    fname = str(fname)
    with open(fname, "rb") as f:
        read_header(f, PATH_MAGIC, PATH_VERSION, fname)
        count = int(np.frombuffer(read_exact(f, 8, fname, "element count"), dtype="<u8")[0])
        tag = int(np.frombuffer(read_exact(f, 1, fname, "strategy tag"), dtype="u1")[0])
        if tag not in _TAG_NAMES:
            raise FormatError(f"{fname}: unknown strategy tag {tag}")
        order = read_array(f, "<u4", count, fname, "element ids")
        trailer = f.read()
    if len(trailer) % 8:
        raise FormatError(f"{fname}: jump list is not a whole number of u64 entries")
    jumps = np.frombuffer(trailer, dtype="<u8").astype(np.int64)
    return SortedPath(order=order, jumps=jumps, strategy=_TAG_NAMES[tag])

"""Inverted-file product-quantization index with an exact brute-force oracle.

Scoring is inner product on unit-normalized vectors (cosine). Coarse
assignment and list probing use L2 distance, which ranks identically to
cosine on normalized data. All candidate orderings break score ties by
lower document id.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, IcpackError
from .fileio import expect_eof, read_array, read_exact, read_header, write_header
from .kmeans import assign, kmeans
from .neighbors import NeighborList

log = logging.getLogger(__name__)

INDEX_MAGIC = b"ICPI"
INDEX_VERSION = 1
KS = 256  # centroids per subquantizer, one byte per code component

_FLAG_TRAINED = 1
_FLAG_RAW = 2


@dataclass
class IvfPqIndex:
    nlist: int
    m: int
    dim: int
    coarse_centroids: np.ndarray  # (nlist, dim) float32
    codebooks: np.ndarray  # (m, KS, dim // m) float32
    list_ids: list  # per list: uint32 array
    list_codes: list  # per list: (n, m) uint8 array
    list_raw: list = None  # per list: (n, dim) float32 array, exact-scoring mode
    trained: bool = False

    @property
    def store_raw(self):
        return self.list_raw is not None

    @property
    def size(self):
        return int(sum(len(ids) for ids in self.list_ids))

    def empty_clone(self):
        """Same trained quantizers, no stored vectors."""
        return IvfPqIndex(
            nlist=self.nlist,
            m=self.m,
            dim=self.dim,
            coarse_centroids=self.coarse_centroids,
            codebooks=self.codebooks,
            list_ids=[np.array([], dtype=np.uint32) for _ in range(self.nlist)],
            list_codes=[
                np.zeros((0, self.m), dtype=np.uint8) for _ in range(self.nlist)
            ],
            list_raw=(
                [np.zeros((0, self.dim), dtype=np.float32) for _ in range(self.nlist)]
                if self.store_raw
                else None
            ),
            trained=self.trained,
        )

    def all_ids(self):
        if not self.list_ids:
            return np.array([], dtype=np.uint32)
        return np.concatenate(self.list_ids)


def validate_index_params(dim, nlist, m):
    for name, v in (("dim", dim), ("nlist", nlist), ("m", m)):
        if not isinstance(v, int) or v < 1:
            raise IcpackError(f"{name} must be a positive integer, got {v!r}")
    if m > dim:
        raise IcpackError(f"m={m} exceeds dim={dim}")
    if dim % m != 0:
        raise IcpackError(f"dim={dim} is not divisible by m={m}")


def probed_fraction(nprobe, nlist):
    if not 1 <= nprobe <= nlist:
        raise IcpackError(f"nprobe={nprobe} outside [1, nlist={nlist}]")
    return nprobe / nlist


def train(sample, nlist, m, seed, store_raw=False):
    sample = np.ascontiguousarray(sample, dtype=np.float32)
    if sample.ndim != 2:
        raise IcpackError("training sample must be a 2-d matrix")
    n, dim = sample.shape
    validate_index_params(dim, nlist, m)
    minimum = max(nlist, KS)
    if n < minimum:
        raise IcpackError(
            f"training sample has {n} rows, needs at least {minimum} "
            f"(max of nlist={nlist} and {KS} codebook entries)"
        )
    coarse, _ = kmeans(sample, nlist, seed)
    sub = dim // m
    codebooks = np.empty((m, KS, sub), dtype=np.float32)
    for s in range(m):
        codebooks[s], _ = kmeans(sample[:, s * sub : (s + 1) * sub], KS, (seed, 1, s))
    index = IvfPqIndex(
        nlist=nlist,
        m=m,
        dim=dim,
        coarse_centroids=coarse,
        codebooks=codebooks,
        list_ids=[np.array([], dtype=np.uint32) for _ in range(nlist)],
        list_codes=[np.zeros((0, m), dtype=np.uint8) for _ in range(nlist)],
        list_raw=(
            [np.zeros((0, dim), dtype=np.float32) for _ in range(nlist)]
            if store_raw
            else None
        ),
        trained=True,
    )
    return index


def encode(index, vectors):
    """Product-quantize raw vectors to (n, m) uint8 codes."""
    vectors = np.ascontiguousarray(vectors, dtype=np.float64)
    n = vectors.shape[0]
    sub = index.dim // index.m
    codes = np.empty((n, index.m), dtype=np.uint8)
    for s in range(index.m):
        labels, _ = assign(
            vectors[:, s * sub : (s + 1) * sub],
            index.codebooks[s].astype(np.float64),
        )
        codes[:, s] = labels
    return codes


def reconstruct(index, codes):
    sub = index.dim // index.m
    out = np.empty((codes.shape[0], index.dim), dtype=np.float32)
    for s in range(index.m):
        out[:, s * sub : (s + 1) * sub] = index.codebooks[s][codes[:, s]]
    return out


def add(index, embeddings, ids):
    if not index.trained:
        raise IcpackError("cannot add to an untrained index")
    embeddings = np.ascontiguousarray(embeddings, dtype=np.float32)
    if embeddings.ndim != 2 or embeddings.shape[1] != index.dim:
        raise IcpackError(f"embeddings must be (n, {index.dim})")
    ids = np.asarray(ids, dtype=np.uint32)
    if len(ids) != len(embeddings):
        raise IcpackError("ids and embeddings differ in length")
    if len(np.unique(ids)) != len(ids):
        raise IcpackError("duplicate ids within the added batch")
    existing = index.all_ids()
    if len(existing) and np.isin(ids, existing).any():
        dup = int(ids[np.isin(ids, existing)][0])
        raise IcpackError(f"id {dup} is already stored in the index")

    labels, _ = assign(embeddings.astype(np.float64), index.coarse_centroids.astype(np.float64))
    codes = encode(index, embeddings)
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    bounds = np.searchsorted(sorted_labels, np.arange(index.nlist + 1))
    for lst in range(index.nlist):
        sel = order[bounds[lst] : bounds[lst + 1]]
        if not len(sel):
            continue
        index.list_ids[lst] = np.concatenate([index.list_ids[lst], ids[sel]])
        index.list_codes[lst] = np.concatenate([index.list_codes[lst], codes[sel]])
        if index.store_raw:
            index.list_raw[lst] = np.concatenate([index.list_raw[lst], embeddings[sel]])
    return index


def _unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        raise IcpackError("zero-norm row cannot be scored by cosine")
    return x / norms[:, None]


def _top_rows(ids, scores, k):
    """Order by (score desc, id asc) and keep at most k.

    Ranking happens at float32, the precision neighbor files store, so a
    sharded merge of per-shard results and a single full scan break score
    ties the same way.
    """
    if len(ids) == 0:
        return np.array([], dtype=np.uint32), np.array([], dtype=np.float32)
    neg = -np.asarray(scores, dtype=np.float32).astype(np.float64)
    if len(ids) > k:
        bound = np.partition(neg, k - 1)[k - 1]
        keep = neg <= bound
        ids, neg = ids[keep], neg[keep]
    order = np.lexsort((ids, neg))[:k]
    return ids[order].astype(np.uint32), (-neg[order]).astype(np.float32)


def exact_search(data, queries, k, data_ids=None, query_ids=None, chunk=256):
    """Brute-force cosine top-k. The oracle for every approximate mode."""
    data = np.ascontiguousarray(data, dtype=np.float32)
    queries = np.atleast_2d(np.ascontiguousarray(queries, dtype=np.float32))
    if data.shape[1] != queries.shape[1]:
        raise IcpackError("data and query dimensions differ")
    if k < 1:
        raise IcpackError("k must be at least 1")
    if data_ids is None:
        data_ids = np.arange(data.shape[0], dtype=np.uint32)
    else:
        data_ids = np.asarray(data_ids, dtype=np.uint32)
    dn = _unit_rows(data)
    rows = []
    for lo in range(0, queries.shape[0], chunk):
        qn = _unit_rows(queries[lo : lo + chunk])
        block = qn @ dn.T
        for i in range(block.shape[0]):
            ids, scores = data_ids, block[i]
            if query_ids is not None:
                keep = ids != query_ids[lo + i]
                ids, scores = ids[keep], scores[keep]
            rows.append(_top_rows(ids, scores, k))
    return NeighborList.from_rows(rows)


def search(index, queries, k, nprobe, query_ids=None):
    """Scan the nprobe nearest inverted lists per query, score, take top-k."""
    if not index.trained:
        raise IcpackError("cannot search an untrained index")
    if k < 1:
        raise IcpackError("k must be at least 1")
    if not 1 <= nprobe <= index.nlist:
        raise IcpackError(f"nprobe={nprobe} outside [1, nlist={index.nlist}]")
    queries = np.atleast_2d(np.ascontiguousarray(queries, dtype=np.float64))
    if queries.shape[1] != index.dim:
        raise IcpackError(f"queries must be (q, {index.dim})")

    truncated = k > index.size
    if truncated:
        log.warning("k=%d exceeds %d stored vectors; returning all", k, index.size)

    centroids = index.coarse_centroids.astype(np.float64)
    c_sq = np.einsum("ij,ij->i", centroids, centroids)
    d2 = (
        np.einsum("ij,ij->i", queries, queries)[:, None]
        - 2.0 * (queries @ centroids.T)
        + c_sq[None, :]
    )
    probe = np.argsort(d2, axis=1, kind="stable")[:, :nprobe]

    sub = index.dim // index.m
    codebooks = index.codebooks.astype(np.float64)
    # full probe hits every list identically; stack the store once
    stacked = None
    if index.store_raw and nprobe == index.nlist and index.size:
        stacked = (_unit_rows(np.concatenate(index.list_raw)), index.all_ids())
    rows = []
    for qi in range(queries.shape[0]):
        lists = probe[qi]
        if stacked is not None:
            cand_ids = stacked[1]
            scores = stacked[0] @ _unit_rows(queries[qi : qi + 1])[0]
        else:
            cand_ids = np.concatenate([index.list_ids[l] for l in lists])
            if len(cand_ids) == 0:
                rows.append(
                    (np.array([], dtype=np.uint32), np.array([], dtype=np.float32))
                )
                continue
            if index.store_raw:
                raw = np.concatenate([index.list_raw[l] for l in lists])
                scores = _unit_rows(raw) @ _unit_rows(queries[qi : qi + 1])[0]
            else:
                codes = np.concatenate([index.list_codes[l] for l in lists])
                lut = np.einsum(
                    "mkd,md->mk", codebooks, queries[qi].reshape(index.m, sub)
                )
                scores = lut[np.arange(index.m)[None, :], codes].sum(axis=1)
        if query_ids is not None:
            keep = cand_ids != query_ids[qi]
            cand_ids, scores = cand_ids[keep], scores[keep]
        rows.append(_top_rows(cand_ids, scores, k))
    out = NeighborList.from_rows(rows)
    out.truncated = truncated
    return out


def sharded_search(shards, queries, k, nprobe=None, trained=None, query_ids=None):
    """Search disjoint shards independently and merge into a global top-k.

    shards: sequence of (ids, vectors). With trained=None each shard is
    scored by exact brute force; otherwise each shard is loaded into an
    empty clone of the trained index and searched with nprobe.
    """
    if not shards:
        raise IcpackError("no shards given")
    all_ids = np.concatenate([np.asarray(ids, dtype=np.uint32) for ids, _ in shards])
    if len(np.unique(all_ids)) != len(all_ids):
        raise IcpackError("shard ids overlap")

    per_shard = []
    for ids, vectors in shards:
        if trained is None:
            nl = exact_search(vectors, queries, k, data_ids=ids, query_ids=query_ids)
        else:
            if nprobe is None:
                raise IcpackError("nprobe is required when searching trained shards")
            part = add(trained.empty_clone(), vectors, ids)
            nl = search(part, queries, k, nprobe, query_ids=query_ids)
        per_shard.append(nl)

    q = per_shard[0].query_count
    rows = []
    for qi in range(q):
        ids = np.concatenate([nl.row_ids(qi) for nl in per_shard])
        scores = np.concatenate([nl.row_scores(qi) for nl in per_shard])
        rows.append(_top_rows(ids, scores, k))
    return NeighborList.from_rows(rows)


def rescore_exact(neighbors, data):
    """Replace stored scores with exact cosines of the stored pairs.

    For self-retrieval lists where query q is row q of data. Quantized
    search scores a pair through the target's compressed code, so the two
    directions of one pair can disagree by the quantization error;
    consumers that compare directions need true, symmetric scores. Rows
    are re-ranked by (f32 score desc, id asc) after rescoring.
    """
    data = np.ascontiguousarray(data, dtype=np.float32)
    if neighbors.query_count != data.shape[0]:
        raise IcpackError(
            f"neighbor list covers {neighbors.query_count} queries, data has {data.shape[0]} rows"
        )
    dn = _unit_rows(data)
    rows = []
    for q in range(neighbors.query_count):
        ids = neighbors.row_ids(q)
        if len(ids) == 0:
            rows.append((ids, neighbors.row_scores(q)))
            continue
        s = (dn[ids] @ dn[q]).astype(np.float32)
        order = np.lexsort((ids, -s.astype(np.float64)))
        rows.append((ids[order], s[order]))
    return NeighborList.from_rows(rows)


def recall(approx, exact, k):
    """Mean fraction of the exact top-k recovered by the approximate top-k."""
    if approx.query_count != exact.query_count:
        raise IcpackError(
            f"query counts differ: {approx.query_count} vs {exact.query_count}"
        )
    if k < 1:
        raise IcpackError("k must be at least 1")
    fractions = np.empty(approx.query_count, dtype=np.float64)
    for q in range(approx.query_count):
        a = approx.row_ids(q)[:k]
        e = exact.row_ids(q)[:k]
        fractions[q] = len(np.intersect1d(a, e)) / k
    return float(fractions.mean())


def write_index(index, path):
    if not index.trained:
        raise IcpackError("refusing to save an untrained index")
    flags = _FLAG_TRAINED | (_FLAG_RAW if index.store_raw else 0)
    with open(path, "wb") as f:
        write_header(f, INDEX_MAGIC, INDEX_VERSION)
        f.write(
            np.array([index.nlist, index.m, index.dim, KS, flags], dtype="<u4").tobytes()
        )
        f.write(np.ascontiguousarray(index.coarse_centroids, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(index.codebooks, dtype="<f4").tobytes())
        for lst in range(index.nlist):
            ids = index.list_ids[lst]
            f.write(np.uint64(len(ids)).tobytes())
            f.write(np.ascontiguousarray(ids, dtype="<u4").tobytes())
            f.write(np.ascontiguousarray(index.list_codes[lst], dtype="u1").tobytes())
            if index.store_raw:
                f.write(np.ascontiguousarray(index.list_raw[lst], dtype="<f4").tobytes())


def read_index(path):
    path = str(path)
    with open(path, "rb") as f:
        read_header(f, INDEX_MAGIC, INDEX_VERSION, path)
        nlist, m, dim, ks, flags = np.frombuffer(
            read_exact(f, 20, path, "index header"), dtype="<u4"
        )
        nlist, m, dim = int(nlist), int(m), int(dim)
        if ks != KS:
            raise FormatError(f"{path}: unsupported subquantizer size {ks}, expected {KS}")
        if not flags & _FLAG_TRAINED:
            raise FormatError(f"{path}: index file is marked untrained")
        store_raw = bool(flags & _FLAG_RAW)
        validate_index_params(dim, nlist, m)
        coarse = read_array(f, "<f4", nlist * dim, path, "coarse centroids").reshape(
            nlist, dim
        )
        codebooks = read_array(f, "<f4", m * KS * (dim // m), path, "codebooks").reshape(
            m, KS, dim // m
        )
        list_ids, list_codes = [], []
        list_raw = [] if store_raw else None
        for _ in range(nlist):
            n = int(np.frombuffer(read_exact(f, 8, path, "list length"), dtype="<u8")[0])
            list_ids.append(read_array(f, "<u4", n, path, "list ids"))
            list_codes.append(read_array(f, "u1", n * m, path, "list codes").reshape(n, m))
            if store_raw:
                list_raw.append(
                    read_array(f, "<f4", n * dim, path, "list vectors").reshape(n, dim)
                )
        expect_eof(f, path)
    return IvfPqIndex(
        nlist=nlist,
        m=m,
        dim=dim,
        coarse_centroids=coarse,
        codebooks=codebooks,
        list_ids=list_ids,
        list_codes=list_codes,
        list_raw=list_raw,
        trained=True,
    )

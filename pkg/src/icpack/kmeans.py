"""Seeded Lloyd k-means with k-means++ initialization.

Shared by the coarse quantizer, the product-quantizer codebooks, and the
cluster-order baseline. Deterministic for a fixed seed: ties in nearest
assignment go to the lowest centroid index, and empty clusters are reseeded
to the point farthest from its assigned centroid.
"""

import numpy as np

from .errors import IcpackError

MAX_ITERS = 25
_CHUNK = 16384


def assign(data, centroids, chunk=_CHUNK):
    """Nearest centroid per row (squared L2). Returns (labels, sq_dists)."""
    n = data.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float64)
    c_sq = np.einsum("ij,ij->i", centroids, centroids)
    for lo in range(0, n, chunk):
        block = data[lo : lo + chunk]
        d2 = np.einsum("ij,ij->i", block, block)[:, None] - 2.0 * (block @ centroids.T)
        d2 += c_sq[None, :]
        rows = np.arange(d2.shape[0])
        lab = np.argmin(d2, axis=1)
        labels[lo : lo + chunk] = lab
        dists[lo : lo + chunk] = d2[rows, lab]
    np.maximum(dists, 0.0, out=dists)
    return labels, dists


def _plusplus_seed(data, k, rng):
    n = data.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    best = np.einsum("ij,ij->i", data - data[chosen[0]], data - data[chosen[0]])
    for i in range(1, k):
        total = best.sum()
        if total <= 0.0:
            chosen[i] = rng.integers(n)
        else:
            chosen[i] = rng.choice(n, p=best / total)
        diff = data - data[chosen[i]]
        np.minimum(best, np.einsum("ij,ij->i", diff, diff), out=best)
    return data[chosen].copy()


def kmeans(data, k, seed, max_iters=MAX_ITERS):
    """Cluster rows of data into k groups. Returns (centroids f32, labels)."""
    data = np.ascontiguousarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise IcpackError("kmeans expects a 2-d matrix")
    n = data.shape[0]
    if k < 1:
        raise IcpackError("k must be at least 1")
    if n < k:
        raise IcpackError(f"kmeans needs at least {k} rows for k={k}, got {n}")

    rng = np.random.default_rng(seed)
    centroids = _plusplus_seed(data, k, rng)
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        new_labels, dists = assign(data, centroids)
        counts = np.bincount(new_labels, minlength=k)
        for c in np.flatnonzero(counts == 0):
            far = int(np.argmax(dists))
            new_labels[far] = c
            dists[far] = -1.0
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        sums = np.zeros((k, data.shape[1]))
        for d in range(data.shape[1]):
            sums[:, d] = np.bincount(labels, weights=data[:, d], minlength=k)
        centroids = sums / counts[:, None]
    return centroids.astype(np.float32), labels

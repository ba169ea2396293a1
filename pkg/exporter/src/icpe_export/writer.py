"""Binary embedding-matrix writer.

Layout: magic "ICPE", u32 version, then u64 row count, u32 dim, u32 flags
(bit 0 set = rows are L2-normalized), then count*dim little-endian f32
values, row-major. Matches the reader in the icpack toolkit byte for byte.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ICPE"
VERSION = 1
FLAG_NORMALIZED = 1


class WriterError(RuntimeError):
    pass


class EmbeddingWriter:
    """Streams a matrix of known size to disk, one batch of rows at a time."""

    def __init__(self, path, count, dim, normalized=True):
        if count < 0 or dim < 1:
            raise WriterError(f"bad matrix shape {count}x{dim}")
        self.path = Path(path)
        self.count = int(count)
        self.dim = int(dim)
        self.written = 0
        self._f = open(self.path, "wb")
        self._f.write(MAGIC)
        self._f.write(struct.pack("<I", VERSION))
        flags = FLAG_NORMALIZED if normalized else 0
        self._f.write(struct.pack("<QII", self.count, self.dim, flags))

    def append(self, rows):
        rows = np.ascontiguousarray(rows, dtype=np.float32)
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise WriterError(
                f"batch shape {rows.shape} does not match dim {self.dim}"
            )
        if not np.isfinite(rows).all():
            raise WriterError("batch contains non-finite values")
        if self.written + rows.shape[0] > self.count:
            raise WriterError(
                f"more rows than declared: {self.written + rows.shape[0]} > {self.count}"
            )
        rows.astype("<f4").tofile(self._f)
        self.written += rows.shape[0]

    def close(self):
        if self._f is None:
            return
        self._f.close()
        self._f = None
        if self.written != self.count:
            raise WriterError(
                f"wrote {self.written} of {self.count} declared rows to {self.path}"
            )

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            # keep the original error; the partial file is left for inspection
            if self._f is not None:
                self._f.close()
                self._f = None
            return False
        self.close()
        return False


def write_matrix(rows, path, normalized=True):
    """One-shot convenience wrapper around EmbeddingWriter."""
    rows = np.ascontiguousarray(rows, dtype=np.float32)
    if rows.ndim != 2:
        raise WriterError(f"embedding matrix must be 2-d, got shape {rows.shape}")
    with EmbeddingWriter(path, rows.shape[0], rows.shape[1], normalized) as w:
        w.append(rows)

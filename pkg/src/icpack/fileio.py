"""Low-level helpers for the toolkit's binary artifact files.

All formats share the same envelope: 4-byte ASCII magic, u32 LE version,
then format-specific fields. Everything on disk is little-endian.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import FormatError


def write_header(f: BinaryIO, magic: bytes, version: int) -> None:
    assert len(magic) == 4
    f.write(magic)
    f.write(struct.pack("<I", version))


def read_header(f: BinaryIO, magic: bytes, version: int, path: str) -> None:
    got = f.read(4)
    if got != magic:
        raise FormatError(
            f"{path}: bad magic {got!r}, expected {magic.decode('ascii')!r}"
        )
    raw = f.read(4)
    if len(raw) != 4:
        raise FormatError(f"{path}: truncated header")
    (got_version,) = struct.unpack("<I", raw)
    if got_version != version:
        raise FormatError(
            f"{path}: unsupported version {got_version}, expected {version}"
        )


def read_exact(f: BinaryIO, nbytes: int, path: str, what: str) -> bytes:
    raw = f.read(nbytes)
    if len(raw) != nbytes:
        raise FormatError(f"{path}: truncated while reading {what}")
    return raw


def read_array(f: BinaryIO, dtype: str, count: int, path: str, what: str) -> np.ndarray:
    dt = np.dtype(dtype)
    raw = read_exact(f, dt.itemsize * count, path, what)
    return np.frombuffer(raw, dtype=dt).copy()


def write_array(f: BinaryIO, arr: np.ndarray, dtype: str) -> None:
    np.ascontiguousarray(arr, dtype=np.dtype(dtype)).tofile(f)


def expect_eof(f: BinaryIO, path: str) -> None:
    if f.read(1):
        raise FormatError(f"{path}: trailing bytes after expected end of file")

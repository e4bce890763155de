"""Packed binary codes and exact Hamming ranking.

Codes are packed one record per image: bit j of a code is 1 iff the code
entry is +1, MSB first within each byte, trailing pad bits zero.  Search is
an exact linear scan with a per-byte popcount table, which at desk scale is
the honest baseline for retrieval numbers.  Ties in distance resolve by
ascending image id so rankings are reproducible.

The on-disk container:

    magic   4 bytes  b"CVDH"
    version u32      1
    c       u32      bits per code
    n       u64      number of codes
    payload n records of ceil(c / 8) bytes

An index is immutable after build and safe for concurrent queries.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CODES_MAGIC = b"CVDH"
CODES_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


@dataclass(frozen=True)
class PackedCodes:
    """n packed codes of c bits each; blob has shape (n, ceil(c/8))."""

    c: int
    blob: np.ndarray

    def __post_init__(self) -> None:
        if self.blob.ndim != 2 or self.blob.dtype != np.uint8:
            raise ValueError("blob must be a 2-D uint8 array")
        if self.blob.shape[1] != (self.c + 7) // 8:
            raise ValueError(f"blob width {self.blob.shape[1]} != ceil({self.c}/8)")

    @property
    def n(self) -> int:
        return self.blob.shape[0]


@dataclass(frozen=True)
class SearchResult:
    """Ranked ids with their Hamming distances, distances non-decreasing."""

    ids: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return self.ids.size

    def __iter__(self):
        return iter(zip(self.ids.tolist(), self.distances.tolist()))


def pack(v: np.ndarray) -> PackedCodes:
    """Pack a +-1 matrix of shape (c, n), one code per column."""
    v = np.asarray(v)
    if v.ndim != 2:
        raise ValueError(f"expected a c x n matrix, got shape {v.shape}")
    if not np.isin(v, (-1, 1)).all():
        raise ValueError("codes must contain only +1 and -1 entries")
    bits = (v.T > 0).astype(np.uint8)
    return PackedCodes(c=v.shape[0], blob=np.packbits(bits, axis=1))


def unpack(codes: PackedCodes) -> np.ndarray:
    """Inverse of pack: recover the (c, n) +-1 matrix."""
    bits = np.unpackbits(codes.blob, axis=1)[:, : codes.c]
    return (2.0 * bits - 1.0).T


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Bit mismatches between two packed codes of equal width."""
    a = np.asarray(a, dtype=np.uint8).ravel()
    b = np.asarray(b, dtype=np.uint8).ravel()
    if a.shape != b.shape:
        raise ValueError(f"code length mismatch: {a.shape} vs {b.shape}")
    return int(_POPCOUNT[np.bitwise_xor(a, b)].sum())


def all_distances(index: PackedCodes, q: np.ndarray) -> np.ndarray:
    """Hamming distance from a packed query to every code in the index."""
    q = np.asarray(q, dtype=np.uint8).ravel()
    if q.shape[0] != index.blob.shape[1]:
        raise ValueError(f"query width {q.shape[0]} != index width {index.blob.shape[1]}")
    return _POPCOUNT[np.bitwise_xor(index.blob, q[None, :])].sum(axis=1, dtype=np.int64)


def query(index: PackedCodes, q: np.ndarray, k: int) -> SearchResult:
    """Exact top-k by Hamming distance, ties broken by ascending image id."""
    if k < 1:
        raise ValueError(f"need k >= 1, got {k}")
    dists = all_distances(index, q)
    if k > index.n:
        log.warning("k=%d exceeds index size %d; returning all codes", k, index.n)
        k = index.n
    order = np.argsort(dists, kind="stable")[:k]
    return SearchResult(ids=order, distances=dists[order])


def write_codes(path: str | Path, codes: PackedCodes) -> None:
    with open(path, "wb") as f:
        f.write(_HEADER.pack(CODES_MAGIC, CODES_VERSION, codes.c, codes.n))
        f.write(codes.blob.tobytes())


def read_codes(path: str | Path) -> PackedCodes:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"truncated header in {path}")
    magic, version, c, n = _HEADER.unpack_from(raw)
    if magic != CODES_MAGIC:
        raise ValueError(f"bad magic {magic!r} in {path} (expected {CODES_MAGIC!r})")
    if version != CODES_VERSION:
        raise ValueError(f"unsupported version {version} in {path}")
    width = (c + 7) // 8
    expected = _HEADER.size + n * width
    if len(raw) != expected:
        raise ValueError(f"payload size mismatch in {path}: {len(raw)} != {expected}")
    blob = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size).reshape(n, width).copy()
    return PackedCodes(c=c, blob=blob)

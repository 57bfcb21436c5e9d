"""Writer for the engine's binary pool format.

Implemented from the documented byte layout (see the engine README):
a 22-byte little-endian header (magic "MSAL", version 1, flags,
n_patches u64, n_classes u16, patch_capacity u32), fixed-width records
with strictly increasing ids, and a trailing u64 checksum equal to the
sum of all preceding bytes mod 2^64. This is the wire contract between
the extractor and the selection engine; nothing here imports the engine.
"""
from __future__ import annotations

import struct

from .errors import PoolWriteError

MAGIC = b"MSAL"
VERSION = 1
FLAG_ENTROPY = 0x0001


class PoolFileWriter:
    """Streams validated records and finishes with the checksum trailer."""

    def __init__(self, fh, n_patches: int, n_classes: int, patch_capacity: int,
                 with_entropy: bool = True):
        if n_classes < 2:
            raise PoolWriteError("a pool needs at least two classes")
        self._fh = fh
        self._n_patches = n_patches
        self._n_classes = n_classes
        self._capacity = patch_capacity
        self._with_entropy = with_entropy
        self._bitset_bytes = (n_classes + 7) // 8
        self._checksum = 0
        self._written = 0
        self._last_id = -1
        flags = FLAG_ENTROPY if with_entropy else 0
        self._emit(struct.pack("<4sHHQHI", MAGIC, VERSION, flags,
                               n_patches, n_classes, patch_capacity))

    def _emit(self, blob: bytes) -> None:
        self._checksum = (self._checksum + sum(blob)) & 0xFFFFFFFFFFFFFFFF
        self._fh.write(blob)

    def add(self, patch_id: int, bald_max: float, bald_min: float, bald_mean: float,
            presence_bits, gt_counts, entropy_mean: float | None = None) -> None:
        if patch_id <= self._last_id:
            raise PoolWriteError(f"record {patch_id}: ids must be strictly increasing")
        fmax, fmin, fmean = (struct.unpack("<f", struct.pack("<f", v))[0]
                             for v in (bald_max, bald_min, bald_mean))
        if not fmin <= fmean <= fmax:
            raise PoolWriteError(f"record {patch_id}: need min <= mean <= max, "
                                 f"got ({fmax}, {fmin}, {fmean})")
        bits = list(presence_bits)
        counts = [int(c) for c in gt_counts]
        if len(bits) != self._n_classes or len(counts) != self._n_classes:
            raise PoolWriteError(f"record {patch_id}: expected {self._n_classes} classes")
        if sum(counts) > self._capacity:
            raise PoolWriteError(f"record {patch_id}: pixel counts exceed patch capacity")

        parts = [struct.pack("<Qfff", patch_id, bald_max, bald_min, bald_mean)]
        if self._with_entropy:
            if entropy_mean is None:
                raise PoolWriteError(f"record {patch_id}: entropy column required")
            parts.append(struct.pack("<f", entropy_mean))
        packed = bytearray(self._bitset_bytes)
        for i, bit in enumerate(bits):
            if bit not in (0, 1):
                raise PoolWriteError(f"record {patch_id}: presence bits must be 0/1")
            if bit:
                packed[i // 8] |= 1 << (i % 8)
        parts.append(bytes(packed))
        parts.append(struct.pack(f"<{self._n_classes}I", *counts))
        self._emit(b"".join(parts))
        self._last_id = patch_id
        self._written += 1
        if self._written > self._n_patches:
            raise PoolWriteError("more records than declared in the header")

    def close(self) -> None:
        if self._written != self._n_patches:
            raise PoolWriteError(
                f"declared {self._n_patches} records but wrote {self._written}")
        self._fh.write(struct.pack("<Q", self._checksum))

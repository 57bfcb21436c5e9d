"""Binary pool file format: header, fixed-width records, additive checksum.

Layout (all integers little-endian):

    header   magic 4s = b"MSAL" | version u16 = 1 | flags u16 |
             n_patches u64 | n_classes u16 | patch_capacity u32    (22 bytes)
    records  n_patches fixed-width rows, ids strictly increasing:
             patch_id u64 | bald_max f32 | bald_min f32 | bald_mean f32 |
             [entropy_mean f32, only when flags bit 0 is set] |
             presence bitset ceil(C/8) bytes, LSB-first |
             gt_pixel_counts C x u32
    trailer  checksum u64 = sum of all preceding bytes mod 2^64

Files are immutable after write; readers may stream records one at a
time without loading the whole file.
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    PoolFormatError,
    RecordInvariantError,
    UnsupportedVersionError,
    ValidationError,
)

MAGIC = b"MSAL"
VERSION = 1
FLAG_ENTROPY = 0x0001

_HEADER = struct.Struct("<4sHHQHI")
HEADER_SIZE = _HEADER.size  # 22


@dataclass(frozen=True)
class PoolHeader:
    n_patches: int
    n_classes: int
    patch_capacity: int
    flags: int = 0
    version: int = VERSION

    @property
    def has_entropy(self) -> bool:
        return bool(self.flags & FLAG_ENTROPY)

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ValidationError("n_classes must be >= 2")
        if self.n_patches < 0 or self.patch_capacity < 1:
            raise ValidationError("n_patches must be >= 0 and patch_capacity >= 1")


@dataclass
class PatchRecord:
    """One candidate action as stored on disk."""

    patch_id: int
    bald_max: float
    bald_min: float
    bald_mean: float
    presence_bits: np.ndarray      # length-C uint8 of {0, 1}
    gt_pixel_counts: np.ndarray    # length-C uint32
    entropy_mean: float | None = None

    def feature_vector(self) -> np.ndarray:
        """(max, min, mean) then presence bits, as float64."""
        head = np.array([self.bald_max, self.bald_min, self.bald_mean])
        return np.concatenate([head, self.presence_bits.astype(np.float64)])


def record_dtype(n_classes: int, has_entropy: bool) -> np.dtype:
    fields = [("id", "<u8"), ("bald", "<f4", (3,))]
    if has_entropy:
        fields.append(("entropy", "<f4"))
    fields.append(("bits", "u1", ((n_classes + 7) // 8,)))
    fields.append(("gt", "<u4", (n_classes,)))
    return np.dtype(fields)


def _checksum(chunks: Iterable[bytes]) -> int:
    total = np.uint64(0)
    for chunk in chunks:
        total += np.frombuffer(chunk, dtype=np.uint8).sum(dtype=np.uint64)
    return int(total)


def _validate_record_row(row, header: PoolHeader, prev_id: int) -> None:
    rid = int(row["id"])
    if prev_id is not None and rid <= prev_id:
        raise RecordInvariantError(rid, f"ids must be strictly increasing (previous {prev_id})")
    bmax, bmin, bmean = (float(x) for x in row["bald"])
    if not (bmin <= bmean <= bmax):  # also rejects NaN
        raise RecordInvariantError(rid, f"need bald_min <= bald_mean <= bald_max, got ({bmax}, {bmin}, {bmean})")
    if int(row["gt"].sum(dtype=np.uint64)) > header.patch_capacity:
        raise RecordInvariantError(rid, "ground-truth pixel counts exceed patch capacity")
    spare = header.n_classes % 8
    if spare and int(row["bits"][-1]) >> spare:
        raise RecordInvariantError(rid, "padding bits in the presence bitset must be zero")


def _pack_record(rec: PatchRecord, header: PoolHeader, dtype: np.dtype) -> np.void:
    row = np.zeros((), dtype=dtype)
    row["id"] = rec.patch_id
    row["bald"] = (rec.bald_max, rec.bald_min, rec.bald_mean)
    if header.has_entropy:
        if rec.entropy_mean is None:
            raise ValidationError(f"record {rec.patch_id}: entropy flag set but entropy_mean missing")
        row["entropy"] = rec.entropy_mean
    bits = np.asarray(rec.presence_bits, dtype=np.uint8)
    if bits.shape != (header.n_classes,):
        raise ValidationError(f"record {rec.patch_id}: presence bits must have length {header.n_classes}")
    row["bits"] = np.packbits(bits, bitorder="little")
    gt = np.asarray(rec.gt_pixel_counts, dtype=np.uint32)
    if gt.shape != (header.n_classes,):
        raise ValidationError(f"record {rec.patch_id}: gt counts must have length {header.n_classes}")
    row["gt"] = gt
    return row


def _unpack_record(row, header: PoolHeader) -> PatchRecord:
    bmax, bmin, bmean = (float(x) for x in row["bald"])
    bits = np.unpackbits(row["bits"], bitorder="little", count=header.n_classes)
    return PatchRecord(
        patch_id=int(row["id"]),
        bald_max=bmax,
        bald_min=bmin,
        bald_mean=bmean,
        entropy_mean=float(row["entropy"]) if header.has_entropy else None,
        presence_bits=bits,
        gt_pixel_counts=row["gt"].copy(),
    )


class PoolWriter:
    """Incremental writer used by bulk producers; validates per chunk."""

    def __init__(self, fh, header: PoolHeader):
        header.validate()
        self._fh = fh
        self._header = header
        self._dtype = record_dtype(header.n_classes, header.has_entropy)
        self._sum = np.uint64(0)
        self._written = 0
        self._prev_id = None
        head = _HEADER.pack(MAGIC, header.version, header.flags, header.n_patches,
                            header.n_classes, header.patch_capacity)
        self._emit(head)

    def _emit(self, data: bytes) -> None:
        self._sum += np.frombuffer(data, dtype=np.uint8).sum(dtype=np.uint64)
        self._fh.write(data)

    def write_rows(self, rows: np.ndarray) -> None:
        """Append a structured array of records (dtype from record_dtype)."""
        if rows.dtype != self._dtype:
            raise ValidationError("row dtype does not match the pool header")
        prev = self._prev_id
        for row in rows:
            _validate_record_row(row, self._header, prev)
            prev = int(row["id"])
        self._prev_id = prev
        self._written += len(rows)
        if self._written > self._header.n_patches:
            raise ValidationError("more records than declared in the header")
        self._emit(rows.tobytes())

    def close(self) -> None:
        if self._written != self._header.n_patches:
            raise ValidationError(
                f"header declares {self._header.n_patches} records, got {self._written}")
        self._fh.write(struct.pack("<Q", int(self._sum)))


def write_pool(header: PoolHeader, records: Iterable[PatchRecord], sink) -> None:
    """Write a complete pool file.

    All records are validated before any bytes are written; invariant
    violations therefore leave the sink untouched.
    """
    header.validate()
    dtype = record_dtype(header.n_classes, header.has_entropy)
    packed = [_pack_record(rec, header, dtype) for rec in records]
    rows = np.stack(packed) if packed else np.zeros(0, dtype=dtype)
    if len(rows) != header.n_patches:
        raise ValidationError(f"header declares {header.n_patches} records, got {len(rows)}")
    prev = None
    for row in rows:
        _validate_record_row(row, header, prev)
        prev = int(row["id"])

    def _write(fh):
        writer = PoolWriter(fh, header)
        if len(rows):
            writer.write_rows(rows)
        writer.close()

    if hasattr(sink, "write"):
        _write(sink)
    else:
        with open(sink, "wb") as fh:
            _write(fh)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise PoolFormatError(f"truncated file while reading {what}")
    return data


def read_header(fh) -> tuple[PoolHeader, np.uint64]:
    raw = _read_exact(fh, HEADER_SIZE, "header")
    magic, version, flags, n_patches, n_classes, capacity = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}, expected {VERSION}")
    header = PoolHeader(n_patches=n_patches, n_classes=n_classes,
                        patch_capacity=capacity, flags=flags, version=version)
    try:
        header.validate()
    except ValidationError as exc:
        raise PoolFormatError(f"invalid header: {exc}") from exc
    running = np.frombuffer(raw, dtype=np.uint8).sum(dtype=np.uint64)
    return header, running


def stream_pool(source) -> tuple[PoolHeader, Iterator[PatchRecord]]:
    """Open a pool file and return (header, lazy record iterator).

    Records decode one at a time; the checksum and record count are
    verified when the iterator is exhausted. Memory use is independent
    of n_patches.
    """
    fh = open(source, "rb") if not hasattr(source, "read") else source
    header, running = read_header(fh)
    dtype = record_dtype(header.n_classes, header.has_entropy)

    def records() -> Iterator[PatchRecord]:
        total = running
        prev = None
        try:
            for _ in range(header.n_patches):
                raw = _read_exact(fh, dtype.itemsize, "record")
                total += np.frombuffer(raw, dtype=np.uint8).sum(dtype=np.uint64)
                row = np.frombuffer(raw, dtype=dtype)[0]
                _validate_record_row(row, header, prev)
                prev = int(row["id"])
                yield _unpack_record(row, header)
            stored = struct.unpack("<Q", _read_exact(fh, 8, "checksum"))[0]
            if stored != int(total):
                raise ChecksumError(f"checksum mismatch: stored {stored}, computed {int(total)}")
            if fh.read(1):
                raise PoolFormatError("trailing data after checksum")
        finally:
            if fh is not source:
                fh.close()

    return header, records()


def read_pool(source) -> tuple[PoolHeader, list[PatchRecord]]:
    """Read and fully validate a pool file."""
    header, records = stream_pool(source)
    return header, list(records)


@dataclass
class PoolArrays:
    """Column-array view of a pool, used by the selection engine."""

    header: PoolHeader
    ids: np.ndarray        # (N,) uint64
    bald: np.ndarray       # (N, 3) float32: max, min, mean
    presence: np.ndarray   # (N, C) uint8
    gt_counts: np.ndarray  # (N, C) uint32
    entropy: np.ndarray | None = None  # (N,) float32 when present

    @property
    def n_classes(self) -> int:
        return self.header.n_classes

    def feature_matrix(self) -> np.ndarray:
        """(N, 3 + C) float64 action features."""
        return np.hstack([self.bald.astype(np.float64),
                          self.presence.astype(np.float64)])


def read_pool_arrays(source) -> PoolArrays:
    """Bulk-decode a pool file into column arrays (one pass, vectorized)."""
    fh = open(source, "rb") if not hasattr(source, "read") else source
    try:
        header, running = read_header(fh)
        dtype = record_dtype(header.n_classes, header.has_entropy)
        payload = _read_exact(fh, dtype.itemsize * header.n_patches, "records")
        stored = struct.unpack("<Q", _read_exact(fh, 8, "checksum"))[0]
        if fh.read(1):
            raise PoolFormatError("trailing data after checksum")
    finally:
        if fh is not source:
            fh.close()
    total = running + np.frombuffer(payload, dtype=np.uint8).sum(dtype=np.uint64)
    if stored != int(total):
        raise ChecksumError(f"checksum mismatch: stored {stored}, computed {int(total)}")
    rows = np.frombuffer(payload, dtype=dtype)

    ids = rows["id"]
    if len(ids) and np.any(np.diff(ids.astype(np.int64)) <= 0):
        bad = int(np.flatnonzero(np.diff(ids.astype(np.int64)) <= 0)[0]) + 1
        raise RecordInvariantError(int(ids[bad]), "ids must be strictly increasing")
    bald = rows["bald"]
    ok = (bald[:, 1] <= bald[:, 2]) & (bald[:, 2] <= bald[:, 0])
    if not ok.all():
        bad = int(np.flatnonzero(~ok)[0])
        raise RecordInvariantError(int(ids[bad]), "need bald_min <= bald_mean <= bald_max")
    gt = rows["gt"]
    sums = gt.sum(axis=1, dtype=np.uint64)
    if np.any(sums > header.patch_capacity):
        bad = int(np.flatnonzero(sums > header.patch_capacity)[0])
        raise RecordInvariantError(int(ids[bad]), "ground-truth pixel counts exceed patch capacity")
    presence = np.unpackbits(rows["bits"], axis=1, bitorder="little", count=header.n_classes) \
        if len(rows) else np.zeros((0, header.n_classes), dtype=np.uint8)
    spare = header.n_classes % 8
    if spare and len(rows):
        pad = rows["bits"][:, -1] >> spare
        if np.any(pad):
            bad = int(np.flatnonzero(pad)[0])
            raise RecordInvariantError(int(ids[bad]), "padding bits in the presence bitset must be zero")
    return PoolArrays(
        header=header,
        ids=ids.copy(),
        bald=bald.copy(),
        presence=presence,
        gt_counts=gt.copy(),
        entropy=rows["entropy"].copy() if header.has_entropy else None,
    )


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


def export_csv(source, sink) -> None:
    """Dump a pool file to CSV for debugging; floats at 6 significant digits."""
    header, records = stream_pool(source)
    close_sink = not hasattr(sink, "write")
    fh = open(sink, "w", newline="") if close_sink else sink
    try:
        writer = csv.writer(fh)
        cols = ["id", "bald_max", "bald_min", "bald_mean"]
        if header.has_entropy:
            cols.append("entropy_mean")
        cols += [f"p{i}" for i in range(header.n_classes)]
        cols += [f"g{i}" for i in range(header.n_classes)]
        writer.writerow(cols)
        for rec in records:
            row = [rec.patch_id, _fmt(rec.bald_max), _fmt(rec.bald_min), _fmt(rec.bald_mean)]
            if header.has_entropy:
                row.append(_fmt(rec.entropy_mean))
            row += [int(b) for b in rec.presence_bits]
            row += [int(g) for g in rec.gt_pixel_counts]
            writer.writerow(row)
    finally:
        if close_sink:
            fh.close()


def import_csv(source) -> tuple[bool, list[PatchRecord]]:
    """Debug re-import of an export_csv dump; returns (has_entropy, records)."""
    close_src = not hasattr(source, "read")
    fh = open(source, "r", newline="") if close_src else source
    try:
        reader = csv.reader(fh)
        cols = next(reader)
        has_entropy = "entropy_mean" in cols
        n_classes = sum(1 for c in cols if c.startswith("p") and c[1:].isdigit())
        records = []
        for row in reader:
            it = iter(row)
            rid = int(next(it))
            bmax, bmin, bmean = (float(next(it)) for _ in range(3))
            entropy = float(next(it)) if has_entropy else None
            bits = np.array([int(next(it)) for _ in range(n_classes)], dtype=np.uint8)
            gt = np.array([int(next(it)) for _ in range(n_classes)], dtype=np.uint32)
            records.append(PatchRecord(rid, bmax, bmin, bmean, bits, gt, entropy))
        return has_entropy, records
    finally:
        if close_src:
            fh.close()

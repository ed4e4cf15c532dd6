"""Spatially sharded signature storage with coordinate-to-signature lookup.

Records live in disjoint cubic shards keyed by the chunk coordinate
(floor of voxel coordinate over shard size); each shard serializes to its
own file named after the key, so a dumb object store could serve the same
layout. Identical signatures are capped store-wide at ``max_duplicates``
copies, keeping the lowest-coordinate sites, which keeps hash tables built
downstream from degenerating on constant image regions.

Signature sites sit on a stride grid: all coordinates must share one
residue class per axis modulo the stride (patch centers are offset from
the corner grid by half a patch, so the residue is usually not zero).
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ContractViolation, DataFormatError, SigseekError
from .sigcore import SignatureRecord, VoxelCoord

SHARD_MAGIC = b"SIGS"
SHARD_VERSION = 1
_SHARD_NAME = re.compile(r"^sig_(\d+)_(\d+)_(\d+)\.shard$")
_REC_DTYPE = np.dtype([("x", "<u4"), ("y", "<u4"), ("z", "<u4"), ("sig", "<u8")])


class EmptyStoreError(SigseekError):
    """Lookup attempted against a store with no records."""


class BoundsError(ContractViolation):
    """Probe point lies outside the store's volume extent."""


class LookupResult(NamedTuple):
    record: SignatureRecord
    distance: float


class StorageEstimate(NamedTuple):
    lookup_bytes: int
    hash_bytes: int


def storage_estimate(record_count: int) -> StorageEstimate:
    """Storage for the two warehouse layouts, in bytes.

    The coordinate-lookup layout stores three 4-byte coordinates plus the
    8-byte signature (20 bytes/record). The hash-table layout models four
    tables of five 8-byte fields each (160 bytes/record).
    """
    if record_count < 0:
        raise ContractViolation("record_count must be >= 0")
    return StorageEstimate(lookup_bytes=20 * record_count, hash_bytes=160 * record_count)


@dataclass
class ShardedStore:
    """Immutable-after-ingest sharded record collection."""

    shard_size: int
    stride: int
    max_duplicates: int
    grid_offset: tuple[int, int, int]
    extent: tuple[int, int, int]
    shards: dict[tuple[int, int, int], list[SignatureRecord]] = field(default_factory=dict)

    def __len__(self) -> int:
        return sum(len(v) for v in self.shards.values())

    def iter_records(self) -> Iterable[SignatureRecord]:
        for key in sorted(self.shards):
            yield from self.shards[key]

    def shard_key(self, coord: VoxelCoord) -> tuple[int, int, int]:
        s = self.shard_size
        return (coord.x // s, coord.y // s, coord.z // s)


def _shard_key(x: int, y: int, z: int, shard_size: int) -> tuple[int, int, int]:
    return (x // shard_size, y // shard_size, z // shard_size)


def ingest(
    records: Iterable[SignatureRecord],
    shard_size: int,
    stride: int,
    max_duplicates: int = 16,
    grid_offset: tuple[int, int, int] | None = None,
    extent: tuple[int, int, int] | None = None,
) -> ShardedStore:
    """Build a sharded store from a record stream.

    Exact duplicate records collapse to one; a coordinate carrying two
    different signatures is rejected. When more than ``max_duplicates``
    records share one signature value, the surviving copies are the ones
    with the lowest (x, y, z) coordinates. ``grid_offset`` defaults to the
    residue of the first record; ``extent`` defaults to the tight bounding
    box of the ingested records.
    """
    if stride < 1:
        raise ContractViolation(f"stride must be >= 1, got {stride}")
    if shard_size < stride:
        raise ContractViolation(f"shard_size {shard_size} must be >= stride {stride}")
    if max_duplicates < 1:
        raise ContractViolation(f"max_duplicates must be >= 1, got {max_duplicates}")

    by_coord: dict[tuple[int, int, int], SignatureRecord] = {}
    offset = grid_offset
    for rec in records:
        c = rec.coord.as_tuple()
        if offset is None:
            offset = (c[0] % stride, c[1] % stride, c[2] % stride)
        if (c[0] % stride, c[1] % stride, c[2] % stride) != offset:
            raise ContractViolation(
                f"record at {c} not aligned to stride {stride} with grid offset {offset}"
            )
        prev = by_coord.get(c)
        if prev is not None and prev.sig != rec.sig:
            raise ContractViolation(
                f"conflicting signatures at {c}: {prev.sig:#018x} vs {rec.sig:#018x}"
            )
        by_coord[c] = rec

    # store-wide cap on identical signatures, keeping lowest coordinates
    by_sig: dict[int, list[SignatureRecord]] = {}
    for rec in by_coord.values():
        by_sig.setdefault(rec.sig, []).append(rec)
    kept: list[SignatureRecord] = []
    for group in by_sig.values():
        group.sort(key=lambda r: r.coord.as_tuple())
        kept.extend(group[:max_duplicates])
    kept.sort(key=lambda r: r.coord.as_tuple())

    if extent is None:
        if kept:
            extent = (
                max(r.coord.x for r in kept) + 1,
                max(r.coord.y for r in kept) + 1,
                max(r.coord.z for r in kept) + 1,
            )
        else:
            extent = (0, 0, 0)

    shards: dict[tuple[int, int, int], list[SignatureRecord]] = {}
    for rec in kept:
        shards.setdefault(_shard_key(*rec.coord.as_tuple(), shard_size), []).append(rec)
    return ShardedStore(
        shard_size=shard_size,
        stride=stride,
        max_duplicates=max_duplicates,
        grid_offset=offset or (0, 0, 0),
        extent=extent,
        shards=shards,
    )


def _scan_shard(
    records: list[SignatureRecord], p: VoxelCoord
) -> tuple[float, SignatureRecord] | None:
    best: tuple[float, tuple[int, int, int], SignatureRecord] | None = None
    for rec in records:
        d2 = (
            (rec.coord.x - p.x) ** 2
            + (rec.coord.y - p.y) ** 2
            + (rec.coord.z - p.z) ** 2
        )
        key = (d2, rec.coord.as_tuple())
        if best is None or key < (best[0], best[1]):
            best = (d2, rec.coord.as_tuple(), rec)
    if best is None:
        return None
    return best[0], best[2]


def lookup_signature(store: ShardedStore, p: VoxelCoord) -> LookupResult:
    """Nearest stored record to ``p`` by Euclidean distance, ties to low coords.

    Starts in the probe's own shard and widens the shard ring until the ring
    cannot contain anything closer than the best record found, so the result
    matches a brute-force scan even when the nearest site lives in an
    adjacent (or distant) shard.
    """
    if len(store) == 0:
        raise EmptyStoreError("store contains no records")
    ex, ey, ez = store.extent
    if not (0 <= p.x < ex and 0 <= p.y < ey and 0 <= p.z < ez):
        raise BoundsError(f"probe {p.as_tuple()} outside volume extent {store.extent}")

    s = store.shard_size
    ck = store.shard_key(p)
    keys = store.shards.keys()
    lo = [min(k[i] for k in keys) for i in range(3)]
    hi = [max(k[i] for k in keys) for i in range(3)]
    max_ring = max(
        max(ck[i] - lo[i], hi[i] - ck[i]) for i in range(3)
    )

    best: tuple[float, SignatureRecord] | None = None
    for r in range(max_ring + 1):
        if best is not None:
            # nearest possible point in ring r: cross the (r-1) full shards
            # between p and the ring along a single axis
            gaps = []
            for i, pi in enumerate((p.x, p.y, p.z)):
                low_edge = ck[i] * s
                gaps.append((r - 1) * s + (pi - low_edge + 1))
                gaps.append((r - 1) * s + (low_edge + s - pi))
            # strict: an equal-distance record in a farther ring could still
            # win the low-coordinate tie-break
            if best[0] < min(gaps) ** 2:
                break
        for key in _ring_keys(ck, r, lo, hi):
            recs = store.shards.get(key)
            if not recs:
                continue
            found = _scan_shard(recs, p)
            if found is None:
                continue
            if best is None or (found[0], found[1].coord.as_tuple()) < (
                best[0],
                best[1].coord.as_tuple(),
            ):
                best = found
    assert best is not None
    return LookupResult(record=best[1], distance=float(np.sqrt(best[0])))


def _ring_keys(center, r, lo, hi):
    """Shard keys at Chebyshev distance exactly r from center, inside bounds."""
    cx, cy, cz = center
    if r == 0:
        yield (cx, cy, cz)
        return
    for dx in range(-r, r + 1):
        for dy in range(-r, r + 1):
            for dz in range(-r, r + 1):
                if max(abs(dx), abs(dy), abs(dz)) != r:
                    continue
                key = (cx + dx, cy + dy, cz + dz)
                if all(lo[i] <= key[i] <= hi[i] for i in range(3)):
                    yield key


def shard_filename(key: tuple[int, int, int]) -> str:
    return f"sig_{key[0]}_{key[1]}_{key[2]}.shard"


def _shard_bytes(store: ShardedStore, key: tuple[int, int, int]) -> bytes:
    recs = store.shards[key]
    arr = np.empty(len(recs), dtype=_REC_DTYPE)
    for i, rec in enumerate(recs):
        arr[i] = (rec.coord.x, rec.coord.y, rec.coord.z, rec.sig)
    header = SHARD_MAGIC + struct.pack("<BIQ", SHARD_VERSION, store.shard_size, len(recs))
    return header + arr.tobytes()


def save_store(store: ShardedStore, directory) -> None:
    """Write one shard file per key plus a small JSON sidecar of store config."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for key in sorted(store.shards):
        (directory / shard_filename(key)).write_bytes(_shard_bytes(store, key))
    meta = {
        "shard_size": store.shard_size,
        "stride": store.stride,
        "max_duplicates": store.max_duplicates,
        "grid_offset": list(store.grid_offset),
        "extent": list(store.extent),
    }
    (directory / "store.json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def _parse_shard(blob: bytes, path) -> tuple[int, list[SignatureRecord]]:
    if blob[:4] != SHARD_MAGIC:
        raise DataFormatError(f"{path}: bad shard magic {blob[:4]!r}")
    if len(blob) < 17:
        raise DataFormatError(f"{path}: truncated shard header")
    version, shard_size, count = struct.unpack("<BIQ", blob[4:17])
    if version != SHARD_VERSION:
        raise DataFormatError(f"{path}: unsupported shard version {version}")
    body = blob[17:]
    if len(body) != count * _REC_DTYPE.itemsize:
        raise DataFormatError(f"{path}: shard body size mismatch")
    arr = np.frombuffer(body, dtype=_REC_DTYPE)
    recs = [
        SignatureRecord(VoxelCoord(int(r["x"]), int(r["y"]), int(r["z"])), int(r["sig"]))
        for r in arr
    ]
    return shard_size, recs


def write_record_file(records: list[SignatureRecord], path, extent=None) -> None:
    """Record stream as a single shard-layout file (one all-covering chunk).

    The CLI uses this as the intermediate between encoding and spatial
    ingestion; the byte layout is identical to a shard file.
    """
    records = sorted(records, key=lambda r: r.coord.as_tuple())
    if extent is not None:
        nominal = int(max(extent))
    elif records:
        nominal = max(max(r.coord.as_tuple()) for r in records) + 1
    else:
        nominal = 1
    arr = np.empty(len(records), dtype=_REC_DTYPE)
    for i, rec in enumerate(records):
        arr[i] = (rec.coord.x, rec.coord.y, rec.coord.z, rec.sig)
    header = SHARD_MAGIC + struct.pack("<BIQ", SHARD_VERSION, nominal, len(records))
    Path(path).write_bytes(header + arr.tobytes())


def read_record_file(path) -> list[SignatureRecord]:
    _, recs = _parse_shard(Path(path).read_bytes(), path)
    return recs


def load_store(directory) -> ShardedStore:
    """Load a store written by :func:`save_store`."""
    directory = Path(directory)
    meta_path = directory / "store.json"
    if not meta_path.exists():
        raise DataFormatError(f"{directory}: missing store.json sidecar")
    meta = json.loads(meta_path.read_text())
    shards: dict[tuple[int, int, int], list[SignatureRecord]] = {}
    for path in sorted(directory.glob("sig_*.shard")):
        m = _SHARD_NAME.match(path.name)
        if not m:
            raise DataFormatError(f"unrecognized shard filename {path.name}")
        key = (int(m.group(1)), int(m.group(2)), int(m.group(3)))
        shard_size, recs = _parse_shard(path.read_bytes(), path)
        if shard_size != meta["shard_size"]:
            raise DataFormatError(f"{path}: shard_size {shard_size} != store metadata")
        shards[key] = recs
    return ShardedStore(
        shard_size=int(meta["shard_size"]),
        stride=int(meta["stride"]),
        max_duplicates=int(meta["max_duplicates"]),
        grid_offset=tuple(meta["grid_offset"]),
        extent=tuple(meta["extent"]),
        shards=shards,
    )

"""Fixed-width binary signatures, Hamming arithmetic, and bit-partition masks.

A signature is a 64-bit unsigned integer summarizing one image patch.
Bit positions are numbered LSB-first: position ``i`` is the bit worth
``1 << i``. Hex serialization is 16 lowercase hex chars, most-significant
nibble first (``f"{sig:016x}"``).

Partition masks assign each bit position to one of N disjoint partitions,
as equal as possible in size (earlier partitions get the extra bit when N
does not divide the width). The randomized mask is a seeded permutation of
that template, drawn from ``numpy.random.default_rng`` (PCG64), so masks
are reproducible across runs and platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ContractViolation, DataFormatError

SIGNATURE_BITS = 64
_SIG_MAX = (1 << SIGNATURE_BITS) - 1


def check_signature(sig: int) -> int:
    """Validate that ``sig`` fits in 64 unsigned bits and return it as int."""
    sig = int(sig)
    if not 0 <= sig <= _SIG_MAX:
        raise ContractViolation(f"signature out of 64-bit range: {sig:#x}")
    return sig


def hamming(a: int, b: int) -> int:
    """Number of differing bit positions between two 64-bit signatures."""
    return ((a ^ b) & _SIG_MAX).bit_count()


def sig_to_hex(sig: int) -> str:
    """Serialize a signature as 16 lowercase hex chars, MSB nibble first."""
    return f"{check_signature(sig):016x}"


def sig_from_hex(s: str) -> int:
    """Parse the 16-hex-char signature form; rejects wrong lengths."""
    if len(s) != 16:
        raise DataFormatError(f"signature hex must be 16 chars, got {len(s)!r}: {s!r}")
    try:
        return int(s, 16)
    except ValueError as e:
        raise DataFormatError(f"invalid signature hex: {s!r}") from e


@dataclass(frozen=True, order=True)
class VoxelCoord:
    """Non-negative integer voxel position; orders lexicographically by (x, y, z)."""

    x: int
    y: int
    z: int

    def __post_init__(self):
        for axis, v in zip("xyz", (self.x, self.y, self.z)):
            if v < 0:
                raise ContractViolation(f"voxel coordinate {axis}={v} is negative")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True, order=True)
class SignatureRecord:
    """One row of a mined volume: a voxel coordinate and its signature."""

    coord: VoxelCoord
    sig: int

    def __post_init__(self):
        check_signature(self.sig)


def partition_template(bit_width: int, partition_count: int) -> list[int]:
    """Unshuffled partition assignment: contiguous runs of each partition id.

    Partition sizes differ by at most one; when ``partition_count`` does not
    divide ``bit_width``, the earlier (lower-id) partitions get the extra bit.
    """
    if not 1 <= partition_count <= bit_width:
        raise ContractViolation(
            f"partition_count must be in [1, {bit_width}], got {partition_count}"
        )
    base, extra = divmod(bit_width, partition_count)
    out: list[int] = []
    for pid in range(partition_count):
        out.extend([pid] * (base + (1 if pid < extra else 0)))
    return out


@dataclass(frozen=True)
class PartitionMask:
    """Assignment of each bit position to one of N disjoint partitions.

    ``assignment[i]`` is the partition id of bit position ``i`` (LSB-first).
    Partition ids are 0-based and every id in ``range(partition_count)``
    appears; sizes differ by at most one.
    """

    assignment: tuple[int, ...]
    partition_count: int
    positions: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = self.partition_count
        width = len(self.assignment)
        if not 1 <= n <= width:
            raise ContractViolation(f"partition_count {n} out of range for width {width}")
        sizes = [0] * n
        for pid in self.assignment:
            if not 0 <= pid < n:
                raise ContractViolation(f"partition id {pid} outside [0, {n})")
            sizes[pid] += 1
        if min(sizes) == 0:
            raise ContractViolation("every partition id must cover at least one bit")
        if max(sizes) - min(sizes) > 1:
            raise ContractViolation(f"partition sizes differ by more than 1: {sizes}")
        pos = tuple(
            tuple(i for i, pid in enumerate(self.assignment) if pid == p)
            for p in range(n)
        )
        object.__setattr__(self, "positions", pos)

    @property
    def bit_width(self) -> int:
        return len(self.assignment)

    def partition_width(self, partition_id: int) -> int:
        return len(self.positions[partition_id])

    def __iter__(self) -> Iterator[int]:
        return iter(range(self.partition_count))


def make_partition_mask(bit_width: int, partition_count: int, seed: int) -> PartitionMask:
    """Seeded random permutation of the equal-partition template.

    Deterministic for a fixed seed (PCG64), so an index built from a seed can
    be reproduced anywhere from the seed alone.
    """
    template = partition_template(bit_width, partition_count)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(template))
    assignment = tuple(int(template[j]) for j in perm)
    return PartitionMask(assignment=assignment, partition_count=partition_count)


def extract_subsignature(sig: int, mask: PartitionMask, partition_id: int) -> int:
    """Bits of ``sig`` belonging to one partition, packed densely.

    Matching bits are taken in ascending bit-position order; the first match
    becomes bit 0 of the sub-signature, the next bit 1, and so on.
    """
    if not 0 <= partition_id < mask.partition_count:
        raise ContractViolation(
            f"partition_id {partition_id} outside [0, {mask.partition_count})"
        )
    sub = 0
    for j, pos in enumerate(mask.positions[partition_id]):
        sub |= ((sig >> pos) & 1) << j
    return sub


def extract_subsignatures_array(
    sigs: np.ndarray, mask: PartitionMask, partition_id: int
) -> np.ndarray:
    """Vectorized :func:`extract_subsignature` over a uint64 array."""
    sigs = np.ascontiguousarray(sigs, dtype=np.uint64)
    sub = np.zeros_like(sigs)
    one = np.uint64(1)
    for j, pos in enumerate(mask.positions[partition_id]):
        sub |= ((sigs >> np.uint64(pos)) & one) << np.uint64(j)
    return sub


def pack_signbits(values: np.ndarray) -> int:
    """Pack 64 sign values into a signature by thresholding at zero.

    Non-negative maps to bit 1 and negative to bit 0 (the sgn(0) = +1
    convention); index 0 of ``values`` is the most-significant bit.
    """
    values = np.asarray(values)
    if values.shape != (SIGNATURE_BITS,):
        raise ContractViolation(
            f"expected {SIGNATURE_BITS} components to pack, got shape {values.shape}"
        )
    sig = 0
    for v in values:
        sig = (sig << 1) | (1 if v >= 0 else 0)
    return sig


def unpack_signbits(sig: int) -> np.ndarray:
    """Inverse of :func:`pack_signbits`: signature to a float ±1 vector."""
    check_signature(sig)
    out = np.empty(SIGNATURE_BITS, dtype=np.float64)
    for i in range(SIGNATURE_BITS):
        bit = (sig >> (SIGNATURE_BITS - 1 - i)) & 1
        out[i] = 1.0 if bit else -1.0
    return out

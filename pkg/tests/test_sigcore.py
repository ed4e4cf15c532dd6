import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigseek.errors import ContractViolation, DataFormatError
from sigseek.sigcore import (
    PartitionMask,
    SignatureRecord,
    VoxelCoord,
    extract_subsignature,
    extract_subsignatures_array,
    hamming,
    make_partition_mask,
    pack_signbits,
    partition_template,
    sig_from_hex,
    sig_to_hex,
    unpack_signbits,
)

sig64 = st.integers(min_value=0, max_value=(1 << 64) - 1)


class TestHamming:
    def test_identity(self):
        assert hamming(0x0000000000000000, 0x0000000000000000) == 0

    def test_complement(self):
        assert hamming(0xFFFFFFFFFFFFFFFF, 0x0000000000000000) == 64

    def test_hand_counted(self):
        # 0xB0 = 1011_0000, 0x10 = 0001_0000 -> bits 7 and 5 differ
        assert hamming(0x00000000000000B0, 0x0000000000000010) == 2

    @given(sig64, sig64)
    def test_symmetric_and_bounded(self, a, b):
        d = hamming(a, b)
        assert d == hamming(b, a)
        assert 0 <= d <= 64
        assert hamming(a, a) == 0


class TestPartitionMask:
    def test_template_matches_worked_example(self):
        # 8-bit width, 4 partitions: two bits per partition, in id order
        assert partition_template(8, 4) == [0, 0, 1, 1, 2, 2, 3, 3]

    def test_template_uneven_widths(self):
        # 64 into 5: first four partitions get 13 bits, last gets 12
        t = partition_template(64, 5)
        sizes = [t.count(p) for p in range(5)]
        assert sizes == [13, 13, 13, 13, 12]

    def test_each_bit_own_partition(self):
        mask = make_partition_mask(64, 64, seed=0)
        assert sorted(mask.assignment) == list(range(64))
        assert all(mask.partition_width(p) == 1 for p in range(64))

    def test_deterministic_for_seed(self):
        assert make_partition_mask(64, 4, seed=7) == make_partition_mask(64, 4, seed=7)

    def test_rejects_bad_partition_count(self):
        with pytest.raises(ContractViolation):
            make_partition_mask(64, 0, seed=1)
        with pytest.raises(ContractViolation):
            make_partition_mask(64, 65, seed=1)

    @given(st.integers(1, 64), st.integers(0, 2**32 - 1))
    @settings(max_examples=60)
    def test_permutation_preserves_template_multiset(self, n, seed):
        mask = make_partition_mask(64, n, seed)
        assert sorted(mask.assignment) == sorted(partition_template(64, n))

    def test_invariant_checks_enforced(self):
        with pytest.raises(ContractViolation):
            PartitionMask(assignment=(0, 0, 0, 1), partition_count=3)  # id 2 uncovered
        with pytest.raises(ContractViolation):
            PartitionMask(assignment=(0, 0, 0, 1), partition_count=2)  # sizes 3 vs 1


class TestExtractSubsignature:
    def test_all_ones_partition(self):
        # 8-bit mask in template form; lowest partition holds bit positions 0-1
        mask = PartitionMask(assignment=tuple(partition_template(8, 4)), partition_count=4)
        assert extract_subsignature(0xFF, mask, 0) == 0b11

    def test_zero_signature(self):
        mask = make_partition_mask(64, 4, seed=3)
        assert all(extract_subsignature(0, mask, p) == 0 for p in range(4))

    def test_disjoint_partitions_do_not_interact(self):
        mask = make_partition_mask(64, 4, seed=5)
        a = 0x0123456789ABCDEF
        # flip every bit of partition 3; other partitions' extracts unchanged
        b = a
        for pos in mask.positions[3]:
            b ^= 1 << pos
        for p in range(3):
            assert extract_subsignature(a, mask, p) == extract_subsignature(b, mask, p)
        assert extract_subsignature(a, mask, 3) != extract_subsignature(b, mask, 3)

    def test_rejects_out_of_range_partition(self):
        mask = make_partition_mask(64, 4, seed=1)
        with pytest.raises(ContractViolation):
            extract_subsignature(0, mask, 4)
        with pytest.raises(ContractViolation):
            extract_subsignature(0, mask, -1)

    @given(sig64, sig64, st.integers(1, 16), st.integers(0, 2**32 - 1))
    @settings(max_examples=60)
    def test_hamming_decomposes_over_partitions(self, a, b, n, seed):
        mask = make_partition_mask(64, n, seed)
        total = sum(
            hamming(extract_subsignature(a, mask, p), extract_subsignature(b, mask, p))
            for p in range(n)
        )
        assert total == hamming(a, b)

    @given(sig64, st.integers(2, 8), st.integers(0, 2**32 - 1), st.data())
    @settings(max_examples=60)
    def test_pigeonhole(self, a, n, seed, data):
        mask = make_partition_mask(64, n, seed)
        # flip fewer than n bits; at least one partition extract must be intact
        k = data.draw(st.integers(0, n - 1))
        flip_positions = data.draw(
            st.lists(st.integers(0, 63), min_size=k, max_size=k, unique=True)
        )
        b = a
        for pos in flip_positions:
            b ^= 1 << pos
        intact = [
            p
            for p in range(n)
            if extract_subsignature(a, mask, p) == extract_subsignature(b, mask, p)
        ]
        assert intact

    def test_array_extraction_matches_scalar(self):
        mask = make_partition_mask(64, 4, seed=11)
        rng = np.random.default_rng(0)
        sigs = rng.integers(0, 1 << 64, size=64, dtype=np.uint64)
        for p in range(4):
            sub = extract_subsignatures_array(sigs, mask, p)
            for s, got in zip(sigs, sub):
                assert int(got) == extract_subsignature(int(s), mask, p)


class TestHexSerialization:
    def test_round_trip(self):
        for sig in (0, 1, 0xDEADBEEF01234567, (1 << 64) - 1):
            assert sig_from_hex(sig_to_hex(sig)) == sig

    def test_format(self):
        assert sig_to_hex(0xAB) == "00000000000000ab"

    def test_rejects_wrong_length(self):
        with pytest.raises(DataFormatError):
            sig_from_hex("ab")
        with pytest.raises(DataFormatError):
            sig_from_hex("zz" * 8)


class TestSignBits:
    def test_alternating_pattern(self):
        v = np.tile([1.0, -1.0], 32)
        assert pack_signbits(v) == 0xAAAAAAAAAAAAAAAA

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        v = np.where(rng.random(64) < 0.5, -1.0, 1.0)
        assert np.array_equal(unpack_signbits(pack_signbits(v)), v)

    def test_rejects_wrong_width(self):
        with pytest.raises(ContractViolation):
            pack_signbits(np.ones(32))


class TestValueTypes:
    def test_coord_ordering_lexicographic(self):
        assert VoxelCoord(1, 9, 9) < VoxelCoord(2, 0, 0)
        assert VoxelCoord(1, 2, 3) < VoxelCoord(1, 2, 4)

    def test_negative_coord_rejected(self):
        with pytest.raises(ContractViolation):
            VoxelCoord(0, -1, 0)

    def test_record_validates_signature(self):
        with pytest.raises(ContractViolation):
            SignatureRecord(VoxelCoord(0, 0, 0), 1 << 64)

"""Bit-exact geometry of the continuity hash table.

A segment pair is laid out as::

    | even bucket | indicator | shared SBuckets ... | odd bucket |

Indicator bit ``i`` covers slot ``i`` of the pair in canonical order: even
bucket slots, shared SBucket slots, odd bucket slots, then the slots of an
optional added SBucket group. See LAYOUT.md for the byte-level contract.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

KEY_SIZE = 16
MAX_VALUE_LEN = 15
SLOT_SIZE = 32
SLOTS_PER_BUCKET = 4
BUCKET_SIZE = SLOT_SIZE * SLOTS_PER_BUCKET
INDICATOR_SIZE = 8
CACHE_LINE = 64

ADDED_GROUP_SBUCKETS = 3
ADDED_GROUP_SLOTS = ADDED_GROUP_SBUCKETS * SLOTS_PER_BUCKET
ADDED_GROUP_SIZE = ADDED_GROUP_SBUCKETS * BUCKET_SIZE

FNV_OFFSET_BASIS = 14695981039346656037
FNV_PRIME = 1099511628211
_MASK64 = (1 << 64) - 1


class LayoutError(ValueError):
    pass


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET_BASIS
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def check_key(key: bytes) -> None:
    if not isinstance(key, (bytes, bytearray)) or len(key) != KEY_SIZE:
        raise ValueError(f"keys are exactly {KEY_SIZE} bytes")


def check_value(value: bytes) -> None:
    if not isinstance(value, (bytes, bytearray)):
        raise TypeError("value must be bytes")
    if len(value) > MAX_VALUE_LEN:
        raise ValueError(f"value of {len(value)} bytes exceeds {MAX_VALUE_LEN}")


def encode_slot(key: bytes, value: bytes) -> bytes:
    return bytes(key) + bytes((len(value),)) + bytes(value).ljust(MAX_VALUE_LEN, b"\0")


def decode_slot(raw: bytes) -> tuple[bytes, bytes]:
    n = min(raw[KEY_SIZE], MAX_VALUE_LEN)
    return bytes(raw[:KEY_SIZE]), bytes(raw[KEY_SIZE + 1:KEY_SIZE + 1 + n])


def align_up(n: int, align: int = CACHE_LINE) -> int:
    return (n + align - 1) // align * align


@dataclass(frozen=True)
class TableLayout:
    n_buckets: int
    sbuckets_per_pair: int = 3
    base_addr: int = 0

    def __post_init__(self):
        if self.n_buckets < 2 or self.n_buckets % 2:
            raise LayoutError("number of buckets must be even and at least 2")
        if self.sbuckets_per_pair < 1:
            raise LayoutError("need at least one SBucket per pair")
        if (2 + self.sbuckets_per_pair + ADDED_GROUP_SBUCKETS) * SLOTS_PER_BUCKET > 64:
            raise LayoutError("indicator would need more than 64 bits")
        if self.base_addr % CACHE_LINE:
            raise LayoutError("base address must be cache-line aligned")

    size_bu = BUCKET_SIZE
    indicator_size = INDICATOR_SIZE

    @property
    def n_pairs(self) -> int:
        return self.n_buckets // 2

    @property
    def size_se(self) -> int:
        return BUCKET_SIZE + INDICATOR_SIZE + self.sbuckets_per_pair * BUCKET_SIZE

    @property
    def pair_stride(self) -> int:
        return self.size_se + BUCKET_SIZE

    @property
    def table_bytes(self) -> int:
        return self.n_pairs * self.pair_stride

    @property
    def primary_slots(self) -> int:
        """Slots per pair without an added group."""
        return (2 + self.sbuckets_per_pair) * SLOTS_PER_BUCKET

    @property
    def added_first_bit(self) -> int:
        return self.primary_slots

    @cached_property
    def added_mask(self) -> int:
        return ((1 << ADDED_GROUP_SLOTS) - 1) << self.added_first_bit

    @cached_property
    def added_bits(self) -> tuple[int, ...]:
        return tuple(range(self.added_first_bit, self.added_first_bit + ADDED_GROUP_SLOTS))

    # -- addressing --------------------------------------------------------

    def bucket_number(self, key_hash: int) -> int:
        return key_hash % self.n_buckets

    def segment_offset(self, bucket: int) -> int:
        if not 0 <= bucket < self.n_buckets:
            raise LayoutError(f"bucket {bucket} out of range [0, {self.n_buckets})")
        if bucket % 2 == 0:
            return self.base_addr + bucket // 2 * self.pair_stride
        return self.base_addr + (bucket - 1) // 2 * self.pair_stride + BUCKET_SIZE

    def pair_addr(self, pair: int) -> int:
        return self.base_addr + pair * self.pair_stride

    def indicator_addr(self, pair: int) -> int:
        return self.pair_addr(pair) + BUCKET_SIZE

    def slot_offset(self, bit: int) -> int:
        """Offset of a primary slot from the start of its pair."""
        s4 = self.sbuckets_per_pair * SLOTS_PER_BUCKET
        if bit < SLOTS_PER_BUCKET:
            return bit * SLOT_SIZE
        if bit < SLOTS_PER_BUCKET + s4:
            return BUCKET_SIZE + INDICATOR_SIZE + (bit - SLOTS_PER_BUCKET) * SLOT_SIZE
        if bit < self.primary_slots:
            return self.size_se + (bit - SLOTS_PER_BUCKET - s4) * SLOT_SIZE
        raise LayoutError(f"bit {bit} is not a primary slot")

    def slot_addr(self, pair: int, bit: int, group_addr: int | None = None) -> int:
        if bit >= self.added_first_bit:
            if group_addr is None or bit >= self.added_first_bit + ADDED_GROUP_SLOTS:
                raise LayoutError(f"bit {bit} has no backing slot")
            return group_addr + (bit - self.added_first_bit) * SLOT_SIZE
        return self.pair_addr(pair) + self.slot_offset(bit)

    # -- scan orders -------------------------------------------------------

    @cached_property
    def _orders(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        s4 = self.sbuckets_per_pair * SLOTS_PER_BUCKET
        even = tuple(range(SLOTS_PER_BUCKET + s4))
        odd = tuple(reversed(range(SLOTS_PER_BUCKET, self.primary_slots)))
        return even, odd

    def segment_order(self, parity: int) -> tuple[int, ...]:
        """Indicator bits of one segment in insertion scan order.

        Even homes scan their bucket then the SBuckets left to right; odd homes
        scan their bucket then the SBuckets right to left.
        """
        return self._orders[parity & 1]

    @cached_property
    def _segment_slots(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        out = []
        for parity in (0, 1):
            seg_start = BUCKET_SIZE if parity else 0
            out.append(tuple((b, self.slot_offset(b) - seg_start) for b in self.segment_order(parity)))
        return tuple(out)

    def segment_slots(self, parity: int) -> tuple[tuple[int, int], ...]:
        """``(bit, offset within the segment)`` in scan order."""
        return self._segment_slots[parity & 1]

    def indicator_offset_in_segment(self, parity: int) -> int:
        return 0 if parity & 1 else BUCKET_SIZE


# -- table header and root record -------------------------------------------

def directory_bytes(n_pairs: int) -> int:
    """One 8-byte added-group pointer per pair, padded to a cache line."""
    return align_up(n_pairs * 8)


def table_allocation_bytes(n_buckets: int, sbuckets_per_pair: int = 3) -> int:
    probe = TableLayout(n_buckets, sbuckets_per_pair)
    return directory_bytes(probe.n_pairs) + probe.table_bytes


ROOT_ADDR = 0
ROOT_SIZE = 128
ROOT_MAGIC = 0x43484153  # "CHAS"
CONTROL_ACTIVE_BIT = 1
CONTROL_RESIZING_BIT = 2
DESCRIPTOR = struct.Struct("<QQQQ")  # table_addr, n_buckets, sbuckets_per_pair, epoch


def descriptor_addr(index: int) -> int:
    return ROOT_ADDR + 8 + index * DESCRIPTOR.size


def pack_control(active: int, resizing: bool) -> int:
    return (ROOT_MAGIC << 32) | (active & 1) | (CONTROL_RESIZING_BIT if resizing else 0)


def unpack_control(word: int) -> tuple[int, bool] | None:
    if word >> 32 != ROOT_MAGIC or word & ~(CONTROL_ACTIVE_BIT | CONTROL_RESIZING_BIT) & 0xFFFFFFFF:
        return None
    return word & CONTROL_ACTIVE_BIT, bool(word & CONTROL_RESIZING_BIT)

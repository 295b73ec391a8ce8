import pytest
from hypothesis import given, strategies as st

from chash.layout import (
    DESCRIPTOR, LayoutError, TableLayout, decode_slot, descriptor_addr, encode_slot,
    fnv1a_64, pack_control, unpack_control,
)

# FNV-1a 64 of b"A" * 16, computed by a standalone reference implementation
# that also reproduces the published vectors checked below.
AAAA_HASH = 1561731169944218229


def test_fnv_published_vectors():
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_fnv_of_sixteen_a():
    assert fnv1a_64(b"A" * 16) == AAAA_HASH
    assert TableLayout(20).bucket_number(AAAA_HASH) == 9


@pytest.mark.parametrize("h, bucket", [(44, 4), (20, 0), (19, 19)])
def test_bucket_number(h, bucket):
    assert TableLayout(20).bucket_number(h) == bucket


def test_default_geometry():
    lay = TableLayout(20)
    assert (lay.size_bu, lay.size_se, lay.pair_stride) == (128, 520, 648)
    assert lay.pair_stride == 2 * lay.size_bu + 8 + 3 * lay.size_bu
    assert lay.primary_slots == 20
    assert lay.added_bits == tuple(range(20, 32))


@pytest.mark.parametrize("bucket, offset", [(0, 0), (1, 128), (4, 1296), (5, 1424), (9, 2720)])
def test_segment_offsets(bucket, offset):
    assert TableLayout(20).segment_offset(bucket) == offset


def test_segment_offset_with_base_and_range_check():
    lay = TableLayout(20, base_addr=640)
    assert lay.segment_offset(4) == 640 + 1296
    with pytest.raises(LayoutError):
        lay.segment_offset(20)
    with pytest.raises(LayoutError):
        lay.segment_offset(-1)


def test_invalid_layouts_rejected():
    for args in [(0,), (7,), (20, 0), (20, 3, 1)]:
        with pytest.raises(LayoutError):
            TableLayout(*args)
    with pytest.raises(LayoutError):
        TableLayout(20, 12)  # indicator would exceed 64 bits


def test_pair_memory_order():
    lay = TableLayout(20)
    assert lay.slot_offset(0) == 0                  # even bucket
    assert lay.indicator_addr(0) == 128             # indicator after the even bucket
    assert lay.slot_offset(4) == 136                # shared SBuckets
    assert lay.slot_offset(15) == 136 + 11 * 32
    assert lay.slot_offset(16) == 520               # odd bucket last
    assert lay.slot_offset(19) == 520 + 3 * 32


def test_scan_orders():
    lay = TableLayout(20)
    assert lay.segment_order(0) == tuple(range(16))
    assert lay.segment_order(1) == (19, 18, 17, 16) + tuple(range(15, 3, -1))


def test_segment_slots_lie_inside_the_segment():
    lay = TableLayout(20)
    for parity in (0, 1):
        offs = [off for _, off in lay.segment_slots(parity)]
        assert min(offs) >= 0 and max(offs) + 32 <= lay.size_se
        ind = lay.indicator_offset_in_segment(parity)
        assert all(off + 32 <= ind or off >= ind + 8 for off in offs)


def test_added_slot_addresses():
    lay = TableLayout(20)
    assert lay.slot_addr(3, 20, group_addr=4096) == 4096
    assert lay.slot_addr(3, 31, group_addr=4096) == 4096 + 11 * 32
    with pytest.raises(LayoutError):
        lay.slot_addr(3, 20)


@given(st.binary(min_size=16, max_size=16), st.binary(max_size=15))
def test_slot_round_trip(key, value):
    raw = encode_slot(key, value)
    assert len(raw) == 32
    assert decode_slot(raw) == (key, value)


def test_control_word():
    for active in (0, 1):
        for resizing in (False, True):
            assert unpack_control(pack_control(active, resizing)) == (active, resizing)
    assert unpack_control(0) is None
    assert unpack_control(pack_control(0, False) | 0x10) is None
    assert descriptor_addr(0) == 8 and descriptor_addr(1) == 40 and DESCRIPTOR.size == 32

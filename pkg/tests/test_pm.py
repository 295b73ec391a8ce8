import random

import pytest
from hypothesis import given, settings, strategies as st

from chash.pm import CrashImage, PmAlignmentError, PmBoundsError, PmRegion, SimulatedCrash


def test_fresh_region_reads_zero():
    pm = PmRegion(4096)
    assert pm.read(100, 64) == bytes(64)
    assert pm.capacity == 4096


def test_read_after_store():
    pm = PmRegion(4096)
    pm.store(10, b"hello")
    assert pm.read(10, 5) == b"hello"


def test_bounds_and_alignment_errors():
    pm = PmRegion(128)
    with pytest.raises(PmBoundsError):
        pm.store(120, bytes(16))
    with pytest.raises(PmBoundsError):
        pm.read(-1, 4)
    with pytest.raises(PmAlignmentError):
        pm.atomic_store_8(3, 1)
    with pytest.raises(PmAlignmentError):
        pm.compare_and_swap_8(12, 0, 1)


def test_unflushed_store_survives_per_word():
    pm = PmRegion(256)
    pm.store(0, b"\xab" * 32)
    seen = set()
    for seed in range(200):
        img = pm.crash(seed).data[:32]
        words = [img[i:i + 8] for i in range(0, 32, 8)]
        assert all(w in (bytes(8), b"\xab" * 8) for w in words)
        seen.add(tuple(w == bytes(8) for w in words))
    assert len(seen) > 4  # words are decided independently


def test_flushed_and_fenced_store_is_durable():
    pm = PmRegion(256)
    pm.store(0, b"x" * 40)
    pm.flush_line(0, 40)
    pm.fence()
    for seed in range(50):
        assert pm.crash(seed).data[:40] == b"x" * 40


def test_flush_spanning_two_lines_counts_two():
    pm = PmRegion(256)
    with pm.tagged("t"):
        pm.store(60, bytes(range(8)))
        assert pm.flush_line(60, 8) == 2
    assert pm.counters("t")["flushes"] == 2


def test_flush_of_clean_line_still_counts():
    pm = PmRegion(256)
    with pm.tagged("t"):
        pm.flush_line(128)
    assert pm.counters("t")["flushes"] == 1
    assert pm.read_persisted(128, 64) == bytes(64)


def test_atomic_word_never_torn():
    pm = PmRegion(64)
    pm.atomic_store_8(8, 0x1111111111111111)
    pm.persist(8, 8)
    pm.atomic_store_8(8, 0xFFFF)
    outcomes = set()
    for seed in range(10_000):
        word = int.from_bytes(pm.crash(seed).data[8:16], "little")
        assert word in (0x1111111111111111, 0xFFFF)
        outcomes.add(word)
    assert len(outcomes) == 2


def test_fence_orders_later_stores():
    pm = PmRegion(256)
    pm.store(0, b"A" * 8)
    pm.flush_line(0)
    pm.fence()
    pm.store(128, b"B" * 8)
    for seed in range(500):
        img = pm.crash(seed).data
        if img[128:136] == b"B" * 8:
            assert img[0:8] == b"A" * 8


def test_unfenced_unflushed_store_independent_of_flushed_one():
    pm = PmRegion(256)
    pm.store(0, b"A" * 8)
    pm.store(128, b"B" * 8)
    pm.flush_line(128)
    a_states = {pm.crash(seed).data[0:8] for seed in range(100)}
    assert a_states == {bytes(8), b"A" * 8}
    assert all(pm.crash(s).data[128:136] == b"B" * 8 for s in range(20))


def test_crash_is_reproducible_from_seed():
    pm = PmRegion(512)
    rng = random.Random(3)
    for _ in range(20):
        pm.store(rng.randrange(0, 500), rng.randbytes(8))
    a, b = pm.crash(42), pm.crash(42)
    assert a.data == b.data and a.kept == b.kept and a.dropped == b.dropped


def test_crash_image_file_round_trip(tmp_path):
    pm = PmRegion(256)
    pm.store(0, b"abc")
    pm.persist(0, 3)
    path = tmp_path / "img.bin"
    pm.crash(0).save(path)
    loaded = CrashImage.load(path)
    assert loaded.data == pm.read_persisted(0, 256)
    reopened = PmRegion.from_image(loaded)
    assert reopened.read(0, 3) == b"abc"


def test_tag_counters_are_exact():
    pm = PmRegion(1024)
    with pm.tagged("op"):
        for i in range(7):
            pm.store(i * 64, b"z")
            pm.flush_line(i * 64)
        pm.fence()
    c = pm.counters("op")
    assert c == {"flushes": 7, "fences": 1, "stores": 7, "atomic_stores": 0}
    pm.reset_counters()
    assert pm.counters("op")["flushes"] == 0


def test_event_hook_can_raise_crash():
    pm = PmRegion(256)

    def hook(idx, kind):
        if kind == "fence":
            raise SimulatedCrash(pm.crash(0))

    pm.set_event_hook(hook)
    pm.store(0, b"q" * 8)
    pm.flush_line(0)
    with pytest.raises(SimulatedCrash) as info:
        pm.fence()
    assert info.value.image.data[:8] == b"q" * 8


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 500), st.binary(min_size=1, max_size=24)), max_size=30))
def test_reads_match_naive_byte_map(writes):
    pm = PmRegion(1024)
    oracle = bytearray(1024)
    for i, (addr, data) in enumerate(writes):
        pm.store(addr, data)
        oracle[addr:addr + len(data)] = data
        if i % 3 == 0:
            pm.flush_line(addr, len(data))
    assert pm.read(0, 1024) == bytes(oracle)

import random
import struct

import pytest

from chash import crashcheck
from chash.crashcheck import SweepConfig, check_image, checked_value, sweep, value_ok
from chash.layout import ROOT_ADDR, encode_slot, unpack_control
from chash.pm import PmRegion, SimulatedCrash
from chash.table import ContinuityHashTable, IntegrityError, Outcome


def images_during(pm, fn, *args, keep=0.5):
    """Crash image after every PM event of ``fn``."""
    images = []
    rng = random.Random(7)
    pm.set_event_hook(lambda idx, kind: images.append((kind, pm.crash(rng.randrange(1 << 30), keep))))
    try:
        fn(*args)
    finally:
        pm.set_event_hook(None)
    return images


def test_recover_without_resize_is_immediately_usable(table, pm):
    table.insert(b"a" * 16, b"1")
    t2 = ContinuityHashTable.recover(pm.crash(0))
    assert t2.search_local(b"a" * 16) == b"1"
    assert t2.insert(b"b" * 16, b"2") is Outcome.INSERTED


def test_corrupt_root_is_fatal(table, pm):
    img = bytearray(pm.crash(0).data)
    img[ROOT_ADDR + 4:ROOT_ADDR + 8] = b"\0\0\0\0"
    with pytest.raises(IntegrityError):
        ContinuityHashTable.recover(bytes(img))


def test_crash_inside_insert_is_all_or_nothing(table, pm):
    table.insert(b"x" * 16, b"keep")
    images = images_during(pm, table.insert, b"n" * 16, b"new")
    assert [k for k, _ in images] == ["store", "flush", "fence", "atomic_store", "flush", "fence"]
    seen = set()
    for kind, img in images:
        got = ContinuityHashTable.recover(img).mapping()
        assert got in ({b"x" * 16: b"keep"}, {b"x" * 16: b"keep", b"n" * 16: b"new"})
        seen.add(len(got))
    # before the indicator store the key can never be visible
    for _, img in images[:3]:
        assert ContinuityHashTable.recover(img).search_local(b"n" * 16) is None
    assert ContinuityHashTable.recover(images[-1][1]).search_local(b"n" * 16) == b"new"
    assert seen == {1, 2}


def test_crash_inside_update_shows_old_or_new(table, pm):
    table.insert(b"u" * 16, b"old")
    images = images_during(pm, table.update, b"u" * 16, b"new")
    values = [ContinuityHashTable.recover(img).mapping() for _, img in images]
    assert all(v in ({b"u" * 16: b"old"}, {b"u" * 16: b"new"}) for v in values)
    assert all(v == {b"u" * 16: b"old"} for v in values[:3])


def test_crash_inside_delete(table, pm):
    table.insert(b"d" * 16, b"v")
    images = images_during(pm, table.delete, b"d" * 16)
    assert [k for k, _ in images] == ["atomic_store", "flush", "fence"]
    assert ContinuityHashTable.recover(images[-1][1]).mapping() == {}


def _views(image):
    """Old and new table contents straight from an image, without recovery."""
    t = ContinuityHashTable(PmRegion.from_image(image))
    active, resizing = unpack_control(t.pm.read_u64(ROOT_ADDR))
    old = {k for _, _, k, _ in t._iter_valid(t._load_view(active))}
    new = {k for _, _, k, _ in t._iter_valid(t._load_view(1 - active))} if resizing else set()
    return resizing, old, new


def test_crash_mid_resize_completes_with_each_item_once(table, pm):
    rng = random.Random(1)
    ref = {}
    for i in range(90):
        k = rng.randbytes(16)
        if table.insert(k, b"%d" % i) is Outcome.INSERTED:
            ref[k] = b"%d" % i
    images = images_during(pm, table.resize, keep=1.0)
    both = only_old = 0
    sizes = set()
    for _, img in images:
        resizing, old, new = _views(img)
        if resizing:
            both += bool(old & new)
            only_old += bool(old - new)
        t = ContinuityHashTable.recover(img)
        assert t.mapping() == ref            # mapping() also rejects duplicates
        assert t.resizing is None
        assert t.layout.n_buckets == (40 if resizing else t.layout.n_buckets)
        sizes.add(t.layout.n_buckets)
    assert both and only_old                 # both interesting crash states were hit
    assert sizes == {20, 40}


def test_recovery_of_first_item_already_in_new_table(table, pm):
    for i in range(30):
        table.insert(b"f%015d" % i, b"v")
    ref = table.mapping()
    snap = []

    def hook(idx, kind):
        # stop right after the first item's commit into the new table
        if table.resizing is not None and kind == "fence" and not snap:
            resizing, old, new = _views(pm.crash(0, 1.0))
            if resizing and old & new:
                snap.append(pm.crash(0, 1.0))

    pm.set_event_hook(hook)
    table.resize()
    pm.set_event_hook(None)
    t = ContinuityHashTable.recover(snap[0])
    assert t.mapping() == ref


def test_nested_recovery_is_idempotent(table, pm):
    for i in range(60):
        table.insert(b"n%015d" % i, b"v")
    ref = table.mapping()
    mid = []
    pm.set_event_hook(lambda idx, kind: mid.append(pm.crash(idx)) if table.resizing is not None and idx % 17 == 0 else None)
    table.resize()
    pm.set_event_hook(None)
    assert mid
    for img in mid[::3]:
        region = PmRegion.from_image(img)
        inner = []
        region.set_event_hook(lambda idx, kind: inner.append(region.crash(idx)) if idx % 5 == 0 else None)
        first = ContinuityHashTable.recover(region)
        assert first.mapping() == ref
        for again in inner:
            assert ContinuityHashTable.recover(again).mapping() == ref


def test_raised_crash_then_recover(table, pm):
    table.insert(b"r" * 16, b"v")

    def hook(idx, kind):
        if kind == "atomic_store":
            raise SimulatedCrash(pm.crash(idx))

    pm.set_event_hook(hook)
    with pytest.raises(SimulatedCrash) as info:
        table.delete(b"r" * 16)
    assert ContinuityHashTable.recover(info.value.image).mapping() in ({}, {b"r" * 16: b"v"})


def test_checksummed_values():
    v = checked_value(b"k" * 16, b"p" * 11)
    assert len(v) == 15 and value_ok(b"k" * 16, v)
    assert not value_ok(b"j" * 16, v)
    assert not value_ok(b"k" * 16, v[:-1] + b"\0")


def test_small_sweep_has_no_violations():
    report = sweep(SweepConfig(seed=5, ops=300, key_pool=250, initial_buckets=10, raise_runs=5, nested_every=5))
    assert report.violations == []
    assert report.injections > 500 and report.during_resize > 0 and report.nested > 0 and report.raised == 5


def test_sweep_detects_a_missing_persist(monkeypatch):
    def unpersisted(self, view, pair, bit, key, value):
        self.pm.store(view.layout.slot_addr(pair, bit, view.groups.get(pair)), encode_slot(key, value))

    monkeypatch.setattr(ContinuityHashTable, "_write_slot", unpersisted)
    report = sweep(SweepConfig(seed=1, ops=60, raise_runs=0, nested_every=0))
    assert report.violations

"""The continuity hash table over a simulated PM region.

Every write commits through one 8-byte atomic store to the pair's indicator:

* insert: write + persist the slot, then set its bit (2 persists)
* update: write + persist a free slot, then flip old/new bits together (2)
* delete: clear the bit (1)

Resizing rehashes item by item (insert into the new table, then delete from
the old one) under a root record whose control word is only ever changed by
an atomic store, so recovery can always finish an interrupted resize.
"""
from __future__ import annotations

import math
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass
from enum import IntEnum
from fractions import Fraction
from typing import Callable, Iterator, Optional

from .layout import (
    ADDED_GROUP_SIZE,
    ADDED_GROUP_SLOTS,
    CACHE_LINE,
    DESCRIPTOR,
    KEY_SIZE,
    ROOT_ADDR,
    ROOT_SIZE,
    SLOT_SIZE,
    SLOTS_PER_BUCKET,
    LayoutError,
    TableLayout,
    align_up,
    check_key,
    check_value,
    decode_slot,
    descriptor_addr,
    directory_bytes,
    encode_slot,
    fnv1a_64,
    pack_control,
    unpack_control,
)
from .pm import CrashImage, PmRegion
from .sync import NoLocks, SeqLatch


class Outcome(IntEnum):
    INSERTED = 1
    DUPLICATE = 2
    NEEDS_RESIZE = 3
    DELETED = 4
    NOT_FOUND = 5
    UPDATED = 6


class TableError(Exception):
    pass


class QuotaExhausted(TableError):
    pass


class GroupExistsError(TableError, ValueError):
    pass


class AllocationError(TableError, MemoryError):
    pass


class IntegrityError(TableError):
    pass


@dataclass(frozen=True)
class ResizeRecord:
    epoch: int
    n_buckets: int
    items: int
    total_slots: int
    added_groups: int

    @property
    def load_factor(self) -> float:
        return self.items / self.total_slots


class Allocator:
    """Volatile first-fit allocator; rebuilt from the root record on recovery."""

    def __init__(self, capacity: int, start: int = ROOT_SIZE):
        self.capacity = capacity
        self.start = align_up(start)
        self._extents: dict[int, int] = {}

    def allocate(self, size: int) -> int:
        size = align_up(size)
        cursor = self.start
        for addr in sorted(self._extents):
            if addr - cursor >= size:
                break
            cursor = max(cursor, align_up(addr + self._extents[addr]))
        if cursor + size > self.capacity:
            raise AllocationError(f"no room for {size} bytes in a {self.capacity}-byte region")
        self._extents[cursor] = size
        return cursor

    def reserve(self, addr: int, size: int) -> None:
        end = addr + size
        if addr < self.start or end > self.capacity:
            raise IntegrityError(f"extent [{addr}, {end}) outside the heap")
        for a, s in self._extents.items():
            if addr < a + s and a < end:
                raise IntegrityError(f"extent [{addr}, {end}) overlaps [{a}, {a + s})")
        self._extents[addr] = size

    def free(self, addr: int) -> None:
        del self._extents[addr]

    @property
    def used(self) -> int:
        return sum(self._extents.values())


class TableView:
    """Volatile handle on one table generation (an epoch)."""

    def __init__(self, layout: TableLayout, table_addr: int, epoch: int, groups: Optional[dict[int, int]] = None):
        self.layout = layout
        self.table_addr = table_addr
        self.epoch = epoch
        self.groups: dict[int, int] = dict(groups or {})
        self.latches = [SeqLatch() for _ in range(layout.n_pairs)]

    def directory_addr(self, pair: int) -> int:
        return self.table_addr + 8 * pair

    @property
    def allocation_bytes(self) -> int:
        return directory_bytes(self.layout.n_pairs) + self.layout.table_bytes


def _quota(n_pairs: int, ratio: Fraction) -> int:
    return math.ceil(n_pairs * ratio)


class ContinuityHashTable:
    """Use :meth:`create` for a fresh region and :meth:`recover` after a crash."""

    def __init__(self, pm: PmRegion, *, added_ratio=Fraction(1, 10),
                 hash_fn: Callable[[bytes], int] = fnv1a_64, locks=None):
        self.pm = pm
        self.added_ratio = Fraction(added_ratio)
        self.hash_fn = hash_fn
        self.locks = locks if locks is not None else NoLocks()
        self.alloc = Allocator(pm.capacity)
        self.view: TableView
        self.resizing: Optional[TableView] = None
        self.resize_log: list[ResizeRecord] = []
        self.listeners: list[Callable[..., None]] = []
        self._active = 0

    # -- construction ------------------------------------------------------

    @classmethod
    def create(cls, pm: PmRegion, n_buckets: int = 20, sbuckets_per_pair: int = 3, **kw) -> "ContinuityHashTable":
        t = cls(pm, **kw)
        with pm.tagged("format"):
            view = t._allocate_table(n_buckets, sbuckets_per_pair, epoch=0)
            t._write_descriptor(0, view)
            t._write_control(0, resizing=False)
        t.view = view
        return t

    @classmethod
    def recover(cls, source: PmRegion | CrashImage | bytes, **kw) -> "ContinuityHashTable":
        pm = source if isinstance(source, PmRegion) else PmRegion.from_image(source)
        t = cls(pm, **kw)
        ctl = unpack_control(pm.read_u64(ROOT_ADDR))
        if ctl is None:
            raise IntegrityError("root record control word is not valid")
        active, resizing = ctl
        t._active = active
        old = t._load_view(active)
        t.view = old
        if resizing:
            new = t._load_view(1 - active)
            if new.epoch != old.epoch + 1:
                raise IntegrityError("resize target does not follow the active epoch")
            t.resizing = new
            with pm.tagged("recovery"):
                t._rehash(old, new, check_first=True)
                t._finish_resize(old, new)
        return t

    def _allocate_table(self, n_buckets: int, sbuckets: int, epoch: int) -> TableView:
        n_pairs = n_buckets // 2
        probe = TableLayout(n_buckets, sbuckets)
        size = directory_bytes(n_pairs) + probe.table_bytes
        addr = self.alloc.allocate(size)
        # recycled space must read as an empty table before it is published
        self.pm.store(addr, bytes(size))
        self.pm.persist(addr, size)
        layout = TableLayout(n_buckets, sbuckets, base_addr=addr + directory_bytes(n_pairs))
        return TableView(layout, addr, epoch)

    def _write_descriptor(self, index: int, view: TableView) -> None:
        lay = view.layout
        addr = descriptor_addr(index)
        self.pm.store(addr, DESCRIPTOR.pack(view.table_addr, lay.n_buckets, lay.sbuckets_per_pair, view.epoch))
        self.pm.persist(addr, DESCRIPTOR.size)

    def _write_control(self, active: int, resizing: bool) -> None:
        self.pm.atomic_store_8(ROOT_ADDR, pack_control(active, resizing))
        self.pm.persist(ROOT_ADDR, 8)

    def _load_view(self, index: int) -> TableView:
        table_addr, n_buckets, sbuckets, epoch = DESCRIPTOR.unpack(
            self.pm.read(descriptor_addr(index), DESCRIPTOR.size))
        if table_addr % CACHE_LINE:
            raise IntegrityError(f"table address {table_addr} is not aligned")
        try:
            n_pairs = n_buckets // 2
            layout = TableLayout(n_buckets, sbuckets, base_addr=table_addr + directory_bytes(n_pairs))
        except LayoutError as exc:
            raise IntegrityError(f"bad table descriptor: {exc}") from exc
        view = TableView(layout, table_addr, epoch)
        self.alloc.reserve(table_addr, view.allocation_bytes)
        raw = self.pm.read(table_addr, 8 * n_pairs)
        for pair, (addr,) in enumerate(struct.iter_unpack("<Q", raw)):
            if addr:
                if addr % CACHE_LINE:
                    raise IntegrityError(f"added group for pair {pair} is misaligned")
                self.alloc.reserve(addr, ADDED_GROUP_SIZE)
                view.groups[pair] = addr
        return view

    # -- properties --------------------------------------------------------

    @property
    def layout(self) -> TableLayout:
        return self.view.layout

    @property
    def epoch(self) -> int:
        return self.view.epoch

    def quota(self, view: Optional[TableView] = None) -> int:
        view = view or self.view
        return _quota(view.layout.n_pairs, self.added_ratio)

    def _quota_left(self, view: TableView) -> bool:
        return len(view.groups) < self.quota(view)

    def bucket_number(self, key: bytes) -> int:
        return self.layout.bucket_number(self.hash_fn(key))

    def segment_offset(self, bucket: int) -> int:
        return self.layout.segment_offset(bucket)

    def pair_of(self, key: bytes) -> int:
        return self.bucket_number(key) >> 1

    def add_listener(self, fn: Callable[..., None]) -> None:
        self.listeners.append(fn)

    def _emit(self, event: str, **info) -> None:
        for fn in self.listeners:
            fn(event, **info)

    # -- slot-level helpers ------------------------------------------------

    def _find(self, view: TableView, pair: int, parity: int, key: bytes, ind: int) -> Optional[int]:
        if not ind:
            return None
        lay = view.layout
        seg = self.pm.read(lay.segment_offset(2 * pair + parity), lay.size_se)
        for bit, rel in lay.segment_slots(parity):
            if ind >> bit & 1 and seg[rel:rel + KEY_SIZE] == key:
                return bit
        if ind & lay.added_mask:
            group = view.groups.get(pair)
            if group is None:
                raise IntegrityError(f"pair {pair} has added-slot bits but no added group")
            raw = self.pm.read(group, ADDED_GROUP_SIZE)
            for i, bit in enumerate(lay.added_bits):
                off = i * SLOT_SIZE
                if ind >> bit & 1 and raw[off:off + KEY_SIZE] == key:
                    return bit
        return None

    def _first_free(self, view: TableView, pair: int, parity: int, ind: int) -> Optional[int]:
        lay = view.layout
        for bit in lay.segment_order(parity):
            if not ind >> bit & 1:
                return bit
        if pair in view.groups:
            for bit in lay.added_bits:
                if not ind >> bit & 1:
                    return bit
        return None

    def _write_slot(self, view: TableView, pair: int, bit: int, key: bytes, value: bytes) -> None:
        self.locks.assert_held(view.epoch, pair * 64 + bit)
        addr = view.layout.slot_addr(pair, bit, view.groups.get(pair))
        self.pm.store(addr, encode_slot(key, value))
        self.pm.persist(addr, SLOT_SIZE)

    def _flip(self, view: TableView, pair: int, set_mask: int = 0, clear_mask: int = 0) -> None:
        for bit in range((set_mask | clear_mask).bit_length()):
            if (set_mask | clear_mask) >> bit & 1:
                self.locks.assert_held(view.epoch, pair * 64 + bit)
        addr = view.layout.indicator_addr(pair)
        pm = self.pm
        while True:
            old = pm.read_u64(addr)
            if pm.compare_and_swap_8(addr, old, (old | set_mask) & ~clear_mask):
                break
        pm.persist(addr, 8)

    def _locate(self, view: TableView, key: bytes, h: int) -> tuple[int, int, int]:
        b = h % view.layout.n_buckets
        return b >> 1, b & 1, view.layout.indicator_addr(b >> 1)

    # -- write operations --------------------------------------------------

    def insert(self, key: bytes, value: bytes) -> Outcome:
        check_key(key)
        check_value(value)
        h = self.hash_fn(key)
        with self.locks.key(h):
            return self._insert(self.view, key, value, h)

    def _insert(self, view: TableView, key: bytes, value: bytes, h: int) -> Outcome:
        pair, parity, ind_addr = self._locate(view, key, h)
        pm = self.pm
        while True:
            ind = pm.read_u64(ind_addr)
            if self._find(view, pair, parity, key, ind) is not None:
                return Outcome.DUPLICATE
            target = self._first_free(view, pair, parity, ind)
            if target is None:
                return Outcome.NEEDS_RESIZE
            with self.locks.slots(view.epoch, (pair * 64 + target,)):
                if pm.read_u64(ind_addr) >> target & 1:
                    continue
                with view.latches[pair].write():
                    self._write_slot(view, pair, target, key, value)
                    self._flip(view, pair, set_mask=1 << target)
                return Outcome.INSERTED

    def delete(self, key: bytes) -> Outcome:
        check_key(key)
        h = self.hash_fn(key)
        view = self.view
        pm = self.pm
        with self.locks.key(h):
            pair, parity, ind_addr = self._locate(view, key, h)
            while True:
                bit = self._find(view, pair, parity, key, pm.read_u64(ind_addr))
                if bit is None:
                    return Outcome.NOT_FOUND
                with self.locks.slots(view.epoch, (pair * 64 + bit,)):
                    if not pm.read_u64(ind_addr) >> bit & 1:
                        continue
                    with view.latches[pair].write():
                        self._flip(view, pair, clear_mask=1 << bit)
                    return Outcome.DELETED

    def update(self, key: bytes, value: bytes) -> Outcome:
        check_key(key)
        check_value(value)
        h = self.hash_fn(key)
        view = self.view
        pm = self.pm
        with self.locks.key(h):
            pair, parity, ind_addr = self._locate(view, key, h)
            while True:
                ind = pm.read_u64(ind_addr)
                old = self._find(view, pair, parity, key, ind)
                if old is None:
                    return Outcome.NOT_FOUND
                new = self._first_free(view, pair, parity, ind)
                if new is None:
                    return Outcome.NEEDS_RESIZE
                with self.locks.slots(view.epoch, (pair * 64 + old, pair * 64 + new)):
                    ind = pm.read_u64(ind_addr)
                    if not ind >> old & 1 or ind >> new & 1:
                        continue
                    with view.latches[pair].write():
                        self._write_slot(view, pair, new, key, value)
                        self._flip(view, pair, set_mask=1 << new, clear_mask=1 << old)
                    return Outcome.UPDATED

    # -- reads -------------------------------------------------------------

    def search_local(self, key: bytes) -> Optional[bytes]:
        check_key(key)
        return self._search(self.view, key, self.hash_fn(key))

    def _search(self, view: TableView, key: bytes, h: int) -> Optional[bytes]:
        pair, parity, ind_addr = self._locate(view, key, h)
        bit = self._find(view, pair, parity, key, self.pm.read_u64(ind_addr))
        if bit is None:
            return None
        addr = view.layout.slot_addr(pair, bit, view.groups.get(pair))
        return decode_slot(self.pm.read(addr, SLOT_SIZE))[1]

    def has_room(self, key: bytes) -> bool:
        """Whether the key's segment (or its pair's added group) has a free slot."""
        view = self.view
        pair, parity, ind_addr = self._locate(view, key, self.hash_fn(key))
        return self._first_free(view, pair, parity, self.pm.read_u64(ind_addr)) is not None

    def _iter_valid(self, view: TableView) -> Iterator[tuple[int, int, bytes, bytes]]:
        lay = view.layout
        pm = self.pm
        for pair in range(lay.n_pairs):
            ind = pm.read_u64(lay.indicator_addr(pair))
            if not ind:
                continue
            group = view.groups.get(pair)
            if group is None and ind & lay.added_mask:
                raise IntegrityError(f"pair {pair} has added-slot bits but no added group")
            for bit in range(lay.primary_slots + (ADDED_GROUP_SLOTS if group is not None else 0)):
                if ind >> bit & 1:
                    key, value = decode_slot(pm.read(lay.slot_addr(pair, bit, group), SLOT_SIZE))
                    yield pair, bit, key, value

    def items(self) -> Iterator[tuple[bytes, bytes]]:
        for _, _, key, value in self._iter_valid(self.view):
            yield key, value

    def mapping(self) -> dict[bytes, bytes]:
        """All visible items; raises if any key is stored twice."""
        out: dict[bytes, bytes] = {}
        for key, value in self.items():
            if key in out:
                raise IntegrityError(f"key {key!r} occupies two valid slots")
            out[key] = value
        return out

    def __len__(self) -> int:
        lay = self.view.layout
        return sum(self.pm.read_u64(lay.indicator_addr(p)).bit_count() for p in range(lay.n_pairs))

    def total_slots(self, view: Optional[TableView] = None) -> int:
        view = view or self.view
        return view.layout.n_pairs * view.layout.primary_slots + ADDED_GROUP_SLOTS * len(view.groups)

    def load_factor(self) -> float:
        return len(self) / self.total_slots()

    # -- space optimisation ------------------------------------------------

    def add_sbucket_group(self, pair: int) -> int:
        view = self.view
        if not 0 <= pair < view.layout.n_pairs:
            raise LayoutError(f"pair {pair} out of range")
        if pair in view.groups:
            raise GroupExistsError(f"pair {pair} already has an added group this epoch")
        if not self._quota_left(view):
            raise QuotaExhausted(f"{len(view.groups)} of {self.quota(view)} added groups in use")
        with self.pm.tagged("add_group"):
            return self._add_group(view, pair)

    def _add_group(self, view: TableView, pair: int) -> int:
        addr = self.alloc.allocate(ADDED_GROUP_SIZE)
        self.pm.atomic_store_8(view.directory_addr(pair), addr)
        self.pm.persist(view.directory_addr(pair), 8)
        view.groups[pair] = addr
        self._emit("group", view=view, pair=pair, addr=addr)
        return addr

    def grow(self, key: bytes) -> str:
        """Make room for ``key``: add a group to its pair if allowed, else resize.

        Returns ``"none"``, ``"group"`` or ``"resize"``.
        """
        if self.has_room(key):
            return "none"
        pair = self.pair_of(key)
        if pair not in self.view.groups and self._quota_left(self.view):
            self.add_sbucket_group(pair)
            return "group"
        self.resize()
        return "resize"

    # -- resizing and recovery --------------------------------------------

    def _fits(self, n_buckets: int, sbuckets: int, hashes: list[int]) -> bool:
        overflow: dict[int, int] = defaultdict(int)
        for bucket, count in Counter(h % n_buckets for h in hashes).items():
            if count > SLOTS_PER_BUCKET:
                overflow[bucket >> 1] += count - SLOTS_PER_BUCKET
        shared = sbuckets * SLOTS_PER_BUCKET
        groups = 0
        for over in overflow.values():
            if over > shared + ADDED_GROUP_SLOTS:
                return False
            groups += over > shared
        return groups <= _quota(n_buckets // 2, self.added_ratio)

    def _plan(self, old: TableView, sbuckets: int) -> int:
        hashes = [self.hash_fn(key) for _, _, key, _ in self._iter_valid(old)]
        n = old.layout.n_buckets * 2
        while not self._fits(n, sbuckets, hashes):
            n *= 2
        return n

    def resize(self, sbuckets_per_pair: Optional[int] = None) -> TableLayout:
        """Double the table (more if the rehash would not fit) and rehash every item.

        The caller must guarantee no concurrent writers.
        """
        old = self.view
        sb = sbuckets_per_pair or old.layout.sbuckets_per_pair
        record = ResizeRecord(old.epoch, old.layout.n_buckets, len(self), self.total_slots(old), len(old.groups))
        n = self._plan(old, sb)
        with self.pm.tagged("resize"):
            new = self._allocate_table(n, sb, old.epoch + 1)
            self.resize_log.append(record)
            inactive = 1 - self._active
            self._write_descriptor(inactive, new)
            self._write_control(self._active, resizing=True)
            self.resizing = new
            self._emit("resize_begin", old=old, new=new)
            self._rehash(old, new, check_first=False)
            self._finish_resize(old, new)
        return new.layout

    def _retire(self, view: TableView, pair: int, bit: int) -> None:
        with self.locks.slots(view.epoch, (pair * 64 + bit,)):
            with view.latches[pair].write():
                self._flip(view, pair, clear_mask=1 << bit)

    def _rehash(self, old: TableView, new: TableView, check_first: bool) -> None:
        check = check_first
        for pair, bit, key, value in self._iter_valid(old):
            h = self.hash_fn(key)
            if check:
                check = False
                if self._search(new, key, h) is not None:
                    self._retire(old, pair, bit)
                    continue
            out = self._insert(new, key, value, h)
            if out is Outcome.NEEDS_RESIZE:
                target = (h % new.layout.n_buckets) >> 1
                if target in new.groups or not self._quota_left(new):
                    raise IntegrityError("rehash target pair overflowed")
                self._add_group(new, target)
                out = self._insert(new, key, value, h)
            if out is not Outcome.INSERTED:
                raise IntegrityError(f"rehash of {key!r} failed with {out.name}")
            self._retire(old, pair, bit)

    def _finish_resize(self, old: TableView, new: TableView) -> None:
        self._write_control(1 - self._active, resizing=False)
        self._active ^= 1
        self.alloc.free(old.table_addr)
        for addr in old.groups.values():
            self.alloc.free(addr)
        self.view = new
        self.resizing = None
        self.locks.forget_epoch(old.epoch)
        self._emit("epoch", view=new, old=old)

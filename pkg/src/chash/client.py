"""Client side: one-sided segment reads and write-with-immediate requests."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .layout import (
    ADDED_GROUP_SIZE,
    ADDED_GROUP_SLOTS,
    INDICATOR_SIZE,
    KEY_SIZE,
    SLOT_SIZE,
    SLOTS_PER_BUCKET,
    check_key,
    check_value,
    decode_slot,
    fnv1a_64,
)
from .table import Outcome
from .transport import Endpoint, ImmediateRequest, Opcode, ProtectionError, TransportError


@dataclass(frozen=True)
class GroupRef:
    addr: int
    rkey: int


@dataclass(frozen=True)
class ConnectionMeta:
    epoch: int
    base_addr: int
    n_buckets: int
    size_bu: int
    size_se: int
    pair_stride: int
    sbuckets_per_pair: int
    rkey: int
    directory: dict[int, GroupRef] = field(default_factory=dict)

    @property
    def added_first_bit(self) -> int:
        return (2 + self.sbuckets_per_pair) * SLOTS_PER_BUCKET

    @property
    def added_mask(self) -> int:
        return ((1 << ADDED_GROUP_SLOTS) - 1) << self.added_first_bit


@dataclass(frozen=True)
class GroupNotice:
    """Pushed by the server when a pair gains an added SBucket group."""
    epoch: int
    pair: int
    group: GroupRef


@dataclass(frozen=True)
class EpochNotice:
    """Pushed by the server once a resize has finished."""
    meta: ConnectionMeta


def segment_offset(meta: ConnectionMeta, bucket: int) -> int:
    if bucket & 1:
        return meta.base_addr + (bucket - 1) // 2 * meta.pair_stride + meta.size_bu
    return meta.base_addr + bucket // 2 * meta.pair_stride


def _segment_geometry(meta: ConnectionMeta, parity: int) -> tuple[int, list[tuple[int, int]]]:
    """Indicator offset and ``(bit, offset)`` for each slot inside a fetched segment."""
    s4 = meta.sbuckets_per_pair * SLOTS_PER_BUCKET
    if parity:
        shared = [(SLOTS_PER_BUCKET + i, INDICATOR_SIZE + i * SLOT_SIZE) for i in range(s4)]
        home_start = INDICATOR_SIZE + meta.sbuckets_per_pair * meta.size_bu
        home = [(SLOTS_PER_BUCKET + s4 + i, home_start + i * SLOT_SIZE) for i in range(SLOTS_PER_BUCKET)]
        return 0, home + shared
    home = [(i, i * SLOT_SIZE) for i in range(SLOTS_PER_BUCKET)]
    shared = [(SLOTS_PER_BUCKET + i, meta.size_bu + INDICATOR_SIZE + i * SLOT_SIZE) for i in range(s4)]
    return meta.size_bu, home + shared


@dataclass
class SegmentView:
    indicator: int
    parity: int
    raw: bytes
    slots: list[tuple[int, int]]

    @classmethod
    def decode(cls, raw: bytes, parity: int, meta: ConnectionMeta) -> "SegmentView":
        ind_off, slots = _segment_geometry(meta, parity)
        ind = int.from_bytes(raw[ind_off:ind_off + INDICATOR_SIZE], "little")
        return cls(ind, parity, raw, slots)

    def entries(self) -> dict[bytes, bytes]:
        out = {}
        for bit, off in self.slots:
            if self.indicator >> bit & 1:
                key, value = decode_slot(self.raw[off:off + SLOT_SIZE])
                out[key] = value
        return out

    def lookup(self, key: bytes) -> Optional[bytes]:
        raw, ind = self.raw, self.indicator
        for bit, off in self.slots:
            if ind >> bit & 1 and raw[off:off + KEY_SIZE] == key:
                return decode_slot(raw[off:off + SLOT_SIZE])[1]
        return None


def lookup_added(raw: bytes, indicator: int, first_bit: int, key: bytes) -> Optional[bytes]:
    for i in range(ADDED_GROUP_SLOTS):
        off = i * SLOT_SIZE
        if indicator >> (first_bit + i) & 1 and raw[off:off + KEY_SIZE] == key:
            return decode_slot(raw[off:off + SLOT_SIZE])[1]
    return None


class KvClient:
    """Single-threaded client handle bound to one endpoint."""

    max_attempts = 8

    def __init__(self, endpoint: Endpoint, hash_fn: Callable[[bytes], int] = fnv1a_64):
        self.ep = endpoint
        self.hash_fn = hash_fn
        self.meta: ConnectionMeta = endpoint.fetch_meta()
        self.last_reads = 0
        self.refreshes = 0

    def refresh(self) -> None:
        self.ep.poll_notifications()
        self.meta = self.ep.fetch_meta()
        self.refreshes += 1

    def _apply_notifications(self) -> None:
        for note in self.ep.poll_notifications():
            if isinstance(note, EpochNotice):
                if note.meta.epoch >= self.meta.epoch:
                    self.meta = note.meta
            elif isinstance(note, GroupNotice) and note.epoch == self.meta.epoch:
                self.meta = replace(self.meta, directory={**self.meta.directory, note.pair: note.group})

    def segment_offset(self, key: bytes) -> int:
        return segment_offset(self.meta, self.hash_fn(key) % self.meta.n_buckets)

    def fetch_segment(self, key: bytes) -> SegmentView:
        m = self.meta
        bucket = self.hash_fn(key) % m.n_buckets
        raw = self.ep.one_sided_read(m.rkey, segment_offset(m, bucket), m.size_se)
        return SegmentView.decode(raw, bucket & 1, m)

    def get(self, key: bytes) -> Optional[bytes]:
        check_key(key)
        self._apply_notifications()
        h = self.hash_fn(key)
        reads = 0
        for _ in range(self.max_attempts):
            m = self.meta
            bucket = h % m.n_buckets
            try:
                reads += 1
                raw = self.ep.one_sided_read(m.rkey, segment_offset(m, bucket), m.size_se)
            except ProtectionError:
                self.refresh()
                continue
            seg = SegmentView.decode(raw, bucket & 1, m)
            value = seg.lookup(key)
            if value is not None or not seg.indicator & m.added_mask:
                self.last_reads = reads
                return value
            group = m.directory.get(bucket >> 1)
            if group is None:
                self._apply_notifications()
                group = self.meta.directory.get(bucket >> 1) if self.meta.epoch == m.epoch else None
                if group is None:
                    self.refresh()
                    continue
            try:
                reads += 1
                extra = self.ep.one_sided_read(group.rkey, group.addr, ADDED_GROUP_SIZE)
            except ProtectionError:
                self.refresh()
                continue
            self.last_reads = reads
            return lookup_added(extra, seg.indicator, m.added_first_bit, key)
        raise TransportError("metadata did not converge")

    def _request(self, opcode: Opcode, key: bytes, value: bytes) -> Outcome:
        self._apply_notifications()
        for attempt in range(2):
            req = ImmediateRequest(opcode, key, value, self.ep.client_id, self.ep.next_request_id())
            done = self.ep.write_with_imm(req)
            out = Outcome(done.status)
            stale = done.epoch != self.meta.epoch
            if stale:
                self._apply_notifications()
                if self.meta.epoch != done.epoch:
                    self.refresh()
            if out is not Outcome.NEEDS_RESIZE or attempt:
                return out
        return out

    def put(self, key: bytes, value: bytes, mode: str = "insert") -> Outcome:
        check_key(key)
        check_value(value)
        if mode == "insert":
            return self._request(Opcode.INSERT, key, value)
        if mode == "update":
            return self._request(Opcode.UPDATE, key, value)
        raise ValueError(f"unknown put mode {mode!r}")

    def insert(self, key: bytes, value: bytes) -> Outcome:
        return self.put(key, value, "insert")

    def update(self, key: bytes, value: bytes) -> Outcome:
        return self.put(key, value, "update")

    def remove(self, key: bytes) -> Outcome:
        check_key(key)
        return self._request(Opcode.DELETE, key, b"")

"""Synchronisation primitives shared by the table, server and transport."""
from __future__ import annotations

import threading
import time
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, TypeVar

T = TypeVar("T")


class LockOrderError(AssertionError):
    pass


class LockNotHeldError(AssertionError):
    pass


class SeqLatch:
    """Per-pair sequence latch.

    Writers bump the version on entry and exit; a reader retries its copy
    until it saw no active writer and an unchanged version.
    """

    __slots__ = ("version", "writers", "_lock")

    def __init__(self):
        self.version = 0
        self.writers = 0
        self._lock = threading.Lock()

    @contextmanager
    def write(self) -> Iterator[None]:
        with self._lock:
            self.writers += 1
            self.version += 1
        try:
            yield
        finally:
            with self._lock:
                self.writers -= 1
                self.version += 1

    def read(self, copy: Callable[[], T]) -> T:
        while True:
            v = self.version
            if self.writers:
                time.sleep(0)
                continue
            out = copy()
            if self.version == v:
                return out


class NoLocks:
    """Lock policy for single-threaded use (tests, recovery, experiments)."""

    @contextmanager
    def key(self, key_hash: int) -> Iterator[None]:
        yield

    @contextmanager
    def slots(self, epoch: int, indices: Iterable[int]) -> Iterator[None]:
        yield

    def assert_held(self, epoch: int, index: int) -> None:
        pass

    def forget_epoch(self, epoch: int) -> None:
        pass


class SlotLocks:
    """One lock per slot plus striped per-key locks.

    Slot locks are taken in ascending global slot index; with ``check=True``
    any out-of-order acquisition raises :class:`LockOrderError` and a store
    to an unlocked slot raises :class:`LockNotHeldError`.
    """

    def __init__(self, key_stripes: int = 1024, check: bool = True):
        self._key_locks = [threading.Lock() for _ in range(key_stripes)]
        self._slot_locks: dict[tuple[int, int], threading.Lock] = {}
        self._tls = threading.local()
        self.check = check
        self.acquisitions = 0

    def _held(self) -> list[tuple[int, int]]:
        held = getattr(self._tls, "held", None)
        if held is None:
            held = self._tls.held = []
        return held

    @contextmanager
    def key(self, key_hash: int) -> Iterator[None]:
        with self._key_locks[key_hash % len(self._key_locks)]:
            yield

    def _lock_for(self, ident: tuple[int, int]) -> threading.Lock:
        lock = self._slot_locks.get(ident)
        if lock is None:
            lock = self._slot_locks.setdefault(ident, threading.Lock())
        return lock

    @contextmanager
    def slots(self, epoch: int, indices: Iterable[int]) -> Iterator[None]:
        wanted = [(epoch, i) for i in sorted(set(indices))]
        held = self._held()
        if self.check and held and wanted and wanted[0] <= held[-1]:
            raise LockOrderError(f"acquiring {wanted[0]} while holding {held[-1]}")
        taken = []
        try:
            for ident in wanted:
                self._lock_for(ident).acquire()
                taken.append(ident)
                held.append(ident)
                self.acquisitions += 1
            yield
        finally:
            for ident in reversed(taken):
                held.remove(ident)
                self._slot_locks[ident].release()

    def assert_held(self, epoch: int, index: int) -> None:
        if self.check and (epoch, index) not in self._held():
            raise LockNotHeldError(f"store to slot {index} (epoch {epoch}) without its lock")

    def forget_epoch(self, epoch: int) -> None:
        for ident in [k for k in self._slot_locks if k[0] <= epoch]:
            del self._slot_locks[ident]


class RWGate:
    """Writer-preferring shared/exclusive gate used to quiesce writes for resizing."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._waiting = 0

    @contextmanager
    def shared(self) -> Iterator[None]:
        with self._cond:
            while self._writer or self._waiting:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if not self._readers:
                    self._cond.notify_all()

    @contextmanager
    def exclusive(self) -> Iterator[None]:
        with self._cond:
            self._waiting += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._waiting -= 1
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()

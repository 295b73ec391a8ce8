"""Simulated byte-addressable persistent memory.

CPU stores land in a volatile, cache-coherent view. A line becomes durable
only when it is flushed. A crash image starts from the durable bytes and, for
every line that is still dirty, independently keeps or drops each aligned
8-byte word, which is the failure-atomicity unit of the device.
"""
from __future__ import annotations

import random
import threading
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

WORD_SIZE = 8
LINE_SIZE = 64
_MASK64 = (1 << 64) - 1


class PmError(Exception):
    pass


class PmBoundsError(PmError, IndexError):
    pass


class PmAlignmentError(PmError, ValueError):
    pass


class SimulatedCrash(Exception):
    """Raised by a crash hook to abandon the in-flight operation."""

    def __init__(self, image: "CrashImage"):
        super().__init__(f"simulated crash (seed={image.seed})")
        self.image = image


@dataclass
class CrashImage:
    data: bytes
    seed: int = 0
    # word addresses whose unflushed contents differed from the durable copy
    kept: list[int] = field(default_factory=list)
    dropped: list[int] = field(default_factory=list)

    @property
    def capacity(self) -> int:
        return len(self.data)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.data)

    @classmethod
    def load(cls, path: str | Path) -> "CrashImage":
        return cls(Path(path).read_bytes())


class PmRegion:
    """Zero-initialised simulated PM with per-tag flush accounting.

    Counters are keyed by an operation tag set with :meth:`tagged`; the tag is
    thread-local so concurrent server threads account separately.
    """

    def __init__(self, capacity: int, line_size: int = LINE_SIZE):
        if line_size % WORD_SIZE or line_size <= 0:
            raise ValueError("line size must be a positive multiple of 8")
        if capacity <= 0 or capacity % line_size:
            raise ValueError("capacity must be a positive multiple of the line size")
        self.line_size = line_size
        self._current = bytearray(capacity)
        self._persisted = bytearray(capacity)
        self._dirty: set[int] = set()
        self._lock = threading.Lock()
        self._local = threading.local()
        self.flush_count: Counter[str] = Counter()
        self.fence_count: Counter[str] = Counter()
        self.store_count: Counter[str] = Counter()
        self.atomic_store_count: Counter[str] = Counter()
        self.events = 0
        self._hook: Optional[Callable[[int, str], None]] = None

    @classmethod
    def from_image(cls, image: CrashImage | bytes, line_size: int = LINE_SIZE) -> "PmRegion":
        data = image.data if isinstance(image, CrashImage) else bytes(image)
        pm = cls(len(data), line_size)
        pm._current[:] = data
        pm._persisted[:] = data
        return pm

    @property
    def capacity(self) -> int:
        return len(self._current)

    # -- tagging -----------------------------------------------------------

    @property
    def current_tag(self) -> str:
        return getattr(self._local, "tag", "untagged")

    @contextmanager
    def tagged(self, tag: str) -> Iterator[None]:
        prev = self.current_tag
        self._local.tag = tag
        try:
            yield
        finally:
            self._local.tag = prev

    def reset_counters(self) -> None:
        with self._lock:
            for c in (self.flush_count, self.fence_count, self.store_count, self.atomic_store_count):
                c.clear()

    def counters(self, tag: str) -> dict[str, int]:
        return {
            "flushes": self.flush_count[tag],
            "fences": self.fence_count[tag],
            "stores": self.store_count[tag],
            "atomic_stores": self.atomic_store_count[tag],
        }

    # -- crash hook --------------------------------------------------------

    def set_event_hook(self, hook: Optional[Callable[[int, str], None]]) -> None:
        """Install ``hook(event_index, kind)``, called after every mutation event.

        Events are stores, atomic stores, flushes and fences. A hook may take a
        crash image or raise :class:`SimulatedCrash`.
        """
        self._hook = hook

    def _event(self, kind: str) -> None:
        hook = self._hook
        if hook is not None:
            hook(self.events, kind)

    # -- access ------------------------------------------------------------

    def _check(self, addr: int, length: int) -> None:
        if addr < 0 or length < 0 or addr + length > len(self._current):
            raise PmBoundsError(f"access [{addr}, {addr + length}) outside region of {len(self._current)} bytes")

    def read(self, addr: int, length: int) -> bytes:
        self._check(addr, length)
        return bytes(self._current[addr:addr + length])

    def read_u64(self, addr: int) -> int:
        self._check(addr, WORD_SIZE)
        return int.from_bytes(self._current[addr:addr + WORD_SIZE], "little")

    def read_persisted(self, addr: int, length: int) -> bytes:
        self._check(addr, length)
        return bytes(self._persisted[addr:addr + length])

    def _mark_dirty(self, addr: int, length: int) -> None:
        ls = self.line_size
        first, last = addr // ls, (addr + length - 1) // ls
        if first == last:
            self._dirty.add(first)
        else:
            self._dirty.update(range(first, last + 1))

    def store(self, addr: int, data: bytes) -> None:
        n = len(data)
        self._check(addr, n)
        if n == 0:
            return
        with self._lock:
            self._current[addr:addr + n] = data
            self._mark_dirty(addr, n)
            self.store_count[self.current_tag] += 1
            self.events += 1
        self._event("store")

    def atomic_store_8(self, addr: int, word: int) -> None:
        if addr % WORD_SIZE:
            raise PmAlignmentError(f"atomic store at {addr} is not 8-byte aligned")
        self._check(addr, WORD_SIZE)
        with self._lock:
            self._current[addr:addr + WORD_SIZE] = (word & _MASK64).to_bytes(WORD_SIZE, "little")
            self._dirty.add(addr // self.line_size)
            self.atomic_store_count[self.current_tag] += 1
            self.events += 1
        self._event("atomic_store")

    def compare_and_swap_8(self, addr: int, expected: int, new: int) -> bool:
        """Atomic 8-byte CAS on the volatile view; a successful swap is an atomic store."""
        if addr % WORD_SIZE:
            raise PmAlignmentError(f"CAS at {addr} is not 8-byte aligned")
        self._check(addr, WORD_SIZE)
        with self._lock:
            cur = int.from_bytes(self._current[addr:addr + WORD_SIZE], "little")
            if cur != expected:
                return False
            self._current[addr:addr + WORD_SIZE] = (new & _MASK64).to_bytes(WORD_SIZE, "little")
            self._dirty.add(addr // self.line_size)
            self.atomic_store_count[self.current_tag] += 1
            self.events += 1
        self._event("atomic_store")
        return True

    def flush_line(self, addr: int, length: int = 1) -> int:
        """Write back every line overlapping ``[addr, addr + length)``.

        Flushing is unconditional: clean lines count too. Returns the number of
        lines flushed.
        """
        length = max(length, 1)
        self._check(addr, length)
        ls = self.line_size
        first, last = addr // ls, (addr + length - 1) // ls
        lo, hi = first * ls, (last + 1) * ls
        nlines = last - first + 1
        with self._lock:
            self._persisted[lo:hi] = self._current[lo:hi]
            if nlines <= 8 or nlines < len(self._dirty):
                for line in range(first, last + 1):
                    self._dirty.discard(line)
            else:
                self._dirty = {d for d in self._dirty if d < first or d > last}
            self.flush_count[self.current_tag] += nlines
            self.events += 1
        self._event("flush")
        return nlines

    def fence(self) -> None:
        with self._lock:
            self.fence_count[self.current_tag] += 1
            self.events += 1
        self._event("fence")

    def persist(self, addr: int, length: int) -> None:
        """Flush the lines covering a range and order them with a fence."""
        self.flush_line(addr, length)
        self.fence()

    # -- crashes -----------------------------------------------------------

    @property
    def dirty_lines(self) -> frozenset[int]:
        return frozenset(self._dirty)

    def crash(self, seed: int = 0, keep_probability: float = 0.5) -> CrashImage:
        """Return what would survive a power failure right now.

        Only words that are dirty and differ from their durable copy are
        subject to a keep/drop decision; the choice is reproducible from
        ``seed`` for a given region state.
        """
        rng = random.Random(seed)
        with self._lock:
            image = bytearray(self._persisted)
            kept, dropped = [], []
            ls = self.line_size
            for line in sorted(self._dirty):
                for w in range(line * ls, line * ls + ls, WORD_SIZE):
                    cur = self._current[w:w + WORD_SIZE]
                    if cur == self._persisted[w:w + WORD_SIZE]:
                        continue
                    if rng.random() < keep_probability:
                        image[w:w + WORD_SIZE] = cur
                        kept.append(w)
                    else:
                        dropped.append(w)
        return CrashImage(bytes(image), seed, kept, dropped)

"""In-process fabric with RDMA-like semantics.

One-sided reads copy registered PM bytes without running any server code;
they only consult the registration table and the per-pair snapshot latch.
Writes travel as fixed-width frames through a request queue and complete
once the server has durably committed them.

Frames (little-endian):

    request     <B B H I Q 16s 15s x>  opcode, value_len, reserved, client_id,
                                       request_id, key, value (48 bytes)
    completion  <B 3x I Q Q>           status, client_id, request_id, epoch
                                       (24 bytes)
"""
from __future__ import annotations

import itertools
import queue
import struct
import threading
import time
from collections import Counter, deque
from contextlib import contextmanager
from dataclasses import dataclass
from enum import IntEnum
from typing import Any, Callable, Iterator, Optional

from .layout import KEY_SIZE, MAX_VALUE_LEN
from .pm import PmRegion
from .sync import SeqLatch

MAX_READ = 1 << 20
REQUEST_FRAME = struct.Struct("<BBHIQ16s15sx")
COMPLETION_FRAME = struct.Struct("<B3xIQQ")


class TransportError(Exception):
    pass


class RequestTimeout(TransportError):
    pass


class ProtectionError(TransportError):
    """A one-sided access outside any registered region (remote access error)."""


class Opcode(IntEnum):
    INSERT = 1
    UPDATE = 2
    DELETE = 3


@dataclass(frozen=True)
class ImmediateRequest:
    opcode: Opcode
    key: bytes
    value: bytes
    client_id: int
    request_id: int

    def encode(self) -> bytes:
        if len(self.key) != KEY_SIZE or len(self.value) > MAX_VALUE_LEN:
            raise ValueError("request does not fit the frame")
        return REQUEST_FRAME.pack(self.opcode, len(self.value), 0, self.client_id,
                                  self.request_id, self.key, self.value)

    @classmethod
    def decode(cls, frame: bytes) -> "ImmediateRequest":
        op, vlen, _, cid, rid, key, value = REQUEST_FRAME.unpack(frame)
        return cls(Opcode(op), key, value[:vlen], cid, rid)


@dataclass(frozen=True)
class Completion:
    status: int
    client_id: int
    request_id: int
    epoch: int

    def encode(self) -> bytes:
        return COMPLETION_FRAME.pack(self.status, self.client_id, self.request_id, self.epoch)

    @classmethod
    def decode(cls, frame: bytes) -> "Completion":
        return cls(*COMPLETION_FRAME.unpack(frame))


@dataclass
class MemoryRegion:
    addr: int
    length: int
    rkey: int
    latch_of: Optional[Callable[[int], SeqLatch]] = None


class _Waiter:
    __slots__ = ("event", "frame", "failed")

    def __init__(self):
        self.event = threading.Event()
        self.frame: Optional[bytes] = None
        self.failed = False


class Fabric:
    """Registration table, request queue and notification fan-out for one server."""

    def __init__(self, pm: PmRegion, *, max_read: int = MAX_READ,
                 round_trip_delay: float = 0.0, timeout: float = 30.0):
        self.pm = pm
        self.max_read = max_read
        self.round_trip_delay = round_trip_delay
        self.timeout = timeout
        self.requests: queue.Queue = queue.Queue()
        self.meta_provider: Optional[Callable[[], Any]] = None
        self.server_up = False
        self._regions: dict[int, MemoryRegion] = {}
        self._registry = threading.Lock()
        self._rkeys = itertools.count(0x1000)
        self._pending: dict[tuple[int, int], _Waiter] = {}
        self._pending_lock = threading.Lock()
        self._endpoints: dict[int, Endpoint] = {}
        self._client_ids = itertools.count(1)

    # -- memory registration ----------------------------------------------

    def register(self, addr: int, length: int, latch_of: Optional[Callable[[int], SeqLatch]] = None) -> int:
        if addr < 0 or addr + length > self.pm.capacity:
            raise ValueError("region outside PM")
        with self._registry:
            rkey = next(self._rkeys)
            self._regions[rkey] = MemoryRegion(addr, length, rkey, latch_of)
        return rkey

    def deregister(self, rkey: int) -> None:
        with self._registry:
            self._regions.pop(rkey, None)

    def _read(self, rkey: int, addr: int, length: int) -> bytes:
        if not 0 < length <= self.max_read:
            raise ProtectionError(f"read of {length} bytes not allowed")
        with self._registry:
            mr = self._regions.get(rkey)
            if mr is None or addr < mr.addr or addr + length > mr.addr + mr.length:
                raise ProtectionError(f"rkey {rkey:#x} does not cover [{addr}, {addr + length})")
            pm = self.pm
            if mr.latch_of is None:
                return pm.read(addr, length)
            return mr.latch_of(addr).read(lambda: pm.read(addr, length))

    # -- connections -------------------------------------------------------

    def connect(self) -> "Endpoint":
        ep = Endpoint(self, next(self._client_ids))
        self._endpoints[ep.client_id] = ep
        return ep

    def disconnect(self, ep: "Endpoint") -> None:
        self._endpoints.pop(ep.client_id, None)

    def broadcast(self, note: Any) -> None:
        for ep in list(self._endpoints.values()):
            ep._notes.append(note)

    # -- two-sided path ----------------------------------------------------

    def _submit(self, req: ImmediateRequest) -> _Waiter:
        w = _Waiter()
        with self._pending_lock:
            self._pending[(req.client_id, req.request_id)] = w
        # the client id rides in the immediate field next to the payload frame
        self.requests.put((req.client_id, req.encode()))
        return w

    def complete(self, frame: bytes) -> None:
        c = Completion.decode(frame)
        with self._pending_lock:
            w = self._pending.pop((c.client_id, c.request_id), None)
        if w is not None:
            w.frame = frame
            w.event.set()

    def fail_pending(self) -> None:
        """Server died: every outstanding request times out."""
        self.server_up = False
        with self._pending_lock:
            waiters, self._pending = list(self._pending.values()), {}
        for w in waiters:
            w.failed = True
            w.event.set()


class Endpoint:
    """Client side of a connection. One thread per endpoint."""

    def __init__(self, fabric: Fabric, client_id: int):
        self.fabric = fabric
        self.client_id = client_id
        self.round_trips: Counter[str] = Counter()
        self.tag = "untagged"
        self._notes: deque = deque()
        self._request_ids = itertools.count(1)
        self.closed = False

    @contextmanager
    def tagged(self, tag: str) -> Iterator[None]:
        prev, self.tag = self.tag, tag
        try:
            yield
        finally:
            self.tag = prev

    @property
    def total_round_trips(self) -> int:
        return sum(self.round_trips.values())

    def _round_trip(self) -> None:
        if self.closed:
            raise TransportError("endpoint is closed")
        self.round_trips[self.tag] += 1
        if self.fabric.round_trip_delay:
            time.sleep(self.fabric.round_trip_delay)

    def one_sided_read(self, rkey: int, addr: int, length: int) -> bytes:
        self._round_trip()
        return self.fabric._read(rkey, addr, length)

    def next_request_id(self) -> int:
        return next(self._request_ids)

    def write_with_imm(self, request: ImmediateRequest, timeout: Optional[float] = None) -> Completion:
        if not self.fabric.server_up:
            raise TransportError("server is not accepting requests")
        if request.client_id != self.client_id:
            raise ValueError("request carries another client's id")
        self._round_trip()
        w = self.fabric._submit(request)
        if not w.event.wait(self.fabric.timeout if timeout is None else timeout) or w.failed:
            raise RequestTimeout(f"request {request.request_id} was not acknowledged")
        return Completion.decode(w.frame)

    def fetch_meta(self) -> Any:
        """Connection metadata from the server (a two-sided control exchange)."""
        provider = self.fabric.meta_provider
        if provider is None or not self.fabric.server_up:
            raise TransportError("server is not accepting connections")
        with self.tagged("meta"):
            self._round_trip()
        return provider()

    def poll_notifications(self) -> list[Any]:
        out = []
        while self._notes:
            out.append(self._notes.popleft())
        return out

    def close(self) -> None:
        self.closed = True
        self.fabric.disconnect(self)

"""Server request loop.

Workers pull write-with-immediate frames off the fabric, run the table
operation under per-slot locks and acknowledge only after the commit point
is durable. Growth (added groups and resizes) runs under an exclusive gate.
"""
from __future__ import annotations

import logging
import threading
from collections import Counter
from typing import Optional

from .client import ConnectionMeta, EpochNotice, GroupNotice, GroupRef
from .layout import ADDED_GROUP_SIZE
from .pm import SimulatedCrash
from .sync import RWGate, SlotLocks
from .table import AllocationError, ContinuityHashTable, Outcome, TableView
from .transport import Completion, Fabric, ImmediateRequest, Opcode

log = logging.getLogger(__name__)

_STOP = object()
_TAGS = {Opcode.INSERT: "insert", Opcode.UPDATE: "update", Opcode.DELETE: "delete"}


class KvServer:
    def __init__(self, table: ContinuityHashTable, fabric: Fabric, *, lock_check: bool = True):
        self.table = table
        self.fabric = fabric
        self.locks = SlotLocks(check=lock_check)
        table.locks = self.locks
        self.gate = RWGate()
        self.served: Counter[tuple[str, str]] = Counter()
        self.crashed = False
        self.crash_image = None
        self.errors: list[BaseException] = []
        self._served_lock = threading.Lock()
        self._workers: list[threading.Thread] = []
        self._rkeys: list[int] = []
        self._meta: Optional[ConnectionMeta] = None
        self._publish(table.view)
        table.add_listener(self._on_table_event)
        fabric.meta_provider = self.connection_meta
        fabric.server_up = True

    # -- registration and metadata ----------------------------------------

    def _publish(self, view: TableView) -> None:
        fab = self.fabric
        lay = view.layout
        latches, base, stride = view.latches, lay.base_addr, lay.pair_stride
        rkey = fab.register(base, lay.table_bytes, lambda addr: latches[(addr - base) // stride])
        self._rkeys = [rkey]
        directory = {}
        for pair, addr in view.groups.items():
            directory[pair] = self._register_group(view, pair, addr)
        self._meta = ConnectionMeta(view.epoch, base, lay.n_buckets, lay.size_bu, lay.size_se,
                                    stride, lay.sbuckets_per_pair, rkey, directory)

    def _register_group(self, view: TableView, pair: int, addr: int) -> GroupRef:
        latch = view.latches[pair]
        rkey = self.fabric.register(addr, ADDED_GROUP_SIZE, lambda _addr: latch)
        self._rkeys.append(rkey)
        return GroupRef(addr, rkey)

    def _on_table_event(self, event: str, **info) -> None:
        if event == "resize_begin":
            # the old table is mutated by the rehash; fence off one-sided readers
            for rkey in self._rkeys:
                self.fabric.deregister(rkey)
            self._rkeys = []
        elif event == "epoch":
            self._publish(info["view"])
            self.fabric.broadcast(EpochNotice(self._meta))
        elif event == "group" and info["view"] is self.table.view and self.table.resizing is None:
            ref = self._register_group(info["view"], info["pair"], info["addr"])
            m = self._meta
            self._meta = ConnectionMeta(m.epoch, m.base_addr, m.n_buckets, m.size_bu, m.size_se,
                                        m.pair_stride, m.sbuckets_per_pair, m.rkey,
                                        {**m.directory, info["pair"]: ref})
            self.fabric.broadcast(GroupNotice(m.epoch, info["pair"], ref))

    def connection_meta(self) -> ConnectionMeta:
        with self.gate.shared():
            return self._meta

    # -- request handling --------------------------------------------------

    def serve(self, req: ImmediateRequest) -> Completion:
        table = self.table
        op = {Opcode.INSERT: table.insert, Opcode.UPDATE: table.update, Opcode.DELETE: table.delete}[req.opcode]
        tag = _TAGS[req.opcode]
        for attempt in range(2):
            with self.gate.shared():
                with table.pm.tagged(tag):
                    out = op(req.key, req.value) if req.opcode is not Opcode.DELETE else op(req.key)
                epoch = table.epoch
            if out is not Outcome.NEEDS_RESIZE or attempt:
                break
            try:
                self._grow(req.key)
            except AllocationError:
                log.error("persistent memory exhausted; rejecting request")
                break
        with self._served_lock:
            self.served[(tag, out.name)] += 1
        return Completion(out, req.client_id, req.request_id, epoch)

    def _grow(self, key: bytes) -> None:
        with self.gate.exclusive():
            what = self.table.grow(key)
            if what != "none":
                log.debug("grew table: %s (epoch %d, %d buckets)", what, self.table.epoch,
                          self.table.layout.n_buckets)

    def mutated(self, tag: str) -> int:
        """Number of requests of a kind that changed the table."""
        done = {"insert": "INSERTED", "update": "UPDATED", "delete": "DELETED"}[tag]
        return self.served[(tag, done)]

    # -- worker lifecycle --------------------------------------------------

    def _worker(self) -> None:
        requests = self.fabric.requests
        while True:
            item = requests.get()
            if item is _STOP or self.crashed:
                break
            imm, frame = item
            req = ImmediateRequest.decode(frame)
            if req.client_id != imm:
                log.warning("dropping frame whose client id does not match its immediate")
                continue
            try:
                done = self.serve(req)
            except SimulatedCrash as crash:
                self._on_crash(crash)
                break
            except Exception as exc:
                # a broken invariant (e.g. lock order) must not hang the clients
                log.exception("worker failed")
                self.errors.append(exc)
                self.crashed = True
                self.fabric.fail_pending()
                break
            self.fabric.complete(done.encode())

    def _on_crash(self, crash: SimulatedCrash) -> None:
        self.crashed = True
        self.crash_image = crash.image
        self.fabric.fail_pending()

    @property
    def running(self) -> bool:
        return any(t.is_alive() for t in self._workers)

    def run(self, threads: int = 1) -> None:
        if self.running:
            return
        self._workers = [threading.Thread(target=self._worker, name=f"chash-server-{i}", daemon=True)
                         for i in range(threads)]
        for t in self._workers:
            t.start()

    def stop(self) -> None:
        """Drain queued requests, then stop every worker."""
        if not self._workers:
            return
        for _ in self._workers:
            self.fabric.requests.put(_STOP)
        for t in self._workers:
            t.join()
        self._workers = []

"""Benchmark harness: wires PM, table, fabric, server and clients together."""
from __future__ import annotations

import json
import random
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .client import KvClient
from .layout import CACHE_LINE, align_up, table_allocation_bytes
from .pm import PmRegion
from .server import KvServer
from .table import ContinuityHashTable, Outcome, ResizeRecord
from .transport import Fabric
from .workload import Op, WorkloadSpec


def capacity_for(max_buckets: int, sbuckets: int = 3) -> int:
    """PM bytes to hold a table of ``max_buckets`` while the previous one drains."""
    return align_up(4 * table_allocation_bytes(max_buckets, sbuckets) + (1 << 20), CACHE_LINE)


def buckets_for_keys(n_keys: int) -> int:
    # about half of the primary slots filled after loading
    n = max(20, n_keys // 5)
    return n + (n & 1)


@dataclass
class System:
    pm: PmRegion
    table: ContinuityHashTable
    fabric: Fabric
    server: KvServer

    def client(self) -> KvClient:
        return KvClient(self.fabric.connect(), self.table.hash_fn)

    def close(self) -> None:
        self.server.stop()


def build_system(n_buckets: int = 20, *, added_ratio=Fraction(1, 10), sbuckets: int = 3,
                 capacity: Optional[int] = None, round_trip_delay: float = 0.0) -> System:
    pm = PmRegion(capacity or capacity_for(n_buckets * 8, sbuckets))
    table = ContinuityHashTable.create(pm, n_buckets, sbuckets, added_ratio=added_ratio)
    fabric = Fabric(pm, round_trip_delay=round_trip_delay)
    server = KvServer(table, fabric)
    return System(pm, table, fabric, server)


def load(table: ContinuityHashTable, items) -> None:
    """Single-threaded bulk load that grows the table as needed."""
    for key, value in items:
        out = table.insert(key, value)
        while out is Outcome.NEEDS_RESIZE:
            table.grow(key)
            out = table.insert(key, value)


def fill_to_trigger(table: ContinuityHashTable, rng: random.Random, value: bytes = b"v") -> list[bytes]:
    """Insert random keys, adding groups while quota lasts, until a resize would be needed."""
    keys = []
    while True:
        key = rng.randbytes(16)
        out = table.insert(key, value)
        if out is Outcome.NEEDS_RESIZE:
            pair = table.pair_of(key)
            if pair in table.view.groups or len(table.view.groups) >= table.quota():
                return keys
            table.add_sbucket_group(pair)
            out = table.insert(key, value)
        if out is Outcome.INSERTED:
            keys.append(key)


def load_factor_experiment(initial_buckets: int = 20, resizes: int = 5, added_ratio=Fraction(0),
                           seed: int = 0, sbuckets: int = 3) -> list[ResizeRecord]:
    """Insert random keys until ``resizes`` resizes have triggered; one record per trigger."""
    pm = PmRegion(capacity_for(initial_buckets << (resizes + 1), sbuckets))
    table = ContinuityHashTable.create(pm, initial_buckets, sbuckets, added_ratio=added_ratio)
    rng = random.Random(seed)
    while len(table.resize_log) < resizes:
        key = rng.randbytes(16)
        out = table.insert(key, b"v")
        while out is Outcome.NEEDS_RESIZE:
            table.grow(key)
            out = table.insert(key, b"v")
    return table.resize_log[:resizes]


@dataclass
class WriteCensus:
    """Per-operation PM write counts gathered while tables fill from empty to the trigger."""
    fences: dict[str, Counter] = field(default_factory=dict)      # op -> {fences per op: ops}
    lines: dict[str, Counter] = field(default_factory=dict)       # op -> {lines flushed per op: ops}
    load_factors: tuple[float, float] = (1.0, 0.0)
    tables: int = 0

    def count(self, op: str) -> int:
        return sum(self.fences.get(op, Counter()).values())


def pm_write_census(min_ops: int = 10**5, n_buckets: int = 2000, seed: int = 0,
                    added_ratio=Fraction(1, 10)) -> WriteCensus:
    """Run inserts, updates and deletes until each kind has ``min_ops`` successes.

    Each table is filled until its first resize trigger, then replaced, so the
    counts cover every load factor between empty and the trigger.
    """
    census = WriteCensus({op: Counter() for op in ("insert", "update", "delete")},
                         {op: Counter() for op in ("insert", "update", "delete")})
    rng = random.Random(seed)
    lo, hi = 1.0, 0.0
    while min(census.count(op) for op in census.fences) < min_ops:
        pm = PmRegion(capacity_for(n_buckets))
        table = ContinuityHashTable.create(pm, n_buckets, added_ratio=added_ratio)
        census.tables += 1
        live: list[bytes] = []
        where: dict[bytes, int] = {}
        while True:
            r = rng.random()
            if r < 0.45 or not live:
                op, key = "insert", rng.randbytes(16)
            else:
                op, key = ("update" if r < 0.7 else "delete"), live[rng.randrange(len(live))]
            f0, l0 = pm.fence_count[op], pm.flush_count[op]
            with pm.tagged(op):
                if op == "insert":
                    out = table.insert(key, b"v")
                elif op == "update":
                    out = table.update(key, b"w")
                else:
                    out = table.delete(key)
            if out is Outcome.NEEDS_RESIZE:
                if table.grow(key) == "resize":
                    break
                continue
            if out in (Outcome.INSERTED, Outcome.UPDATED, Outcome.DELETED):
                census.fences[op][pm.fence_count[op] - f0] += 1
                census.lines[op][pm.flush_count[op] - l0] += 1
                lf = table.load_factor() if census.count(op) % 512 == 1 else None
                if lf is not None:
                    lo, hi = min(lo, lf), max(hi, lf)
            if out is Outcome.INSERTED:
                where[key] = len(live)
                live.append(key)
            elif out is Outcome.DELETED:
                i = where.pop(key)
                last = live.pop()
                if i < len(live):
                    live[i] = last
                    where[last] = i
        hi = max(hi, table.resize_log[-1].load_factor)
    census.load_factors = (lo, hi)
    return census


# -- workload runs -----------------------------------------------------------

def _percentile(sorted_vals: list, q: float):
    if not sorted_vals:
        return 0
    return sorted_vals[min(len(sorted_vals) - 1, int(q * len(sorted_vals)))]


@dataclass
class OpSummary:
    kind: str
    count: int
    throughput: float
    rt_mean: float
    rt_p50: int
    rt_p99: int
    rt_max: int
    latency_us_p50: float
    latency_us_p99: float


@dataclass
class RunReport:
    workload: dict
    clients: int
    server_threads: int
    added_ratio: str
    op_count: int
    wall_seconds: float
    ops: dict[str, OpSummary]
    outcomes: dict[str, int]
    pm_writes: dict[str, dict]
    reads_per_get: dict[int, int]
    resizes: list[dict] = field(default_factory=list)

    def records(self) -> list[dict]:
        recs = [{
            "record": "summary", "workload": self.workload, "clients": self.clients,
            "server_threads": self.server_threads, "added_ratio": self.added_ratio,
            "op_count": self.op_count, "wall_seconds": round(self.wall_seconds, 6),
            "throughput": round(self.op_count / self.wall_seconds, 1) if self.wall_seconds else 0.0,
        }]
        recs += [{"record": "op", **asdict(s)} for s in self.ops.values()]
        recs += [{"record": "outcome", "outcome": k, "count": v} for k, v in sorted(self.outcomes.items())]
        recs += [{"record": "pm_writes", "op": k, **v} for k, v in self.pm_writes.items()]
        recs += [{"record": "reads_per_get", "reads": k, "count": v} for k, v in sorted(self.reads_per_get.items())]
        recs += [{"record": "resize", **r} for r in self.resizes]
        return recs

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")

    def format_table(self) -> str:
        lines = [f"workload {self.workload['mix']} ({self.workload['distribution']}), {self.op_count} ops, "
                 f"{self.clients} clients x {self.server_threads} server threads, added ratio {self.added_ratio}",
                 f"{'op':<8}{'count':>10}{'kops/s':>10}{'rt mean':>9}{'rt p99':>8}{'us p50':>9}{'us p99':>9}"]
        for s in self.ops.values():
            lines.append(f"{s.kind:<8}{s.count:>10}{s.throughput / 1e3:>10.1f}{s.rt_mean:>9.3f}{s.rt_p99:>8}"
                         f"{s.latency_us_p50:>9.1f}{s.latency_us_p99:>9.1f}")
        if any(v["ops"] for v in self.pm_writes.values()):
            lines.append("PM writes per op: " + ", ".join(
                f"{k}={v['per_op']:.3f}" for k, v in self.pm_writes.items() if v["ops"]))
        if self.reads_per_get:
            total = sum(self.reads_per_get.values())
            lines.append("one-sided reads per get: " + ", ".join(
                f"{k}: {100 * v / total:.2f}%" for k, v in sorted(self.reads_per_get.items())))
        for r in self.resizes:
            lines.append(f"resize at {r['n_buckets']} buckets: load factor {r['load_factor']:.3f}")
        return "\n".join(lines)


class _ThreadStats:
    def __init__(self):
        self.rts: dict[str, list[int]] = {}
        self.lat: dict[str, list[int]] = {}
        self.reads = Counter()

    def add(self, kind: str, rt: int, ns: int) -> None:
        self.rts.setdefault(kind, []).append(rt)
        self.lat.setdefault(kind, []).append(ns)


def _run_ops(client: KvClient, ops: list[Op], stats: _ThreadStats) -> None:
    ep = client.ep
    clock = time.perf_counter_ns
    for op in ops:
        t0 = clock()
        rt0 = ep.total_round_trips
        if op.kind == "read":
            client.get(op.key)
            stats.reads[client.last_reads] += 1
        elif op.kind == "update":
            client.update(op.key, op.value)
        elif op.kind == "insert":
            client.insert(op.key, op.value)
        elif op.kind == "rmw":
            client.get(op.key)
            stats.reads[client.last_reads] += 1
            client.update(op.key, op.value)
        else:
            raise ValueError(op.kind)
        stats.add(op.kind, ep.total_round_trips - rt0, clock() - t0)


def run_workload(spec: WorkloadSpec, *, clients: int = 1, server_threads: int = 1,
                 added_ratio=Fraction(1, 10), initial_buckets: Optional[int] = None) -> RunReport:
    n = initial_buckets or buckets_for_keys(spec.key_space)
    system = build_system(n, added_ratio=added_ratio, capacity=capacity_for(n * 8))
    vrng = random.Random(spec.seed ^ 0x5EED)
    load(system.table, ((k, spec.value(vrng)) for k in spec.load_keys()))
    system.pm.reset_counters()
    ops = spec.operations()

    handles = [system.client() for _ in range(clients)]
    stats = [_ThreadStats() for _ in range(clients)]
    threads = [threading.Thread(target=_run_ops, args=(handles[c], ops[c::clients], stats[c]))
               for c in range(clients)]
    system.server.run(server_threads)
    t0 = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wall = time.perf_counter() - t0
    system.close()

    summaries = {}
    reads = Counter()
    for s in stats:
        reads.update(s.reads)
    for kind in spec.percentages:
        rts = sorted(x for s in stats for x in s.rts.get(kind, ()))
        lat = sorted(x for s in stats for x in s.lat.get(kind, ()))
        if not rts:
            continue
        summaries[kind] = OpSummary(
            kind, len(rts), len(rts) / wall if wall else 0.0, sum(rts) / len(rts),
            _percentile(rts, 0.5), _percentile(rts, 0.99), rts[-1],
            _percentile(lat, 0.5) / 1e3, _percentile(lat, 0.99) / 1e3)
    pm_writes = {}
    for tag in ("insert", "update", "delete"):
        done = system.server.mutated(tag)
        c = system.pm.counters(tag)
        pm_writes[tag] = {"ops": done, "fences": c["fences"], "flushed_lines": c["flushes"],
                          "per_op": c["fences"] / done if done else 0.0}
    resizes = [{"epoch": r.epoch, "n_buckets": r.n_buckets, "items": r.items,
                "total_slots": r.total_slots, "added_groups": r.added_groups,
                "load_factor": r.load_factor} for r in system.table.resize_log]
    return RunReport(
        workload=asdict(spec), clients=clients, server_threads=server_threads,
        added_ratio=str(Fraction(added_ratio)), op_count=len(ops), wall_seconds=wall,
        ops=summaries, outcomes={f"{k[0]}:{k[1]}": v for k, v in system.server.served.items()},
        pm_writes=pm_writes, reads_per_get=dict(reads), resizes=resizes)

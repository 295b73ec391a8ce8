"""Concurrency stress runs and a small-history linearizability checker."""
from __future__ import annotations

import random
import sys
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Optional

from .bench import build_system, capacity_for
from .table import Outcome
from .transport import TransportError


@dataclass
class StressConfig:
    clients: int = 16
    server_threads: int = 4
    ops: int = 10**6
    keys_per_client: int = 2000
    initial_buckets: int = 20
    added_ratio: Fraction = Fraction(1, 10)
    seed: int = 0
    join_timeout: float = 1800.0


@dataclass
class StressReport:
    ops_done: int = 0
    wall_seconds: float = 0.0
    deadlocked: bool = False
    resizes: int = 0
    groups_added: int = 0
    server_errors: list[str] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.deadlocked or self.server_errors or self.violations)


def _client_loop(client, keys: list[bytes], n_ops: int, rng: random.Random, model: dict,
                 errors: list[str], done: list[int]) -> None:
    """Each client owns its keys, so its own sequential model predicts every result."""
    count = 0
    try:
        for i in range(n_ops):
            key = rng.choice(keys)
            r = rng.random()
            if r < 0.5:
                got = client.get(key)
                if got != model.get(key):
                    errors.append(f"read of {key!r} returned {got!r}, expected {model.get(key)!r}")
            elif r < 0.7:
                value = i.to_bytes(4, "little") + rng.randbytes(4)
                out = client.insert(key, value)
                want = Outcome.DUPLICATE if key in model else Outcome.INSERTED
                if out is not want:
                    errors.append(f"insert of {key!r} gave {out.name}, expected {want.name}")
                elif out is Outcome.INSERTED:
                    model[key] = value
            elif r < 0.9:
                value = i.to_bytes(4, "little") + rng.randbytes(4)
                out = client.update(key, value)
                want = Outcome.UPDATED if key in model else Outcome.NOT_FOUND
                if out is not want:
                    errors.append(f"update of {key!r} gave {out.name}, expected {want.name}")
                elif out is Outcome.UPDATED:
                    model[key] = value
            else:
                out = client.remove(key)
                want = Outcome.DELETED if key in model else Outcome.NOT_FOUND
                if out is not want:
                    errors.append(f"delete of {key!r} gave {out.name}, expected {want.name}")
                elif out is Outcome.DELETED:
                    del model[key]
            count += 1
    except TransportError as exc:
        errors.append(f"transport failure after {count} ops: {exc}")
    finally:
        done.append(count)


def run_stress(cfg: StressConfig) -> StressReport:
    """Mixed workload from many client threads while the table resizes underneath."""
    report = StressReport()
    total_keys = cfg.clients * cfg.keys_per_client
    system = build_system(cfg.initial_buckets, added_ratio=cfg.added_ratio,
                          capacity=capacity_for(max(64, total_keys // 2)))
    groups = []
    system.table.add_listener(lambda event, **info: groups.append(1) if event == "group" else None)
    rng = random.Random(cfg.seed)
    key_sets = [[b"c%02dk%012d" % (c, i) for i in range(cfg.keys_per_client)] for c in range(cfg.clients)]
    models: list[dict] = [{} for _ in range(cfg.clients)]
    errors: list[str] = []
    done: list[int] = []
    per_client = [cfg.ops // cfg.clients + (c < cfg.ops % cfg.clients) for c in range(cfg.clients)]
    clients = [system.client() for _ in range(cfg.clients)]
    threads = [threading.Thread(target=_client_loop, daemon=True,
                                args=(clients[c], key_sets[c], per_client[c],
                                      random.Random(rng.randrange(1 << 62)), models[c], errors, done))
               for c in range(cfg.clients)]
    old_interval = sys.getswitchinterval()
    sys.setswitchinterval(1e-4)
    try:
        system.server.run(cfg.server_threads)
        t0 = time.perf_counter()
        for t in threads:
            t.start()
        deadline = time.monotonic() + cfg.join_timeout
        for t in threads:
            t.join(max(0.0, deadline - time.monotonic()))
        report.wall_seconds = time.perf_counter() - t0
        report.deadlocked = any(t.is_alive() for t in threads)
        if not report.deadlocked:
            system.close()
    finally:
        sys.setswitchinterval(old_interval)
    report.ops_done = sum(done)
    report.resizes = len(system.table.resize_log)
    report.groups_added = len(groups)
    report.server_errors = [repr(e) for e in system.server.errors]
    report.violations = errors[:50]
    if report.deadlocked:
        return report
    expected = {}
    for m in models:
        expected.update(m)
    got = system.table.mapping()
    if got != expected:
        missing = len(expected.keys() - got.keys())
        extra = len(got.keys() - expected.keys())
        wrong = sum(1 for k in expected.keys() & got.keys() if expected[k] != got[k])
        report.violations.append(f"final state differs: {missing} missing, {extra} extra, {wrong} wrong values")
    return report


# -- linearizability ----------------------------------------------------------

class Call(NamedTuple):
    thread: int
    kind: str              # "update" or "get"
    value: Optional[bytes]  # written value, or value returned by get
    start: int
    end: int


def linearizable(history: list[Call], initial: Optional[bytes]) -> bool:
    """Whether some real-time-respecting total order explains every get (register model)."""
    n = len(history)

    def search(remaining: frozenset, current: Optional[bytes]) -> bool:
        if not remaining:
            return True
        # candidates: calls that no other remaining call strictly precedes
        earliest_end = min(history[i].end for i in remaining)
        for i in remaining:
            c = history[i]
            if c.start > earliest_end:
                continue
            if c.kind == "get":
                if c.value != current:
                    continue
                if search(remaining - {i}, current):
                    return True
            elif search(remaining - {i}, c.value):
                return True
        return False

    return search(frozenset(range(n)), initial)


def same_key_history(system, rng: random.Random, ops_per_thread: int = 3, key: bytes = b"hotkey0000000000"):
    """Two clients race updates and gets on one key; returns the recorded history."""
    writer = system.client()
    initial = b"init"
    if writer.insert(key, initial) is Outcome.DUPLICATE:
        writer.update(key, initial)
    clients = [system.client(), system.client()]
    history: list[Call] = []
    lock = threading.Lock()
    barrier = threading.Barrier(2)
    clock = time.perf_counter_ns
    plans = [[rng.random() < 0.5 for _ in range(ops_per_thread)] for _ in range(2)]

    def run(t: int) -> None:
        c = clients[t]
        plan = plans[t]
        barrier.wait()
        for j, is_update in enumerate(plan):
            if is_update:
                value = b"t%dv%d" % (t, j)
                s = clock()
                out = c.update(key, value)
                e = clock()
                if out is not Outcome.UPDATED:
                    raise AssertionError(f"update returned {out.name}")
                call = Call(t, "update", value, s, e)
            else:
                s = clock()
                got = c.get(key)
                e = clock()
                call = Call(t, "get", got, s, e)
            with lock:
                history.append(call)

    threads = [threading.Thread(target=run, args=(t,)) for t in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for c in (writer, *clients):
        c.ep.close()
    return history, initial

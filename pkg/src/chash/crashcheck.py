"""Crash-consistency sweep.

A scripted mix of inserts, updates and deletes runs against a small table
that resizes several times. At chosen PM events a crash image is taken (or a
crash is raised), recovered on a fresh region and checked against the
reference model: the recovered mapping must equal the state before or after
the operation in flight, with no duplicate keys and no torn values.
"""
from __future__ import annotations

import random
import zlib
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .layout import unpack_control, ROOT_ADDR
from .pm import CrashImage, PmRegion, SimulatedCrash
from .table import ContinuityHashTable, Outcome, TableError

PAYLOAD_LEN = 11


def checked_value(key: bytes, payload: bytes) -> bytes:
    return payload + zlib.crc32(key + payload).to_bytes(4, "little")


def value_ok(key: bytes, value: bytes) -> bool:
    return len(value) == PAYLOAD_LEN + 4 and zlib.crc32(key + value[:PAYLOAD_LEN]).to_bytes(4, "little") == value[PAYLOAD_LEN:]


@dataclass
class SweepConfig:
    seed: int = 0
    ops: int = 600
    key_pool: int = 260
    initial_buckets: int = 20
    added_ratio: Fraction = Fraction(1, 10)
    capacity: int = 1 << 18
    crash_every: int = 1          # take an image every this many PM events
    keep_probability: float = 0.5
    nested_every: int = 25        # nested recovery crash for every n-th mid-resize image
    raise_runs: int = 40          # raise-mode crashes at random events


@dataclass
class SweepReport:
    injections: int = 0
    nested: int = 0
    raised: int = 0
    during_resize: int = 0
    events: int = 0
    by_kind: Counter = field(default_factory=Counter)
    violations: list[str] = field(default_factory=list)

    def merge(self, other: "SweepReport") -> None:
        self.injections += other.injections
        self.nested += other.nested
        self.raised += other.raised
        self.during_resize += other.during_resize
        self.events += other.events
        self.by_kind.update(other.by_kind)
        self.violations.extend(other.violations)

    @property
    def total(self) -> int:
        return self.injections + self.nested + self.raised


def script(cfg: SweepConfig) -> list[tuple[str, bytes, bytes]]:
    rng = random.Random(cfg.seed)
    keys = [rng.randbytes(16) for _ in range(cfg.key_pool)]
    ops = []
    for _ in range(cfg.ops):
        r = rng.random()
        key = rng.choice(keys)
        kind = "insert" if r < 0.6 else "update" if r < 0.85 else "delete"
        value = checked_value(key, rng.randbytes(PAYLOAD_LEN)) if kind != "delete" else b""
        ops.append((kind, key, value))
    return ops


def model_apply(state: dict, op) -> dict:
    kind, key, value = op
    if kind == "insert" and key not in state:
        return {**state, key: value}
    if kind == "update" and key in state:
        return {**state, key: value}
    if kind == "delete" and key in state:
        out = dict(state)
        del out[key]
        return out
    return state


def table_apply(table: ContinuityHashTable, op) -> Outcome:
    kind, key, value = op
    if kind == "delete":
        return table.delete(key)
    fn = table.insert if kind == "insert" else table.update
    out = fn(key, value)
    while out is Outcome.NEEDS_RESIZE:
        table.grow(key)
        out = fn(key, value)
    return out


def check_image(image: CrashImage | bytes, allowed: tuple[dict, ...], added_ratio) -> Optional[str]:
    """Recover an image and return a description of any violation."""
    try:
        table = ContinuityHashTable.recover(image, added_ratio=added_ratio)
        got = table.mapping()
    except TableError as exc:
        return f"recovery failed: {exc}"
    for key, value in got.items():
        if not value_ok(key, value):
            return f"torn value for key {key.hex()}"
    if not any(got == a for a in allowed):
        return f"mapping of {len(got)} items matches neither neighbouring state"
    if table.resizing is not None:
        return "resize still marked in progress after recovery"
    return None


def _resizing(image: CrashImage) -> bool:
    ctl = unpack_control(int.from_bytes(image.data[ROOT_ADDR:ROOT_ADDR + 8], "little"))
    return bool(ctl and ctl[1])


def _nested(image: CrashImage, allowed, cfg: SweepConfig, rng: random.Random, report: SweepReport) -> None:
    """Crash the recovery of ``image`` part way through, then recover again."""
    pm = PmRegion.from_image(image)
    total = _count_recovery_events(image, cfg)
    if total == 0:
        return
    target = rng.randrange(total)
    taken: list[CrashImage] = []

    base = pm.events

    def hook(idx, kind):
        if idx - base == target + 1 and not taken:
            taken.append(pm.crash(rng.randrange(1 << 30), cfg.keep_probability))

    pm.set_event_hook(hook)
    try:
        ContinuityHashTable.recover(pm, added_ratio=cfg.added_ratio)
    except TableError as exc:
        report.violations.append(f"first recovery failed: {exc}")
        return
    for img in taken:
        report.nested += 1
        err = check_image(img, allowed, cfg.added_ratio)
        if err:
            report.violations.append(f"nested recovery: {err}")


def _count_recovery_events(image: CrashImage, cfg: SweepConfig) -> int:
    pm = PmRegion.from_image(image)
    start = pm.events
    try:
        ContinuityHashTable.recover(pm, added_ratio=cfg.added_ratio)
    except TableError:
        return 0
    return pm.events - start


def sweep(cfg: SweepConfig) -> SweepReport:
    """Snapshot-mode sweep over one scripted run plus a raise-mode subset."""
    report = SweepReport()
    ops = script(cfg)
    rng = random.Random(cfg.seed ^ 0xC4A5)
    pm = PmRegion(cfg.capacity)
    table = ContinuityHashTable.create(pm, cfg.initial_buckets, added_ratio=cfg.added_ratio)
    state: dict = {}
    current = {"op": None}

    def hook(idx, kind):
        if idx % cfg.crash_every:
            return
        op = current["op"]
        if op is None:
            return
        image = pm.crash(rng.randrange(1 << 30), cfg.keep_probability)
        allowed = (state, model_apply(state, op))
        report.injections += 1
        report.by_kind[kind] += 1
        err = check_image(image, allowed, cfg.added_ratio)
        if err:
            report.violations.append(f"seed {cfg.seed} event {idx} ({kind}) during {op[0]}: {err}")
        if _resizing(image):
            report.during_resize += 1
            if cfg.nested_every and report.during_resize % cfg.nested_every == 0:
                _nested(image, allowed, cfg, rng, report)

    pm.set_event_hook(hook)
    start = pm.events
    for op in ops:
        current["op"] = op
        table_apply(table, op)
        state = model_apply(state, op)
        current["op"] = None
    pm.set_event_hook(None)
    report.events = pm.events - start
    if table.mapping() != state:
        report.violations.append(f"seed {cfg.seed}: live table diverged from the model")
    for _ in range(cfg.raise_runs):
        _raise_once(cfg, ops, rng.randrange(report.events), rng, report)
    return report


def _raise_once(cfg: SweepConfig, ops, target: int, rng: random.Random, report: SweepReport) -> None:
    pm = PmRegion(cfg.capacity)
    table = ContinuityHashTable.create(pm, cfg.initial_buckets, added_ratio=cfg.added_ratio)
    start = pm.events
    seed = rng.randrange(1 << 30)

    def hook(idx, kind):
        if idx - start == target + 1:
            raise SimulatedCrash(pm.crash(seed, cfg.keep_probability))

    pm.set_event_hook(hook)
    state: dict = {}
    for op in ops:
        try:
            table_apply(table, op)
        except SimulatedCrash as crash:
            report.raised += 1
            err = check_image(crash.image, (state, model_apply(state, op)), cfg.added_ratio)
            if err:
                report.violations.append(f"raise-mode event {target}: {err}")
            return
        state = model_apply(state, op)

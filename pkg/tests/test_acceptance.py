"""Acceptance criteria, each at its stated tolerance.

Every test prints one PASS/FAIL line (visible with ``pytest -v -s`` or in the
``-v`` log via the disabled capture below).
"""
import random
import statistics
from fractions import Fraction

import pytest

from chash.bench import build_system, fill_to_trigger, load_factor_experiment, pm_write_census, run_workload
from chash.crashcheck import SweepConfig, SweepReport, sweep
from chash.stress import StressConfig, linearizable, run_stress, same_key_history
from chash.workload import WorkloadSpec, missing_key_for


def verdict(capsys, criterion: str, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
    assert ok, detail


def test_1_pm_writes_per_operation(capsys):
    census = pm_write_census(min_ops=10**5, n_buckets=2000, seed=1)
    expected = {"insert": 2, "update": 2, "delete": 1}
    counts = {op: census.count(op) for op in expected}
    exact = all(set(census.fences[op]) == {n} for op, n in expected.items())
    lo, hi = census.load_factors
    ok = exact and min(counts.values()) >= 10**5 and lo <= 0.10
    verdict(capsys, "1 PM writes", ok,
            f"fences/op {dict((op, dict(c)) for op, c in census.fences.items())}, ops {counts}, "
            f"load factor {lo:.3f}..{hi:.3f} over {census.tables} tables")


def test_2_single_round_trip_reads(capsys):
    pos = run_workload(WorkloadSpec("C", op_count=10**5, key_space=10**4, seed=2), added_ratio=0)
    neg = run_workload(WorkloadSpec("neg", op_count=10**5, key_space=10**4, seed=2), added_ratio=0)
    single = pos.reads_per_get == {1: 10**5} and neg.reads_per_get == {1: 10**5}

    s = build_system(2000, added_ratio=Fraction(1, 10))
    fill_to_trigger(s.table, random.Random(2))
    quota_used = len(s.table.view.groups) == s.table.quota()
    keys = [k for k, _ in s.table.items()]
    client = s.client()
    rng = random.Random(3)
    reads = []
    for i in range(10**5):
        key = rng.choice(keys) if i % 2 else missing_key_for(rng.randrange(10**9))
        client.get(key)
        reads.append(client.last_reads)
    mean, peak = statistics.mean(reads), max(reads)
    ok = single and quota_used and mean <= 1.10 and peak == 2
    verdict(capsys, "2 round trips", ok,
            f"ratio 0: positive {pos.reads_per_get}, negative {neg.reads_per_get}; "
            f"ratio 1/10 with {len(s.table.view.groups)}/{s.table.quota()} groups: mean {mean:.4f}, max {peak}")


def test_3_crash_consistency(capsys):
    total = SweepReport()
    seed = 0
    while total.total < 10**4:
        total.merge(sweep(SweepConfig(seed=seed)))
        seed += 1
    ok = total.total >= 10**4 and not total.violations and total.during_resize > 0
    verdict(capsys, "3 crash consistency", ok,
            f"{total.total} injections ({total.injections} snapshot, {total.nested} nested, "
            f"{total.raised} raised; {total.during_resize} mid-resize) over {seed} workloads, "
            f"{len(total.violations)} violations {total.violations[:3]}")


def test_4_load_factor(capsys):
    seeds, resizes = range(16), 6
    added = [[r.load_factor for r in load_factor_experiment(20, resizes, Fraction(1, 10), s)] for s in seeds]
    plain = [[r.load_factor for r in load_factor_experiment(20, resizes, Fraction(0), s)] for s in seeds]
    added_mean = [statistics.mean(run[i] for run in added) for i in range(resizes)]
    plain_mean = [statistics.mean(run[i] for run in plain) for i in range(resizes)]
    slope = statistics.linear_regression(range(resizes), plain_mean).slope
    ok = all(0.60 <= x <= 0.80 for x in added_mean) and slope < 0 and plain_mean[-1] < plain_mean[0]
    verdict(capsys, "4 load factor", ok,
            f"added 1/10 means {[round(x, 3) for x in added_mean]}; none means "
            f"{[round(x, 3) for x in plain_mean]} (slope {slope:.4f}/resize)")


def test_5_concurrency(capsys):
    report = run_stress(StressConfig(clients=16, server_threads=4, ops=10**6, seed=5))
    s = build_system(20)
    s.server.run(2)
    rng = random.Random(5)
    histories = 300
    bad = sum(not linearizable(*same_key_history(s, rng, ops_per_thread=4)) for _ in range(histories))
    s.close()
    ok = report.ok and report.ops_done == 10**6 and bad == 0
    verdict(capsys, "5 concurrency", ok,
            f"{report.ops_done} ops in {report.wall_seconds:.0f}s, {report.resizes} resizes, "
            f"{report.groups_added} groups, deadlock={report.deadlocked}, server errors "
            f"{report.server_errors[:2]}, violations {report.violations[:2]}; "
            f"{histories - bad}/{histories} same-key histories linearizable")


def test_6_absolute_performance(capsys):
    with capsys.disabled():
        print("\n[SKIP] criterion 6: absolute throughput/latency and cross-system speedups need "
              "the original hardware and baselines; criteria 1-2 cover the mechanisms instead")
    pytest.skip("not reproducible at desk scale (hardware- and baseline-dependent)")

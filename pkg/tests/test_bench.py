import json
from fractions import Fraction

import pytest

from chash.bench import load_factor_experiment, run_workload
from chash.cli import main
from chash.workload import WorkloadSpec


def test_ycsb_c_reads_are_single_round_trip():
    r = run_workload(WorkloadSpec("C", op_count=3000, key_space=1000), added_ratio=0)
    assert r.reads_per_get == {1: 3000}
    assert r.ops["read"].rt_max == 1


def test_negative_reads_single_round_trip():
    r = run_workload(WorkloadSpec("neg", op_count=3000, key_space=1000), added_ratio=0)
    assert r.reads_per_get == {1: 3000}


def test_update_only_writes_twice_per_op():
    r = run_workload(WorkloadSpec("update-only", op_count=2000, key_space=500))
    assert r.pm_writes["update"]["ops"] == 2000
    assert r.pm_writes["update"]["fences"] == 4000


def test_report_integrity_and_determinism():
    spec = WorkloadSpec("A", op_count=3000, key_space=400, seed=5)
    a, b = run_workload(spec), run_workload(spec)
    assert sum(s.count for s in a.ops.values()) == a.op_count == 3000
    assert a.pm_writes == b.pm_writes and a.reads_per_get == b.reads_per_get
    assert {k: v.count for k, v in a.ops.items()} == {k: v.count for k, v in b.ops.items()}


def test_multi_client_run_completes():
    r = run_workload(WorkloadSpec("F", op_count=4000, key_space=500), clients=4, server_threads=2)
    assert sum(s.count for s in r.ops.values()) == 4000
    assert r.pm_writes["update"]["per_op"] == 2.0


def test_jsonl_and_table(tmp_path):
    r = run_workload(WorkloadSpec("D", op_count=2000, key_space=300))
    path = tmp_path / "r.jsonl"
    r.write_jsonl(path)
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert recs[0]["record"] == "summary" and recs[0]["op_count"] == 2000
    assert {rec["record"] for rec in recs} >= {"summary", "op", "pm_writes", "reads_per_get"}
    assert "PM writes per op" in r.format_table()


def test_added_groups_raise_load_factor_after_first_resize():
    for seed in range(3):
        added = load_factor_experiment(20, 5, Fraction(1, 10), seed)
        plain = load_factor_experiment(20, 5, Fraction(0), seed)
        assert all(a.load_factor > p.load_factor for a, p in zip(added[1:], plain[1:]))
        assert [r.n_buckets for r in added] == [20, 40, 80, 160, 320]


def test_cli_workload(tmp_path, capsys):
    path = tmp_path / "out.jsonl"
    assert main(["--workload", "B", "--ops", "1000", "--keys", "200", "--report", str(path)]) == 0
    assert "workload B" in capsys.readouterr().out
    assert path.read_text().count("\n") > 3


def test_cli_load_factor(tmp_path, capsys):
    path = tmp_path / "lf.jsonl"
    assert main(["--resizes", "3", "--added-ratio", "1/20", "--report", str(path)]) == 0
    assert "load factor at each resize" in capsys.readouterr().out
    assert len(path.read_text().splitlines()) == 3


def test_cli_rejects_unknown_workload():
    with pytest.raises(SystemExit):
        main(["--workload", "E"])

import random
from collections import Counter

import pytest

from chash.workload import MIXES, ConfigError, WorkloadSpec, ZipfianGenerator, key_for


def test_mixes_sum_to_100():
    assert all(sum(m.values()) == 100 for m in MIXES.values())


@pytest.mark.parametrize("kwargs", [dict(mix="E"), dict(distribution="pareto"), dict(op_count=-1),
                                    dict(key_space=0), dict(value_len=16), dict(theta=1.0)])
def test_invalid_specs(kwargs):
    with pytest.raises(ConfigError):
        WorkloadSpec(**kwargs)


def test_default_distributions():
    assert WorkloadSpec("A").distribution == "zipfian"
    assert WorkloadSpec("D").distribution == "latest"
    assert WorkloadSpec("neg").distribution == "uniform"


def test_keys_are_sixteen_bytes():
    assert len(key_for(0)) == len(key_for(10**11)) == 16


def test_operations_are_deterministic():
    spec = WorkloadSpec("F", op_count=2000, key_space=500, seed=3)
    assert spec.operations() == spec.operations()
    assert spec.operations() != WorkloadSpec("F", op_count=2000, key_space=500, seed=4).operations()


def test_mix_proportions():
    ops = WorkloadSpec("B", op_count=20_000, key_space=1000).operations()
    share = Counter(op.kind for op in ops)["update"] / len(ops)
    assert 0.04 < share < 0.06


def test_negative_keys_are_outside_key_space():
    spec = WorkloadSpec("neg", op_count=500, key_space=100)
    loaded = set(spec.load_keys())
    assert all(op.key not in loaded for op in spec.operations())


def test_workload_d_inserts_fresh_keys_and_reads_recent_ones():
    spec = WorkloadSpec("D", op_count=5000, key_space=1000)
    ops = spec.operations()
    inserts = [op.key for op in ops if op.kind == "insert"]
    assert len(set(inserts)) == len(inserts) and inserts[0] == key_for(1000)
    reads = Counter(op.key for op in ops if op.kind == "read")
    assert reads.most_common(1)[0][0] in {key_for(i) for i in range(900, 1000 + len(inserts))}


def test_zipfian_is_skewed_toward_zero():
    z = ZipfianGenerator(1000, 0.99, random.Random(1))
    counts = Counter(z.next() for _ in range(50_000))
    assert counts[0] == max(counts.values())
    assert counts[0] > 10 * counts.get(500, 0)
    assert all(0 <= i < 1000 for i in counts)


def test_value_lengths_within_limit():
    rng = random.Random(0)
    spec = WorkloadSpec()
    lens = {len(spec.value(rng)) for _ in range(2000)}
    assert lens == set(range(1, 16))
    assert len(WorkloadSpec(value_len=7).value(rng)) == 7

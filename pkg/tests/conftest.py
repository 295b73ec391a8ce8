import itertools

import pytest

from chash.layout import fnv1a_64
from chash.pm import PmRegion
from chash.table import ContinuityHashTable


def keys_for_bucket(bucket: int, n_buckets: int, count: int, prefix: bytes = b"k") -> list[bytes]:
    """Brute-force preimage search: 16-byte keys whose home bucket is ``bucket``."""
    out = []
    for i in itertools.count():
        key = (prefix + b"%d" % i).ljust(16, b".")
        if fnv1a_64(key) % n_buckets == bucket:
            out.append(key)
            if len(out) == count:
                return out


@pytest.fixture
def pm():
    return PmRegion(1 << 18)


@pytest.fixture
def table(pm):
    return ContinuityHashTable.create(pm, 20)

"""YCSB-style workload definitions and key generators."""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import NamedTuple, Optional

from .layout import MAX_VALUE_LEN, fnv1a_64

# operation mixes in percent
MIXES: dict[str, dict[str, int]] = {
    "A": {"read": 50, "update": 50},
    "B": {"read": 95, "update": 5},
    "C": {"read": 100},
    "D": {"read": 95, "insert": 5},
    "F": {"read": 50, "rmw": 50},
    "neg": {"read": 100},
    "update-only": {"update": 100},
}
DEFAULT_DISTRIBUTION = {"D": "latest", "neg": "uniform"}
DISTRIBUTIONS = ("uniform", "zipfian", "latest")


class ConfigError(ValueError):
    pass


def key_for(i: int) -> bytes:
    """16-byte key for index ``i`` of the loaded key space."""
    return b"user%012d" % i


def missing_key_for(i: int) -> bytes:
    """16-byte key guaranteed not to be in any loaded key space."""
    return b"miss%012d" % i


def zeta(n: int, theta: float, start: int = 0, initial: float = 0.0) -> float:
    total = initial
    for i in range(start, n):
        total += 1.0 / (i + 1) ** theta
    return total


class ZipfianGenerator:
    """Gray et al. zipfian sampler over ``[0, n)`` as used by YCSB, item 0 hottest."""

    def __init__(self, n: int, theta: float = 0.99, rng: Optional[random.Random] = None):
        if n < 1:
            raise ConfigError("zipfian range must be non-empty")
        self.theta = theta
        self.rng = rng or random.Random()
        self.zeta2 = zeta(2, theta)
        self.alpha = 1.0 / (1.0 - theta)
        self.n = 0
        self.zetan = 0.0
        self.resize(n)

    def resize(self, n: int) -> None:
        if n > self.n:
            self.zetan = zeta(n, self.theta, self.n, self.zetan)
            self.n = n
            self.eta = (1 - (2.0 / n) ** (1 - self.theta)) / (1 - self.zeta2 / self.zetan) if n > 2 else 0.0

    def next(self) -> int:
        u = self.rng.random()
        uz = u * self.zetan
        if uz < 1.0:
            return 0
        if uz < 1.0 + 0.5 ** self.theta:
            return min(1, self.n - 1)
        return min(self.n - 1, int(self.n * (self.eta * u - self.eta + 1) ** self.alpha))


class Op(NamedTuple):
    kind: str
    key: bytes
    value: bytes


@dataclass
class WorkloadSpec:
    mix: str = "A"
    distribution: Optional[str] = None
    op_count: int = 10**6
    key_space: int = 10**5
    value_len: Optional[int] = None  # None: uniform in [1, 15]
    seed: int = 0
    theta: float = 0.99

    def __post_init__(self):
        if self.mix not in MIXES:
            raise ConfigError(f"unknown workload mix {self.mix!r}; choose from {sorted(MIXES)}")
        if sum(MIXES[self.mix].values()) != 100:
            raise ConfigError(f"mix {self.mix} does not sum to 100%")
        if self.distribution is None:
            self.distribution = DEFAULT_DISTRIBUTION.get(self.mix, "zipfian")
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigError(f"unknown key distribution {self.distribution!r}")
        if self.op_count < 0 or self.key_space < 1:
            raise ConfigError("op count must be >= 0 and key space >= 1")
        if self.value_len is not None and not 0 <= self.value_len <= MAX_VALUE_LEN:
            raise ConfigError(f"values are at most {MAX_VALUE_LEN} bytes")
        if not 0 < self.theta < 1:
            raise ConfigError("zipfian theta must lie in (0, 1)")

    @property
    def percentages(self) -> dict[str, int]:
        return MIXES[self.mix]

    def value(self, rng: random.Random) -> bytes:
        n = rng.randint(1, MAX_VALUE_LEN) if self.value_len is None else self.value_len
        return rng.randbytes(n)

    def load_keys(self) -> list[bytes]:
        return [key_for(i) for i in range(self.key_space)]

    def operations(self) -> list[Op]:
        """The full run-phase operation sequence; a pure function of these settings."""
        rng = random.Random(self.seed)
        kinds, weights = zip(*self.percentages.items())
        n_keys = self.key_space
        zipf = None
        if self.distribution in ("zipfian", "latest"):
            zipf = ZipfianGenerator(n_keys, self.theta, random.Random(self.seed + 1))
        ops: list[Op] = []
        cum = [sum(weights[:i + 1]) for i in range(len(weights))]
        for _ in range(self.op_count):
            r = rng.randrange(100)
            kind = next(k for k, c in zip(kinds, cum) if r < c)
            if kind == "insert":
                key = key_for(n_keys)
                n_keys += 1
                if zipf is not None:
                    zipf.resize(n_keys)
                ops.append(Op(kind, key, self.value(rng)))
                continue
            if self.distribution == "uniform":
                idx = rng.randrange(n_keys)
            elif self.distribution == "zipfian":
                # scatter the hot items across the key space as YCSB does
                idx = fnv1a_64(zipf.next().to_bytes(8, "little")) % n_keys
            else:
                idx = n_keys - 1 - zipf.next()
            key = missing_key_for(idx) if self.mix == "neg" else key_for(idx)
            value = self.value(rng) if kind in ("update", "rmw") else b""
            ops.append(Op(kind, key, value))
        return ops

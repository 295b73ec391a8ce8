"""``chash-bench``: run a YCSB-style workload or the load-factor experiment."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction

from .bench import load_factor_experiment, run_workload
from .workload import DISTRIBUTIONS, MIXES, ConfigError, WorkloadSpec

RATIOS = {"0": Fraction(0), "1/20": Fraction(1, 20), "1/10": Fraction(1, 10)}
FULL_OPS = 16 * 10**6


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chash-bench", description=__doc__)
    p.add_argument("--workload", choices=sorted(MIXES), default="A")
    p.add_argument("--distribution", choices=DISTRIBUTIONS, default=None,
                   help="key distribution (default: zipfian; latest for D; uniform for neg)")
    p.add_argument("--ops", type=int, default=10**6)
    p.add_argument("--keys", type=int, default=10**5)
    p.add_argument("--full", action="store_true", help=f"run {FULL_OPS} operations")
    p.add_argument("--clients", type=int, default=1)
    p.add_argument("--server-threads", type=int, default=1)
    p.add_argument("--added-ratio", choices=list(RATIOS), default="1/10")
    p.add_argument("--initial-buckets", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None, help="write line-delimited JSON records here")
    p.add_argument("--resizes", type=int, default=None,
                   help="run the load-factor experiment for this many resizes instead of a workload")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _load_factor(args) -> int:
    records = load_factor_experiment(initial_buckets=args.initial_buckets or 20, resizes=args.resizes,
                                     added_ratio=RATIOS[args.added_ratio], seed=args.seed)
    rows = [{"record": "resize", "resize": i + 1, "n_buckets": r.n_buckets, "items": r.items,
             "total_slots": r.total_slots, "added_groups": r.added_groups,
             "load_factor": r.load_factor} for i, r in enumerate(records)]
    print(f"load factor at each resize trigger (added ratio {args.added_ratio})")
    for row in rows:
        print(f"  resize {row['resize']:>2}  {row['n_buckets']:>7} buckets  load factor {row['load_factor']:.3f}")
    if args.report:
        with open(args.report, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if args.resizes is not None:
        return _load_factor(args)
    try:
        spec = WorkloadSpec(mix=args.workload, distribution=args.distribution,
                            op_count=FULL_OPS if args.full else args.ops, key_space=args.keys, seed=args.seed)
    except ConfigError as exc:
        print(f"chash-bench: {exc}", file=sys.stderr)
        return 2
    report = run_workload(spec, clients=args.clients, server_threads=args.server_threads,
                          added_ratio=RATIOS[args.added_ratio], initial_buckets=args.initial_buckets)
    print(report.format_table())
    if args.report:
        report.write_jsonl(args.report)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Run every workload mix once and print the per-mix tables."""
import argparse
from fractions import Fraction

from chash.bench import run_workload
from chash.workload import MIXES, WorkloadSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ops", type=int, default=10**5)
    ap.add_argument("--keys", type=int, default=10**4)
    ap.add_argument("--clients", type=int, default=4)
    ap.add_argument("--server-threads", type=int, default=2)
    ap.add_argument("--out", default=None, help="directory for one JSONL report per mix")
    args = ap.parse_args()

    for mix in MIXES:
        r = run_workload(WorkloadSpec(mix, op_count=args.ops, key_space=args.keys),
                         clients=args.clients, server_threads=args.server_threads, added_ratio=Fraction(1, 10))
        print(r.format_table() + "\n")
        if args.out:
            r.write_jsonl(f"{args.out}/{mix}.jsonl")


if __name__ == "__main__":
    main()

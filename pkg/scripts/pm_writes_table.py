"""PM writes (flush+fence sequences) and flushed cache lines per insert, update and delete."""
import argparse

from chash.bench import pm_write_census


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ops", type=int, default=10**5, help="minimum successful ops of each kind")
    ap.add_argument("--buckets", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    c = pm_write_census(args.ops, args.buckets, args.seed)
    lo, hi = c.load_factors
    print(f"{c.tables} tables filled to their resize trigger (load factor {lo:.2f} to {hi:.2f})")
    print(f"{'op':<8}{'count':>9}{'PM writes/op':>14}{'lines/op (histogram)':>26}")
    for op in ("insert", "update", "delete"):
        n = c.count(op)
        writes = sum(k * v for k, v in c.fences[op].items()) / n
        lines = ", ".join(f"{k}:{v}" for k, v in sorted(c.lines[op].items()))
        print(f"{op:<8}{n:>9}{writes:>14.3f}{lines:>26}")


if __name__ == "__main__":
    main()

"""Seeded crash-injection sweep: recover every image and compare with the reference model."""
import argparse
import sys

from chash.crashcheck import SweepConfig, SweepReport, sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--injections", type=int, default=10**4)
    ap.add_argument("--ops", type=int, default=600)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--keep", type=float, default=0.5, help="probability a dirty word survives")
    args = ap.parse_args()

    total = SweepReport()
    seed = args.seed
    while total.total < args.injections:
        r = sweep(SweepConfig(seed=seed, ops=args.ops, keep_probability=args.keep))
        print(f"seed {seed}: {r.total} crashes ({r.during_resize} mid-resize), {len(r.violations)} violations")
        total.merge(r)
        seed += 1
    print(f"total {total.total} crashes: {total.injections} snapshot, {total.nested} nested recovery, "
          f"{total.raised} raised; by event {dict(total.by_kind)}")
    for v in total.violations[:20]:
        print("  " + v)
    sys.exit(1 if total.violations else 0)


if __name__ == "__main__":
    main()

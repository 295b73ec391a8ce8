"""Load factor at each resize trigger for the three added-group schemes, averaged over seeds."""
import argparse
import json
import statistics
from fractions import Fraction

from chash.bench import load_factor_experiment

SCHEMES = {"none": Fraction(0), "added 1/20": Fraction(1, 20), "added 1/10": Fraction(1, 10)}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--resizes", type=int, default=7)
    ap.add_argument("--seeds", type=int, default=8)
    ap.add_argument("--initial-buckets", type=int, default=20)
    ap.add_argument("--out", default=None, help="optional JSONL output")
    args = ap.parse_args()

    rows = []
    for name, ratio in SCHEMES.items():
        runs = [load_factor_experiment(args.initial_buckets, args.resizes, ratio, seed)
                for seed in range(args.seeds)]
        for i in range(args.resizes):
            vals = [run[i].load_factor for run in runs]
            rows.append({"scheme": name, "resize": i + 1, "n_buckets": runs[0][i].n_buckets,
                         "mean": statistics.mean(vals), "stdev": statistics.pstdev(vals)})

    print(f"{'resize':>6}" + "".join(f"{name:>14}" for name in SCHEMES))
    for i in range(args.resizes):
        cells = [r for r in rows if r["resize"] == i + 1]
        print(f"{i + 1:>6}" + "".join(f"{r['mean']:>10.3f}±{r['stdev']:.2f}" for r in cells))
    if args.out:
        with open(args.out, "w") as fh:
            for r in rows:
                fh.write(json.dumps(r) + "\n")


if __name__ == "__main__":
    main()

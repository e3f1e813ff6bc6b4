"""Synthesize controllers for random DGUs and report feasibility per route and sigma_bar.

Usage: python3 scripts/feasibility_sweep.py [--samples 100] [--seed 0] [--workers 1] [--csv FILE]
"""

import argparse
import csv
import time
from collections import Counter

from pnpmg.cli import run_sweep


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--csv", default=None, help="write one row per synthesis")
    args = ap.parse_args()

    spec = {"kind": "dgu", "n_samples": args.samples, "sigma_bar": [1e2, 1e4, 1e6], "routes": ["lmi", "analytic"]}
    t0 = time.perf_counter()
    cols, rows = run_sweep(spec, seed=args.seed, workers=args.workers)
    elapsed = time.perf_counter() - t0

    total, ok = Counter(), Counter()
    for r in rows:
        key = (r["route"], r["sigma_bar"])
        total[key] += 1
        ok[key] += bool(r["feasible"])
    for key in sorted(total):
        print(f"{key[0]:9s} sigma_bar={key[1]:8.0e}  {ok[key]}/{total[key]} feasible")
    print(f"{sum(ok.values())}/{len(rows)} syntheses succeeded in {elapsed:.1f} s")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()

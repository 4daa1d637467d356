"""Desk-scale comparison of every kind over several seeds.

Uses the frozen per-kind settings in ``graphcf.desk.DESK_SETTINGS`` and writes
one CSV row per (kind, seed): final test RMSE, sparse-slice RMSE, pooled
attention by rating and training time.

    python3 benchmarks/run_desk.py [--seeds 0-4] [--kinds MF,SVDPP] [--movielens path/to/u.data]
"""

import argparse
import csv
import sys

from graphcf.desk import DESK_SETTINGS, desk_data, run_kind, summarize


def seed_list(text):
    if "-" in text:
        lo, hi = text.split("-")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",")]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", default="0-4")
    ap.add_argument("--kinds", default=",".join(DESK_SETTINGS))
    ap.add_argument("--movielens", default=None, help="MovieLens-100K u.data instead of synthetic data")
    ap.add_argument("--out", default="desk_results.csv")
    args = ap.parse_args()
    results = []
    for seed in seed_list(args.seeds):
        data = desk_data(seed, source=args.movielens)
        for kind in args.kinds.split(","):
            r = run_kind(data, kind)
            results.append(r)
            att = "" if r.attention is None else " attention 1/5 %.4f/%.4f" % (r.attention[1], r.attention[5])
            print(f"seed {seed} {kind:7s} test {r.test_rmse:.5f} degree<10 {r.sparse[10]:.5f}{att} "
                  f"({r.seconds:.0f}s)", flush=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "seed", "test_rmse", "sparse10_rmse", "att1", "att5", "seconds"])
        for r in results:
            att = r.attention or {}
            w.writerow([r.kind, r.seed, r.test_rmse, r.sparse[10], att.get(1, ""), att.get(5, ""), round(r.seconds, 2)])
    for kind, (mean, std, n) in summarize(results).items():
        print(f"{kind:7s} mean {mean:.5f} sd {std:.5f} over {n} seeds")
    return 0


if __name__ == "__main__":
    sys.exit(main())

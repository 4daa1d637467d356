"""Pick per-kind l2 strength and epoch count for the desk-scale experiment.

Everything runs on the tuning seed with a validation split carved out of its
training records. For each kind and grid point the model is trained for
``--max-epochs`` and the epoch with the lowest validation RMSE is kept. The
printed dictionary is what ``graphcf.desk.DESK_SETTINGS`` holds. Feedback rows
use relevance sampling ranked by an MF fitted with the MF desk settings, so
MF is tuned first.

    python3 benchmarks/tune_desk.py [--kinds MF,SVDPP] [--max-epochs 40]
"""

import argparse
import itertools
import time

import numpy as np

from graphcf.desk import TUNING_SEED, desk_config, desk_data
from graphcf.trainer import train

GRID = {
    "l2": [1e-3, 3e-3, 5e-3],
    "l2_weight": [1e-4, 1e-3],
}
KINDS = ["MF", "SVDPP", "GCF", "W_GCF", "A_GCF", "A_GCF2"]


def grid_for(kind):
    keys = ["l2"] + (["l2_weight"] if kind == "W_GCF" else [])
    for values in itertools.product(*(GRID[k] for k in keys)):
        yield dict(zip(keys, values))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--kinds", default=",".join(KINDS))
    ap.add_argument("--max-epochs", type=int, default=40)
    ap.add_argument("--seed", type=int, default=TUNING_SEED)
    args = ap.parse_args()
    data = desk_data(args.seed, validation=True)
    chosen = {}
    for kind in args.kinds.split(","):
        best = None
        for point in grid_for(kind):
            cfg = desk_config(kind, args.seed, epochs=args.max_epochs, **point)
            start = time.perf_counter()
            _, report = train(data.split, data.tables, cfg)
            curve = np.array(report.test_rmse)
            ep = int(np.argmin(curve)) + 1
            print(f"{kind:7s} {point} best {curve[ep - 1]:.5f} @ {ep:2d} "
                  f"last {curve[-1]:.5f} ({time.perf_counter() - start:.0f}s)", flush=True)
            if best is None or curve[ep - 1] < best[0]:
                best = (curve[ep - 1], {**point, "epochs": ep})
        chosen[kind] = best[1]
        print(f"{kind:7s} chosen {best[1]} validation {best[0]:.5f}", flush=True)
    print("DESK_SETTINGS = {")
    for kind, s in chosen.items():
        print(f"    {kind!r}: dict({', '.join(f'{k}={v!r}' for k, v in s.items())}),")
    print("}")


if __name__ == "__main__":
    main()

"""Compiled vs numpy kernels: scatter-add, top-k selection and one training epoch.

    python benchmarks/bench_kernels.py [--repeat 5] [--records 100000]

Prints the median wall time per backend and the speed-up. Both backends must
produce identical outputs; the script checks that before timing.
"""

import argparse
import statistics
import time

import numpy as np

import graphcf as g
from graphcf import kernels
from graphcf.sampling import FeedbackTables, SamplePolicy, edge_relevance, sample_random


def timed(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def bench_scatter(rng):
    table = np.zeros((2000, 16))
    idx = rng.integers(0, 2000, 256 * 20)
    vals = rng.normal(size=(len(idx), 16))

    def run():
        for _ in range(50):
            kernels.scatter_add_rows(table, idx, vals, -0.05)

    def result():
        out = np.zeros_like(table)
        kernels.scatter_add_rows(out, idx, vals, -0.05)
        return out

    return run, result


def bench_topk(graph, mf):
    indptr, ids, _ = graph.side_csr("user")
    scores = edge_relevance(graph, "user", mf.P, mf.Q)

    def result():
        return kernels.topk_csr(indptr, ids, scores, 20)

    return result, result


def bench_epoch(split, tables, kind):
    cfg = g.TrainConfig(kind, K=16, epochs=1, learning_rate=0.1)

    def result():
        params, _ = g.train(split, tables, cfg)
        return params.blocks["P"]

    return result, result


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--records", type=int, default=100_000)
    args = ap.parse_args()

    available = kernels.backends()
    print(f"backends available: {', '.join(sorted(available))}")
    rng = np.random.default_rng(0)
    ds = g.synthetic_ratings(n_records=args.records, seed=0)
    split = g.split_train_test(ds, 0.8, 0)
    graph = g.build_graph(split.train)
    mf = g.init_params("MF", graph.n_users, graph.n_items, 16, seed=1, init_scale=1.0)
    policy = SamplePolicy("random", 0, 20)
    tables = FeedbackTables(sample_random(graph, "user", policy), sample_random(graph, "item", policy),
                            user_degree=graph.user_degree, item_degree=graph.item_degree)

    cases = {
        "scatter_add x50": bench_scatter(rng),
        "topk_csr (users)": bench_topk(graph, mf),
        "epoch MF": bench_epoch(split, tables, "MF"),
        "epoch GCF": bench_epoch(split, tables, "GCF"),
    }
    print(f"{'case':20s} " + " ".join(f"{b:>10s}" for b in sorted(available)) + "   speed-up")
    for name, (run, result) in cases.items():
        outputs, times = {}, {}
        for backend in sorted(available):
            with kernels.use_backend(backend):
                outputs[backend] = result()
                times[backend] = timed(run, args.repeat)
        ref = outputs["python"]
        if not all(np.array_equal(ref, out) for out in outputs.values()):
            raise SystemExit(f"{name}: backends disagree")
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        cells = " ".join(f"{times[b] * 1e3:8.1f}ms" for b in sorted(available))
        print(f"{name:20s} {cells}   {speed:6.2f}x")


if __name__ == "__main__":
    main()

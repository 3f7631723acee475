"""Recall curves and a tuned prefetch-and-prune pipeline on the topic benchmark.

    python3 scripts/pipeline_benchmark.py --n 500 --queries 200 --target 0.95

Prints recall@{1,5,10} per estimator, then tunes Quadtree -> Flowtree -> Exact
on half of the queries and reports held-out recall and per-stage timings.
"""

import argparse
import json
import time

from w1nns.estimators import METHODS, SearchContext
from w1nns.evaluation import (
    Pipeline,
    exact_neighbors,
    rank_candidates,
    recall_curve,
    run_pipeline,
    splice_flowtree,
    tune_pipeline,
)
from w1nns.synth import topic_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--queries", type=int, default=200)
    ap.add_argument("--s", type=int, default=32)
    ap.add_argument("--d", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--target", type=float, default=0.95)
    ap.add_argument("--report", help="optional JSON output path")
    args = ap.parse_args()

    dataset, queries = topic_benchmark(n=args.n, n_queries=args.queries, s=args.s, d=args.d,
                                       seed=args.seed)
    ctx = SearchContext(dataset, seed=args.seed)
    half = len(queries) // 2
    tuning, held_out = queries[:half], queries[half:]
    t0 = time.perf_counter()
    truth_tune = exact_neighbors(ctx, tuning)
    truth = exact_neighbors(ctx, held_out)
    print(f"exact ground truth: {time.perf_counter() - t0:.1f}s")

    curves = {}
    for name in METHODS:
        est = ctx.estimator(name)
        t0 = time.perf_counter()
        approx = [rank_candidates(est, dataset, q) for q in held_out]
        secs = (time.perf_counter() - t0) / len(held_out)
        curves[name] = recall_curve(truth, approx, [1, 5, 10])
        r = curves[name]
        print(f"{name:>9}: recall@1 {r[1]:.3f}  @5 {r[5]:.3f}  @10 {r[10]:.3f}  "
              f"{secs * 1e3:8.2f} ms/query")

    reports = {}
    for label, p in {
        "quadtree>flowtree>exact": Pipeline.build(("quadtree", None), ("flowtree", None), ("exact", 1)),
        "quadtree>rwmd>exact": Pipeline.build(("quadtree", None), ("rwmd", None), ("exact", 1)),
    }.items():
        tuned = tune_pipeline(p, ctx, tuning, args.target, truth=truth_tune)
        rep = run_pipeline(tuned, ctx, held_out, truth=truth)
        reports[label] = rep.to_dict()
        print(f"{tuned.describe()}: recall@1 {rep.recall_at[1]:.3f}, "
              f"ms/query per stage {[round(t * 1e3, 3) for t in rep.per_query_seconds]}")
        if label == "quadtree>rwmd>exact":
            spliced = splice_flowtree(tuned, 1)
            rep = run_pipeline(spliced, ctx, held_out, truth=truth)
            reports["spliced"] = rep.to_dict()
            print(f"{spliced.describe()}: recall@1 {rep.recall_at[1]:.3f}, "
                  f"ms/query per stage {[round(t * 1e3, 3) for t in rep.per_query_seconds]}")
    if args.report:
        with open(args.report, "w") as fh:
            json.dump({"recall": {k: {str(m): v for m, v in c.items()} for k, c in curves.items()},
                       "pipelines": reports}, fh, indent=2)


if __name__ == "__main__":
    main()

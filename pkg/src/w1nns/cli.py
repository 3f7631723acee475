"""``w1`` command line entry point.

Every output file starts with a header recording the package version, the
seed and a hash of the effective configuration (``#`` comment lines for CSV,
a ``"header"`` object for JSON).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

from . import __version__
from .baselines import DEFAULT_SINKHORN_ETA
from .core import GroundSet, load_distributions, load_ground_set, parse_record, save_distributions, save_ground_set
from .errors import W1Error
from .estimators import METHODS, SearchContext, method_label
from .evaluation import (
    DEFAULT_LATTICE,
    exact_neighbors,
    load_pipeline_spec,
    rank_candidates,
    recall_curve,
    run_pipeline,
    tune_pipeline,
)
from .exact import exact_w1
from .quadtree import DEFAULT_MAX_DEPTH, build_quadtree, load_index, save_index
from .synth import run_model_sweep, sweep_csv, topic_benchmark

_UNHASHED = {"out", "report", "threads", "func", "command"}


def _threads(value) -> int:
    if value is not None:
        return max(1, int(value))
    env = os.environ.get("W1_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _UNHASHED}


def _header(args) -> dict:
    cfg = _config(args)
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return {
        "tool": "w1",
        "command": args.command,
        "version": __version__,
        "seed": getattr(args, "seed", None),
        "config_hash": hashlib.sha256(blob).hexdigest()[:16],
        "config": cfg,
    }


def _write_csv(args, path, header_row, rows) -> None:
    buf = io.StringIO()
    head = _header(args)
    buf.write(f"# w1 {head['command']} version={head['version']} seed={head['seed']} "
              f"config_hash={head['config_hash']}\n")
    buf.write("# config=" + json.dumps(head["config"], sort_keys=True, default=str) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header_row)
    w.writerows(rows)
    _emit(path, buf.getvalue())


def _write_json(args, path, body: dict) -> None:
    doc = {"header": _header(args), **body}
    _emit(path, json.dumps(doc, indent=2, sort_keys=False, default=str) + "\n")


def _emit(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _method_spec(args, method: str) -> dict:
    spec = {"method": method}
    if method.startswith("sinkhorn"):
        spec["iters"] = args.sinkhorn_iters
        spec["eta"] = args.sinkhorn_eta
    return spec


def _context(args, dataset) -> SearchContext:
    index = load_index(args.index) if getattr(args, "index", None) else None
    if index is not None and index.n_points != len(dataset.ground):
        raise W1Error("index and ground set disagree on the number of points")
    return SearchContext(dataset, index=index, seed=args.seed,
                         max_depth=args.max_depth, metric=args.metric)


# ---------------------------------------------------------------------------
# subcommands


def cmd_build(args) -> None:
    ground = load_ground_set(args.ground)
    index = build_quadtree(ground, args.seed, args.max_depth)
    save_index(index, args.out)
    print(f"built quadtree: {index.n_nodes} nodes, height {index.height}, "
          f"{index.n_points} points -> {args.out}", file=sys.stderr)


def cmd_query(args) -> None:
    ground = load_ground_set(args.ground)
    dataset = load_distributions(args.dataset, ground)
    queries = load_distributions(args.queries, ground)
    ctx = _context(args, dataset)
    est = ctx.estimator(_method_spec(args, args.method))
    from .evaluation import _map

    rankings = _map(lambda q: rank_candidates(est, dataset, q), list(queries.distributions),
                    _threads(args.threads))
    rows = []
    for qname, r in zip(queries.names, rankings):
        for rank, (i, sc) in enumerate(zip(r.top(args.top), r.scores[: args.top]), start=1):
            rows.append([qname, rank, dataset.names[i], repr(float(sc))])
    _write_csv(args, args.out, ["query_id", "rank", "dataset_id", "estimate"], rows)


def cmd_exact(args) -> None:
    ground = load_ground_set(args.ground)
    _, a = parse_record(args.a, ground, where="--a")
    _, b = parse_record(args.b, ground, where="--b")
    value, flow = exact_w1(ground, a, b, args.metric)
    print(repr(value))
    if args.flow:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["src", "dst", "mass"])
        for s, t, m in flow.triples():
            w.writerow([ground.tokens[s], ground.tokens[t], repr(m)])


def cmd_eval(args) -> None:
    ground = load_ground_set(args.ground)
    dataset = load_distributions(args.dataset, ground)
    queries = list(load_distributions(args.queries, ground).distributions)
    ctx = _context(args, dataset)
    threads = _threads(args.threads)
    truth = exact_neighbors(ctx, queries, threads)
    ms = [int(m) for m in args.m.split(",")]
    from .evaluation import _map

    rows = []
    for method in args.methods.split(","):
        est = ctx.estimator(_method_spec(args, method.strip()))
        approx = _map(lambda q: rank_candidates(est, dataset, q), queries, threads)
        curve = recall_curve(truth, approx, ms)
        label = method_label(_method_spec(args, method.strip()))
        rows.extend([label, m, f"{r:.6f}"] for m, r in curve.items())
    _write_csv(args, args.out, ["method", "m", "recall"], rows)


def cmd_pipeline(args) -> None:
    pipe, _ = load_pipeline_spec(args.spec)
    ground = load_ground_set(args.ground)
    dataset = load_distributions(args.dataset, ground)
    queries = list(load_distributions(args.queries, ground).distributions)
    ctx = _context(args, dataset)
    report = run_pipeline(pipe, ctx, queries, threads=_threads(args.threads))
    body = report.to_dict()
    body["results"] = [[dataset.names[i] for i in r] for r in report.results]
    _write_json(args, args.report, {"report": body})


def cmd_tune(args) -> None:
    pipe, doc = load_pipeline_spec(args.spec)
    ground = load_ground_set(args.ground)
    dataset = load_distributions(args.dataset, ground)
    tuning = list(load_distributions(args.tuning_queries, ground).distributions)
    ctx = _context(args, dataset)
    lattice = [int(c) for c in args.lattice.split(",")] if args.lattice else DEFAULT_LATTICE
    tuned = tune_pipeline(pipe, ctx, tuning, args.target, lattice=lattice,
                          cost=args.cost, threads=_threads(args.threads))
    _write_json(args, args.out, {"pipeline": tuned.to_dict()})


def cmd_synth(args) -> None:
    Ns = [int(n) for n in args.N.split(",")]
    rows = run_model_sweep(args.d, args.s, args.eps, Ns, args.trials, args.seed, args.max_depth)
    body = sweep_csv(rows).splitlines()
    _write_csv(args, args.out, body[0].split(","), [r.split(",") for r in body[1:]])


def cmd_make_benchmark(args) -> None:
    dataset, queries = topic_benchmark(
        n=args.n, n_queries=args.queries, s=args.s, d=args.d,
        n_points=args.points, seed=args.seed,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_ground_set(dataset.ground, out / "ground.txt", format="text")
    save_distributions(dataset, out / "dataset.txt")
    from .core import Dataset

    half = len(queries) // 2
    for name, qs in (("tuning_queries.txt", queries[:half]), ("queries.txt", queries[half:])):
        save_distributions(Dataset.from_list(dataset.ground, qs, [f"q{i}" for i in range(len(qs))]),
                           out / name)
    print(f"wrote benchmark to {out}", file=sys.stderr)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="w1", description="Approximate nearest neighbours under W1.")
    p.add_argument("--version", action="version", version=f"w1 {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, threads=True):
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--max-depth", type=int, default=DEFAULT_MAX_DEPTH)
        sp.add_argument("--metric", choices=("euclidean", "l1"), default="euclidean")
        if threads:
            sp.add_argument("--threads", type=int, default=None)

    def sinkhorn(sp):
        sp.add_argument("--sinkhorn-iters", type=int, default=3)
        sp.add_argument("--sinkhorn-eta", type=float, default=DEFAULT_SINKHORN_ETA)

    sp = sub.add_parser("build", help="build and save a quadtree index")
    sp.add_argument("--ground", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-depth", type=int, default=DEFAULT_MAX_DEPTH)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_build)

    sp = sub.add_parser("query", help="rank a dataset for each query")
    sp.add_argument("--ground", required=True)
    sp.add_argument("--index")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--queries", required=True)
    sp.add_argument("--method", choices=METHODS, default="flowtree")
    sp.add_argument("--top", type=int, default=10)
    sp.add_argument("--out", default="-")
    common(sp)
    sinkhorn(sp)
    sp.set_defaults(func=cmd_query)

    sp = sub.add_parser("exact", help="exact W1 between two distributions")
    sp.add_argument("--ground", required=True)
    sp.add_argument("--a", required=True, help='record such as "a b" or "a 2.0 b 6.0"')
    sp.add_argument("--b", required=True)
    sp.add_argument("--flow", action="store_true", help="also print the optimal flow as CSV")
    sp.add_argument("--metric", choices=("euclidean", "l1"), default="euclidean")
    sp.set_defaults(func=cmd_exact)

    sp = sub.add_parser("eval", help="recall@m of estimators against exact W1")
    sp.add_argument("--ground", required=True)
    sp.add_argument("--index")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--queries", required=True)
    sp.add_argument("--methods", default="mean,overlap,quadtree,flowtree,rwmd")
    sp.add_argument("--m", default="1,2,5,10,20,50")
    sp.add_argument("--out", default="-")
    common(sp)
    sinkhorn(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("pipeline", help="run a prefetch-and-prune pipeline")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--ground", required=True)
    sp.add_argument("--index")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--queries", required=True)
    sp.add_argument("--report", default="-")
    common(sp)
    sp.set_defaults(func=cmd_pipeline)

    sp = sub.add_parser("tune", help="tune pipeline candidate counts")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--ground", required=True)
    sp.add_argument("--index")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--tuning-queries", required=True)
    sp.add_argument("--target", type=float, default=0.9)
    sp.add_argument("--lattice", help="comma-separated counts for inner stages")
    sp.add_argument("--cost", choices=("measured", "evaluations"), default="measured")
    sp.add_argument("--out", default="-")
    common(sp)
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("synth", help="random sphere model sweep")
    sp.add_argument("--d", type=int, default=10)
    sp.add_argument("--s", type=int, default=10)
    sp.add_argument("--eps", type=float, default=0.25)
    sp.add_argument("--N", default="100,300,1000,3000,10000")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-depth", type=int, default=DEFAULT_MAX_DEPTH)
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("make-benchmark", help="write a synthetic topic benchmark")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--n", type=int, default=500)
    sp.add_argument("--queries", type=int, default=200)
    sp.add_argument("--s", type=int, default=32)
    sp.add_argument("--d", type=int, default=50)
    sp.add_argument("--points", type=int, default=4000)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_make_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (W1Error, ValueError, KeyError, OSError) as exc:
        print(f"w1 {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

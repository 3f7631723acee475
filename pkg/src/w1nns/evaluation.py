"""Ranking, recall@m, and prefetch-and-prune pipelines.

A pipeline is an ordered list of stages.  Stage ``i`` scores the survivors
of stage ``i - 1`` (stage 1 scores the whole dataset) and keeps its
``candidates`` closest; the last stage's count is the final ``k``.
"""

from __future__ import annotations

import itertools
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import HIGHER
from .core import Distribution
from .errors import InfeasiblePipelineError, PipelineStageError
from .estimators import Estimator, SearchContext, method_label, parse_method

P1_GRID = tuple(round(0.90 + 0.01 * i, 2) for i in range(10))
DEFAULT_LATTICE = (2, 3, 4, 5, 6, 8, 10, 12, 16, 20, 24, 32, 48, 64, 96, 128)


@dataclass(frozen=True)
class Ranking:
    """Dataset ids ordered closest first, with their raw scores."""

    query_id: object
    ids: np.ndarray
    scores: np.ndarray

    def top(self, m: int) -> np.ndarray:
        return self.ids[: max(m, 0)]

    def rank_of(self, item: int) -> int:
        """1-based position of ``item`` (len + 1 if absent)."""
        hit = np.flatnonzero(self.ids == item)
        return int(hit[0]) + 1 if hit.size else self.ids.size + 1


def order_scores(scores: np.ndarray, ids: np.ndarray, direction: str) -> np.ndarray:
    """Permutation sorting closest first; ties by ascending dataset id."""
    key = -scores if direction == HIGHER else scores
    return np.lexsort((ids, key))


def rank_candidates(
    estimator: Estimator, dataset, query: Distribution, restrict=None, query_id=None
) -> Ranking:
    if restrict is None:
        ids = np.arange(dataset.n)
    else:
        ids = np.unique(np.asarray(list(restrict), dtype=np.int64))
        if ids.size == 0:
            raise ValueError("empty restriction set")
        if ids[0] < 0 or ids[-1] >= dataset.n:
            raise ValueError("restriction contains ids outside the dataset")
    scores = np.asarray(estimator.score(query, ids), dtype=np.float64)
    order = order_scores(scores, ids, estimator.direction)
    return Ranking(query_id, ids[order], scores[order])


def exact_neighbors(ctx: SearchContext, queries: Sequence[Distribution], threads: int = 1):
    """Exact ranking of the whole dataset for every query."""
    est = ctx.estimator("exact")
    return _map(lambda q: rank_candidates(est, ctx.dataset, q[1], query_id=q[0]),
                list(enumerate(queries)), threads)


def recall_at_m(truth, approx, m: int) -> float:
    """Fraction of queries whose exact nearest neighbour is in ``approx``'s top ``m``.

    Accepts single rankings or equal-length sequences of them.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if isinstance(truth, Ranking):
        truth, approx = [truth], [approx]
    if len(truth) != len(approx) or not truth:
        raise ValueError("need one approximate ranking per truth ranking")
    hits = 0
    for t, a in zip(truth, approx):
        mm = min(m, a.ids.size)
        hits += int(t.ids[0] in a.ids[:mm])
    return hits / len(truth)


def recall_curve(truth, approx, ms) -> dict[int, float]:
    return {int(m): recall_at_m(truth, approx, int(m)) for m in ms}


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# pipelines


@dataclass(frozen=True)
class Stage:
    method: dict
    candidates: int | None = None

    @classmethod
    def of(cls, method, candidates=None) -> "Stage":
        return cls(parse_method(method), candidates)

    @property
    def label(self) -> str:
        return method_label(self.method)


@dataclass(frozen=True)
class Pipeline:
    stages: tuple[Stage, ...]

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ValueError("pipeline needs at least one stage")

    @classmethod
    def build(cls, *stages) -> "Pipeline":
        """``Pipeline.build(("quadtree", 424), ("flowtree", 10), ("exact", 1))``."""
        return cls(tuple(Stage.of(m, c) for m, c in stages))

    @property
    def final_k(self) -> int | None:
        return self.stages[-1].candidates

    @property
    def counts(self) -> list[int | None]:
        return [s.candidates for s in self.stages]

    def is_complete(self) -> bool:
        return all(c is not None for c in self.counts)

    def validate(self) -> None:
        if not self.is_complete():
            raise ValueError("pipeline has unset candidate counts")
        c = self.counts
        if c[-1] < 1:
            raise ValueError("final_k must be >= 1")
        inner = c[:-1]
        if any(a <= b for a, b in zip(inner, inner[1:])):
            raise ValueError(f"candidate counts must strictly decrease: {c}")
        if inner and inner[-1] < c[-1]:
            raise ValueError(f"last pruning count is below final_k: {c}")

    def with_counts(self, counts) -> "Pipeline":
        return Pipeline(tuple(replace(s, candidates=c) for s, c in zip(self.stages, counts)))

    def describe(self) -> str:
        return " -> ".join(f"{s.label}({s.candidates})" for s in self.stages)

    def to_dict(self) -> dict:
        stages = []
        for s in self.stages:
            d = dict(s.method)
            d["candidates"] = s.candidates
            stages.append(d)
        return {"final_k": self.final_k, "stages": stages}

    @classmethod
    def from_dict(cls, obj: dict) -> "Pipeline":
        stages = [Stage.of(d, d.get("candidates")) for d in obj["stages"]]
        if obj.get("final_k") is not None:
            stages[-1] = replace(stages[-1], candidates=int(obj["final_k"]))
        return cls(tuple(stages))


def load_pipeline_spec(path) -> tuple[Pipeline, dict]:
    """Read a JSON pipeline spec; returns the pipeline and the raw document.

    Accepts a bare spec or the output of ``w1 tune`` (spec under ``"pipeline"``).
    """
    doc = json.loads(Path(path).read_text())
    if "stages" not in doc and isinstance(doc.get("pipeline"), dict):
        doc = doc["pipeline"]
    if not isinstance(doc.get("stages"), list):
        raise ValueError(f"{path}: pipeline spec needs a 'stages' list")
    return Pipeline.from_dict(doc), doc


def splice_flowtree(p: Pipeline, position: int) -> Pipeline:
    """Insert a Flowtree stage before ``stages[position]``.

    Its count is ``max(10, 2 * c)`` where ``c`` is the output count of the
    stage that follows it.
    """
    if not 1 <= position < len(p.stages):
        raise ValueError("flowtree must go after the first stage")
    nxt = p.stages[position].candidates
    if nxt is None:
        raise ValueError("following stage has no candidate count")
    stage = Stage.of("flowtree", max(10, 2 * nxt))
    return Pipeline(p.stages[:position] + (stage,) + p.stages[position:])


@dataclass
class EvalReport:
    pipeline: dict
    n_queries: int
    recall_at: dict[int, float]
    stage_labels: list[str]
    stage_seconds: list[float]
    stage_evaluations: list[int]
    results: list[list[int]] = field(default_factory=list)
    traces: list[list[list[int]]] | None = None

    @property
    def per_query_seconds(self) -> list[float]:
        return [t / max(self.n_queries, 1) for t in self.stage_seconds]

    @property
    def per_evaluation_seconds(self) -> list[float]:
        return [t / max(e, 1) for t, e in zip(self.stage_seconds, self.stage_evaluations)]

    def to_dict(self, with_timing: bool = True) -> dict:
        d = asdict(self)
        d["recall_at"] = {str(k): v for k, v in self.recall_at.items()}
        if with_timing:
            d["per_query_seconds"] = self.per_query_seconds
            d["per_evaluation_seconds"] = self.per_evaluation_seconds
        else:
            d.pop("stage_seconds")
        if self.traces is None:
            d.pop("traces")
        return d


def _run_one(p: Pipeline, ctx: SearchContext, query: Distribution, trace: bool):
    survivors = None
    seconds = []
    evals = []
    kept = []
    for stage in p.stages:
        est = ctx.estimator(stage.method)
        t0 = time.perf_counter()
        try:
            r = rank_candidates(est, ctx.dataset, query, restrict=survivors)
        except Exception as exc:
            raise PipelineStageError(len(seconds) + 1, stage.label, exc) from exc
        seconds.append(time.perf_counter() - t0)
        evals.append(r.ids.size)
        survivors = r.top(stage.candidates)
        if trace:
            kept.append(survivors.tolist())
    return survivors, seconds, evals, kept


def run_pipeline(
    p: Pipeline,
    ctx: SearchContext,
    queries: Sequence[Distribution],
    truth: Sequence[Ranking] | None = None,
    threads: int = 1,
    trace: bool = False,
) -> EvalReport:
    """Run ``p`` on every query and score it against the exact neighbours."""
    p.validate()
    if truth is None:
        truth = exact_neighbors(ctx, queries, threads)
    out = _map(lambda q: _run_one(p, ctx, q, trace), list(queries), threads)
    k = p.final_k
    approx = [Ranking(i, o[0], np.zeros(o[0].size)) for i, o in enumerate(out)]
    recall = recall_curve(truth, approx, range(1, k + 1))
    n_stages = len(p.stages)
    return EvalReport(
        pipeline=p.to_dict(),
        n_queries=len(queries),
        recall_at=recall,
        stage_labels=[s.label for s in p.stages],
        stage_seconds=[sum(o[1][i] for o in out) for i in range(n_stages)],
        stage_evaluations=[sum(o[2][i] for o in out) for i in range(n_stages)],
        results=[o[0].tolist() for o in out],
        traces=[o[3] for o in out] if trace else None,
    )


# ---------------------------------------------------------------------------
# tuning


class _ScoreCache:
    """Memoized per-(stage, query, item) scores plus per-evaluation timing."""

    def __init__(self, ctx, stages, queries):
        self.ctx = ctx
        self.queries = queries
        self.ests = [ctx.estimator(s.method) for s in stages]
        self.memo = [[{} for _ in queries] for _ in stages]
        self.seconds = [0.0] * len(stages)
        self.count = [0] * len(stages)

    def rank(self, stage: int, q: int, ids: np.ndarray) -> np.ndarray:
        memo = self.memo[stage][q]
        missing = np.array([i for i in ids.tolist() if i not in memo], dtype=np.int64)
        if missing.size:
            t0 = time.perf_counter()
            sc = self.ests[stage].score(self.queries[q], missing)
            self.seconds[stage] += time.perf_counter() - t0
            self.count[stage] += missing.size
            memo.update(zip(missing.tolist(), sc.tolist()))
        scores = np.array([memo[i] for i in ids.tolist()])
        return ids[order_scores(scores, ids, self.ests[stage].direction)]

    def unit_cost(self, stage: int) -> float:
        return self.seconds[stage] / max(self.count[stage], 1)


def first_stage_counts(ranks: np.ndarray, levels=P1_GRID) -> list[int]:
    """Smallest count reaching each first-stage recall level.

    ``ranks`` holds the 1-based position of the true neighbour per query.
    """
    ranks = np.sort(np.asarray(ranks))
    q = ranks.size
    out = []
    for p in levels:
        need = int(np.ceil(p * q - 1e-9))
        out.append(int(ranks[max(need, 1) - 1]))
    return sorted(set(out))


def tune_pipeline(
    p: Pipeline,
    ctx: SearchContext,
    tuning_queries: Sequence[Distribution],
    target_recall: float = 0.9,
    lattice: Sequence[int] = DEFAULT_LATTICE,
    truth: Sequence[Ranking] | None = None,
    cost: str = "measured",
    threads: int = 1,
) -> Pipeline:
    """Pick candidate counts meeting ``target_recall`` at minimal cost.

    Unset (``None``) counts are searched: the first stage over the counts
    reaching first-stage recall 0.90, 0.91, ..., 0.99 on the tuning queries,
    later stages over ``lattice``.  ``cost="measured"`` weighs each stage's
    evaluations by its measured time per evaluation; ``cost="evaluations"``
    counts evaluations only (fully deterministic).  The tuning queries must
    be disjoint from any evaluation queries.
    """
    if not 0 < target_recall <= 1:
        raise ValueError("target_recall must be in (0, 1]")
    k = p.final_k
    if k is None or k < 1:
        raise ValueError("the final stage needs a candidate count (final_k)")
    queries = list(tuning_queries)
    if truth is None:
        truth = exact_neighbors(ctx, queries, threads)
    nn = [int(t.ids[0]) for t in truth]
    n = ctx.dataset.n
    cache = _ScoreCache(ctx, p.stages, queries)

    everything = np.arange(n)
    first = [cache.rank(0, qi, everything) for qi in range(len(queries))]

    options: list[list[int]] = []
    for si, stage in enumerate(p.stages[:-1]):
        if stage.candidates is not None:
            options.append([stage.candidates])
        elif si == 0:
            ranks = np.array([int(np.flatnonzero(f == t)[0]) + 1 for f, t in zip(first, nn)])
            options.append(first_stage_counts(ranks))
        else:
            options.append([c for c in lattice if c < n])
    options.append([k])

    def evaluate(counts):
        hits = 0
        work = [0] * len(counts)
        for qi in range(len(queries)):
            surv = first[qi][: counts[0]]
            work[0] += n
            for si in range(1, len(counts)):
                work[si] += surv.size
                surv = cache.rank(si, qi, surv)[: counts[si]]
            hits += int(nn[qi] in surv)
        return hits / len(queries), work

    feasible = []
    best_recall = 0.0
    for counts in itertools.product(*options):
        inner = counts[:-1]
        if any(a <= b for a, b in zip(inner, inner[1:])):
            continue
        if inner and inner[-1] < k:
            continue
        recall, work = evaluate(list(counts))
        best_recall = max(best_recall, recall)
        if recall + 1e-12 >= target_recall:
            feasible.append((work, list(counts)))
    if not feasible:
        raise InfeasiblePipelineError(
            f"no configuration reaches recall {target_recall:.3f}; best achieved {best_recall:.3f}"
        )
    # unit costs are final only once every configuration has been scored
    best = min(feasible, key=lambda f: (_cost(f[0], cache, cost), f[1]))
    return p.with_counts(best[1])


def _cost(work, cache: _ScoreCache, mode: str) -> float:
    if mode == "evaluations":
        return float(sum(work))
    if mode == "measured":
        return sum(w * cache.unit_cost(i) for i, w in enumerate(work))
    raise ValueError(f"unknown cost mode {mode!r}")

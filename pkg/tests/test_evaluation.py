import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from w1nns.baselines import (
    HIGHER,
    mean_estimate,
    overlap_score,
    rwmd_estimate,
    sinkhorn_estimate,
    tfidf_score,
)
from w1nns.core import Dataset, Distribution, GroundSet
from w1nns.errors import InfeasiblePipelineError, PipelineStageError
from w1nns.estimators import METHODS, SearchContext, method_label, parse_method
from w1nns.evaluation import (
    Pipeline,
    Ranking,
    exact_neighbors,
    first_stage_counts,
    load_pipeline_spec,
    order_scores,
    rank_candidates,
    recall_at_m,
    recall_curve,
    run_pipeline,
    splice_flowtree,
    tune_pipeline,
)
from w1nns.exact import exact_w1
from w1nns.flowtree import flowtree_estimate
from w1nns.quadtree import quadtree_distance
from w1nns.synth import topic_benchmark


@pytest.fixture(scope="module")
def bench():
    dataset, queries = topic_benchmark(n=200, n_queries=40, s=12, d=8, n_points=600, seed=3)
    return dataset, queries


@pytest.fixture(scope="module")
def ctx(bench):
    return SearchContext(bench[0], seed=11)


@pytest.fixture(scope="module")
def truth(ctx, bench):
    return exact_neighbors(ctx, bench[1])


def test_batched_scores_match_pairwise(ctx, bench):
    dataset, queries = bench
    idx = ctx.get_index()
    g = dataset.ground
    pairwise = {
        "mean": lambda x, q: mean_estimate(g, x, q).value,
        "overlap": lambda x, q: overlap_score(x, q).value,
        "tfidf": lambda x, q: tfidf_score(ctx.idf, x, q).value,
        "quadtree": lambda x, q: quadtree_distance(idx, x, q),
        "flowtree": lambda x, q: flowtree_estimate(idx, g, x, q),
        "rwmd": lambda x, q: rwmd_estimate(g, x, q).value,
        "sinkhorn": lambda x, q: sinkhorn_estimate(g, x, q, 3, 30.0).value,
        "exact": lambda x, q: exact_w1(g, x, q)[0],
    }
    assert set(pairwise) == set(METHODS)
    ids = np.array([0, 5, 17, 199, 42])
    for name, fn in pairwise.items():
        got = ctx.estimator(name).score(queries[0], ids)
        want = [fn(dataset[i], queries[0]) for i in ids]
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12, err_msg=name)


def test_parse_method():
    assert parse_method("sinkhorn-3") == {"method": "sinkhorn", "iters": 3, "eta": 30.0}
    assert parse_method({"method": "flowtree", "candidates": 9}) == {"method": "flowtree"}
    assert method_label({"method": "sinkhorn", "iters": 1}) == "sinkhorn-1"
    with pytest.raises(ValueError):
        parse_method("act")


def test_query_in_dataset_ranks_first(ctx, bench):
    dataset, _ = bench
    r = rank_candidates(ctx.estimator("exact"), dataset, dataset[7])
    assert r.ids[0] == 7 and r.scores[0] == pytest.approx(0.0, abs=1e-12)


def test_two_item_mean_ranking():
    g = GroundSet.from_array(np.array([[0.0], [1.0], [4.0], [10.0]]))
    ds = Dataset.from_list(g, [Distribution.uniform([2, 3]), Distribution.uniform([0, 1])])
    q = Distribution.point_mass(0)
    # means 7.0 and 0.5 against 0.0
    r = rank_candidates(SearchContext(ds).estimator("mean"), ds, q)
    assert r.ids.tolist() == [1, 0]
    np.testing.assert_allclose(r.scores, [0.5, 7.0])


def test_restriction(ctx, bench):
    dataset, queries = bench
    r = rank_candidates(ctx.estimator("flowtree"), dataset, queries[0], restrict={13})
    assert r.ids.tolist() == [13]
    with pytest.raises(ValueError):
        rank_candidates(ctx.estimator("flowtree"), dataset, queries[0], restrict=[])


def test_ties_break_by_id():
    scores = np.array([1.0, 0.5, 1.0, 0.5])
    ids = np.array([9, 7, 3, 8])
    assert ids[order_scores(scores, ids, "lower-is-closer")].tolist() == [7, 8, 3, 9]
    assert ids[order_scores(scores, ids, HIGHER)].tolist() == [3, 9, 7, 8]


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=30))
def test_direction_flip_gives_same_ranking(vals):
    scores = np.array(vals, dtype=float)
    ids = np.arange(scores.size)
    up = ids[order_scores(scores, ids, HIGHER)]
    down = ids[order_scores(-scores, ids, "lower-is-closer")]
    np.testing.assert_array_equal(up, down)


def test_recall_basics():
    t = Ranking(0, np.array([4, 2, 9]), np.zeros(3))
    assert recall_at_m(t, t, 1) == 1.0
    rev = Ranking(0, t.ids[::-1], np.zeros(3))
    assert recall_at_m(t, rev, 1) == 0.0
    assert recall_at_m(t, rev, 3) == 1.0
    with pytest.raises(ValueError):
        recall_at_m(t, t, 0)


def test_recall_non_decreasing(ctx, bench, truth):
    dataset, queries = bench
    for name in METHODS:
        approx = [rank_candidates(ctx.estimator(name), dataset, q) for q in queries]
        curve = list(recall_curve(truth, approx, range(1, 41)).values())
        assert all(a <= b for a, b in zip(curve, curve[1:])), name


def test_threads_do_not_change_rankings(ctx, bench):
    _, queries = bench
    p = Pipeline.build(("quadtree", 30), ("flowtree", 5), ("exact", 2))
    one = run_pipeline(p, ctx, queries, threads=1)
    four = run_pipeline(p, ctx, queries, threads=4)
    assert one.results == four.results
    assert one.to_dict(with_timing=False) == four.to_dict(with_timing=False)


def test_pipeline_validation():
    with pytest.raises(ValueError):
        Pipeline(())
    with pytest.raises(ValueError):
        Pipeline.build(("quadtree", 10), ("flowtree", 20), ("exact", 1)).validate()
    with pytest.raises(ValueError):
        Pipeline.build(("quadtree", 10), ("exact", None)).validate()
    with pytest.raises(ValueError):
        Pipeline.build(("quadtree", 2), ("exact", 5)).validate()
    p = Pipeline.build(("quadtree", 424), ("flowtree", 10), ("sinkhorn-3", 3), ("exact", 1))
    p.validate()
    assert p.final_k == 1
    assert p.describe() == "quadtree(424) -> flowtree(10) -> sinkhorn-3(3) -> exact(1)"


def test_single_stage_is_plain_ranking(ctx, bench):
    dataset, queries = bench
    rep = run_pipeline(Pipeline.build(("rwmd", 5)), ctx, queries[:5])
    for q, res in zip(queries[:5], rep.results):
        assert res == rank_candidates(ctx.estimator("rwmd"), dataset, q).top(5).tolist()


def test_exact_final_stage_finds_surviving_nn(ctx, bench, truth):
    _, queries = bench
    p = Pipeline.build(("quadtree", 60), ("exact", 1))
    rep = run_pipeline(p, ctx, queries, truth=truth, trace=True)
    for t, tr, res in zip(truth, rep.traces, rep.results):
        if t.ids[0] in tr[0]:
            assert res == [t.ids[0]]
    # an exact final stage never lowers recall@final_k
    plain = run_pipeline(Pipeline.build(("quadtree", 60)), ctx, queries, truth=truth)
    assert rep.recall_at[1] >= plain.recall_at[1]
    assert rep.stage_evaluations == [200 * len(queries), 60 * len(queries)]


def test_stage_errors_name_the_stage(bench):
    dataset, queries = bench
    ctx = SearchContext(dataset)
    p = Pipeline.build(("quadtree", 10), ({"method": "exact", "size_limit": 1}, 1))
    with pytest.raises(PipelineStageError, match=r"stage 2 \(exact\)"):
        run_pipeline(p, ctx, queries[:2], truth=exact_neighbors(ctx, queries[:2]))


def test_spec_round_trip(tmp_path):
    p = Pipeline.build(("quadtree", None), ("flowtree", None), ("exact", 1))
    (tmp_path / "p.json").write_text(json.dumps(p.to_dict()))
    back, _ = load_pipeline_spec(tmp_path / "p.json")
    assert back == p
    (tmp_path / "wrapped.json").write_text(json.dumps({"header": {}, "pipeline": p.to_dict()}))
    assert load_pipeline_spec(tmp_path / "wrapped.json")[0] == p


def test_splice_flowtree():
    p = Pipeline.build(("quadtree", 424), ("sinkhorn-3", 3), ("exact", 1))
    assert splice_flowtree(p, 1).counts == [424, 10, 3, 1]
    q = Pipeline.build(("quadtree", 400), ("rwmd", 30), ("exact", 1))
    assert splice_flowtree(q, 1).counts == [400, 60, 30, 1]
    with pytest.raises(ValueError):
        splice_flowtree(p, 0)


def test_first_stage_counts():
    ranks = np.arange(1, 101)
    assert first_stage_counts(ranks) == list(range(90, 100))
    assert first_stage_counts(np.ones(10, dtype=int)) == [1]


def test_tune_exact_only_is_trivial(ctx, bench, truth):
    _, queries = bench
    p = Pipeline.build(("exact", 1))
    assert tune_pipeline(p, ctx, queries, 0.9, truth=truth) == p


def test_tune_two_stage_picks_minimal_count(ctx, bench, truth):
    dataset, queries = bench
    p = Pipeline.build(("quadtree", None), ("exact", 1))
    tuned = tune_pipeline(p, ctx, queries, 0.9, truth=truth, cost="evaluations")
    c1 = tuned.counts[0]
    # exhaustive: end-to-end recall of quadtree(c) -> exact(1) for every c
    ranks = [rank_candidates(ctx.estimator("quadtree"), dataset, q) for q in queries]

    def recall(c):
        return np.mean([t.ids[0] in r.top(c) for t, r in zip(truth, ranks)])

    feasible = [c for c in range(1, dataset.n + 1) if recall(c) >= 0.9]
    assert c1 == min(feasible)
    assert run_pipeline(tuned, ctx, queries, truth=truth).recall_at[1] >= 0.9


def test_tune_three_stage_reaches_target(ctx, bench, truth):
    _, queries = bench
    p = Pipeline.build(("quadtree", None), ("flowtree", None), ("exact", 1))
    tuned = tune_pipeline(p, ctx, queries, 0.9, truth=truth, lattice=(2, 4, 8, 16, 32))
    tuned.validate()
    assert run_pipeline(tuned, ctx, queries, truth=truth).recall_at[1] >= 0.9


def test_tune_infeasible_reports_best(ctx, bench, truth):
    _, queries = bench
    p = Pipeline.build(("overlap", 1), ("exact", 1))
    with pytest.raises(InfeasiblePipelineError, match="best achieved"):
        tune_pipeline(p, ctx, queries, 1.0, truth=truth)


def test_tune_rejects_bad_target(ctx, bench):
    with pytest.raises(ValueError):
        tune_pipeline(Pipeline.build(("exact", 1)), ctx, bench[1], 0.0)

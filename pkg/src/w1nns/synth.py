"""Synthetic data: the planted random sphere model and a topic benchmark.

In the sphere model the ground set is ``N`` uniform points on the unit
sphere, the dataset is every uniform distribution over ``s`` of them, and a
query perturbs each point of a planted support inside an ``eps``-cap.  The
dataset has ``C(N, s)`` members, so a trial is scored from the tree cells
and tree flow around the planted pairs rather than by enumerating it.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import Dataset, Distribution, GroundSet
from .flowtree import tree_flow
from .quadtree import DEFAULT_MAX_DEPTH, QuadtreeIndex, build_quadtree


def sphere_points(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def sample_cap(rng: np.random.Generator, center: np.ndarray, eps: float) -> np.ndarray:
    """Uniform point on the unit sphere within chordal distance ``eps`` of ``center``.

    Writes ``y = cos(t) x + sin(t) u`` with ``u`` a uniform tangent direction;
    the polar angle has density proportional to ``sin(t)**(d-2)`` on
    ``[0, t_max]`` and is drawn by rejection from the ``t**(d-2)`` envelope.
    """
    d = center.size
    if eps <= 0:
        return center.copy()
    t_max = 2.0 * np.arcsin(min(eps / 2.0, 1.0))
    while True:
        t = t_max * rng.random() ** (1.0 / (d - 1))
        accept = (np.sin(t) / t) ** (d - 2) if t > 0 else 1.0
        if rng.random() > accept:
            continue
        u = rng.standard_normal(d)
        u -= (u @ center) * center
        nrm = np.linalg.norm(u)
        if nrm == 0:
            continue
        y = np.cos(t) * center + np.sin(t) * (u / nrm)
        y /= np.linalg.norm(y)
        if np.linalg.norm(y - center) <= eps:
            return y


@dataclass(frozen=True, eq=False)
class PlantedInstance:
    """Ground = ``N`` sphere points followed by the ``s`` perturbed query points."""

    ground: GroundSet
    n_base: int
    planted_ids: np.ndarray
    query_ids: np.ndarray
    raw_points: np.ndarray
    epsilon: float

    @property
    def planted(self) -> Distribution:
        return Distribution.uniform(self.planted_ids)

    @property
    def query(self) -> Distribution:
        return Distribution.uniform(self.query_ids)


def generate_instance(N: int, d: int, s: int, epsilon: float, seed) -> PlantedInstance:
    if not N >= s >= 1:
        raise ValueError("need N >= s >= 1")
    if d < 2:
        raise ValueError("need d >= 2")
    if not 0 <= epsilon < 2:
        raise ValueError("epsilon must be in [0, 2)")
    rng = np.random.default_rng(seed)
    base = sphere_points(rng, N, d)
    planted = np.sort(rng.choice(N, size=s, replace=False))
    ys = np.stack([sample_cap(rng, base[k], epsilon) for k in planted])
    raw = np.vstack([base, ys])
    return PlantedInstance(
        ground=GroundSet.from_array(raw),
        n_base=N,
        planted_ids=planted,
        query_ids=np.arange(N, N + s),
        raw_points=raw,
        epsilon=float(epsilon),
    )


def planted_is_unique_nn(inst: PlantedInstance, tol: float = 1e-12) -> bool:
    """Whether the planted matching beats every other ``s``-subset in exact W1.

    W1 between uniform ``s``-point measures is a min-cost perfect matching,
    so the best competitor is an assignment of the query points into the
    ground set that avoids at least one planted point.
    """
    xs, ys = inst.planted_ids, inst.query_ids
    base = inst.raw_points[: inst.n_base]
    cost = np.linalg.norm(inst.raw_points[ys][:, None, :] - base[None, :, :], axis=-1)
    planted = cost[np.arange(xs.size), xs].sum()
    if inst.n_base == xs.size:
        return True
    for x in xs:
        cost_x = cost.copy()
        cost_x[:, x] = np.inf
        r, c = linear_sum_assignment(cost_x)
        if cost_x[r, c].sum() <= planted + tol:
            return False
    return True


def trial_success(inst: PlantedInstance, index: QuadtreeIndex) -> tuple[bool, bool]:
    """(quadtree_ok, flowtree_ok) for one planted query.

    ``H_k`` is the smallest cell holding both ``x_k`` and ``y_k``.  Quadtree
    succeeds iff no ``H_k`` holds a ground point other than ``x_k`` (a second
    one ties or beats the planted support; ties count as failures).  Flowtree
    succeeds iff the greedy tree flow between the planted support and the
    query is the planted matching, so its estimate equals the true distance.
    Both also require the planted support to be the unique exact nearest
    neighbour.  Quadtree success implies Flowtree success.
    """
    if index.n_points != len(inst.ground):
        raise ValueError("index was not built over this instance")
    anc = index.ancestors
    xs, ys = inst.planted_ids, inst.query_ids
    q_ok = True
    for x, y in zip(xs, ys):
        px, py = anc[x], anc[y]
        dep = int(np.sum((px == py) & (px >= 0))) - 1
        inside = anc[: inst.n_base, dep] == px[dep]
        if inside.sum() > 1:
            q_ok = False
            break
    flow = tree_flow(index, inst.planted, inst.query)
    pairs = set(zip(flow.src.tolist(), flow.dst.tolist()))
    f_ok = pairs == set(zip(xs.tolist(), ys.tolist()))
    if (q_ok or f_ok) and not planted_is_unique_nn(inst):
        return False, False
    return q_ok and f_ok, f_ok


def run_model_sweep(
    d: int,
    s: int,
    epsilon: float,
    N_values,
    trials: int,
    seed: int = 0,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> list[tuple[int, float, float]]:
    """Success rates of Quadtree and Flowtree per ``N``.

    Each trial draws a fresh instance and a fresh tree shift from streams
    keyed by ``(seed, N, trial)``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rows = []
    for N in N_values:
        q_hits = f_hits = 0
        for t in range(trials):
            ss = np.random.SeedSequence([int(seed), int(N), t])
            inst_seed, tree_seed = ss.spawn(2)
            inst = generate_instance(int(N), d, s, epsilon, inst_seed)
            tseed = int(tree_seed.generate_state(1, np.uint64)[0])
            idx = build_quadtree(inst.ground, tseed, max_depth)
            q_ok, f_ok = trial_success(inst, idx)
            q_hits += q_ok
            f_hits += f_ok
        rows.append((int(N), q_hits / trials, f_hits / trials))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "quadtree_rate", "flowtree_rate"])
    for N, q, f in rows:
        w.writerow([N, f"{q:.6f}", f"{f:.6f}"])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# topic benchmark for recall and pipeline experiments


def topic_benchmark(
    n: int = 500,
    n_queries: int = 200,
    s: int = 32,
    d: int = 50,
    n_points: int = 4000,
    n_topics: int = 25,
    topic_share: float = 0.7,
    seed: int = 0,
):
    """Clustered ground set with bag-of-points documents.

    Points come from a Gaussian mixture with ``n_topics`` components.  Each
    document picks a topic and draws ``topic_share`` of its ``s`` support
    points from that topic's cluster and the rest uniformly; queries are
    drawn the same way.  Returns ``(dataset, queries)``.
    """
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_topics, d)) * 2.0
    labels = rng.integers(0, n_topics, size=n_points)
    pts = centers[labels] + rng.standard_normal((n_points, d))
    members = [np.flatnonzero(labels == t) for t in range(n_topics)]
    ground = GroundSet.from_array(pts)

    def doc():
        t = rng.integers(n_topics)
        k = min(int(round(topic_share * s)), members[t].size)
        ids = set(rng.choice(members[t], size=k, replace=False).tolist())
        while len(ids) < s:
            ids.add(int(rng.integers(n_points)))
        return Distribution.uniform(sorted(ids))

    dataset = Dataset.from_list(ground, [doc() for _ in range(n)])
    queries = [doc() for _ in range(n_queries)]
    return dataset, queries

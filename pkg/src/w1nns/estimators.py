"""Batched estimators that score one query against many dataset items.

Every estimator exposes ``direction`` and ``score(query, ids) -> ndarray``;
scores agree with the pairwise functions in ``baselines``, ``quadtree``,
``flowtree`` and ``exact``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numba
import numpy as np
import scipy.sparse as sp

from . import baselines
from .baselines import HIGHER, LOWER
from .core import Dataset, Distribution, GroundSet
from .exact import DEFAULT_SIZE_LIMIT, exact_w1
from .flowtree import METRICS, _flowtree_cost
from .quadtree import DEFAULT_MAX_DEPTH, QuadtreeIndex, build_quadtree, node_masses

METHODS = ("mean", "overlap", "tfidf", "quadtree", "flowtree", "rwmd", "sinkhorn", "exact")


@dataclass
class SearchContext:
    """Dataset plus the lazily built shared structures estimators need."""

    dataset: Dataset
    index: QuadtreeIndex | None = None
    seed: int = 0
    max_depth: int = DEFAULT_MAX_DEPTH
    metric: str = "euclidean"
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def ground(self) -> GroundSet:
        return self.dataset.ground

    def get_index(self) -> QuadtreeIndex:
        if self.index is None:
            self.index = build_quadtree(self.ground, self.seed, self.max_depth)
        return self.index

    @cached_property
    def idf(self) -> baselines.IdfTable:
        return baselines.build_idf(self.dataset)

    def estimator(self, spec) -> "Estimator":
        spec = parse_method(spec)
        key = tuple(sorted(spec.items()))
        if key not in self._cache:
            self._cache[key] = make_estimator(spec, self)
        return self._cache[key]


def parse_method(spec) -> dict[str, Any]:
    """Normalize ``"sinkhorn-3"`` / ``{"method": ...}`` into a params dict."""
    if isinstance(spec, str):
        spec = {"method": spec}
    spec = {k: v for k, v in dict(spec).items() if k != "candidates"}
    name = str(spec["method"]).lower()
    m = re.fullmatch(r"sinkhorn-(\d+)", name)
    if m:
        name = "sinkhorn"
        spec.setdefault("iters", int(m.group(1)))
    if name not in METHODS:
        raise ValueError(f"unknown method {spec['method']!r}; expected one of {METHODS}")
    spec["method"] = name
    if name == "sinkhorn":
        spec["iters"] = int(spec.get("iters", 3))
        spec["eta"] = float(spec.get("eta", baselines.DEFAULT_SINKHORN_ETA))
    return spec


def method_label(spec) -> str:
    spec = parse_method(spec)
    if spec["method"] == "sinkhorn":
        return f"sinkhorn-{spec['iters']}"
    return spec["method"]


class Estimator:
    name = "estimator"
    direction = LOWER

    def __init__(self, ctx: SearchContext):
        self.ctx = ctx
        self.dataset = ctx.dataset
        self.ground = ctx.ground

    def score(self, query: Distribution, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        return np.array([self.pair(self.dataset[i], query) for i in ids], dtype=np.float64)

    def pair(self, item: Distribution, query: Distribution) -> float:
        raise NotImplementedError


class MeanEstimator(Estimator):
    name = "mean"

    def __init__(self, ctx):
        super().__init__(ctx)
        pts = self.ground.points
        self.means = np.stack([d.masses @ pts[d.ids] for d in self.dataset.distributions])

    def score(self, query, ids):
        diff = self.means[np.asarray(ids, dtype=np.int64)] - query.masses @ self.ground.points[query.ids]
        if self.ctx.metric == "l1":
            return np.abs(diff).sum(axis=1)
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _row_matrix(dataset: Dataset, values) -> sp.csr_matrix:
    rows = np.concatenate([np.full(d.support_size, i) for i, d in enumerate(dataset.distributions)])
    cols = np.concatenate([d.ids for d in dataset.distributions])
    vals = np.concatenate([values(d) for d in dataset.distributions])
    return sp.csr_matrix((vals, (rows, cols)), shape=(dataset.n, len(dataset.ground)))


class OverlapEstimator(Estimator):
    name = "overlap"
    direction = HIGHER

    def __init__(self, ctx):
        super().__init__(ctx)
        self.incidence = _row_matrix(self.dataset, lambda d: np.ones(d.support_size))

    def score(self, query, ids):
        sub = self.incidence[np.asarray(ids, dtype=np.int64)][:, query.ids]
        return np.asarray(sub.sum(axis=1), dtype=np.float64).ravel()


class TfidfEstimator(Estimator):
    name = "tfidf"
    direction = HIGHER

    def __init__(self, ctx):
        super().__init__(ctx)
        idf = ctx.idf
        mat = _row_matrix(self.dataset, lambda d: d.masses * idf.weights(d.ids))
        norms = np.sqrt(np.asarray(mat.multiply(mat).sum(axis=1)).ravel())
        scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        self.unit = sp.diags(scale) @ mat
        self.unit = self.unit.tocsr()

    def score(self, query, ids):
        w = query.masses * self.ctx.idf.weights(query.ids)
        norm = float(np.sqrt(w @ w))
        ids = np.asarray(ids, dtype=np.int64)
        if norm == 0.0:
            return np.zeros(ids.size)
        sub = self.unit[ids][:, query.ids]
        return np.asarray(sub @ (w / norm), dtype=np.float64).ravel()


@numba.njit(cache=True, nogil=True)
def _column_overlap(indptr, indices, data, nodes, q, n_rows):
    """``sum_j min(M[r, nodes[j]], q[j])`` for every row ``r`` of a CSC matrix."""
    out = np.zeros(n_rows)
    for j in range(nodes.size):
        c = nodes[j]
        for k in range(indptr[c], indptr[c + 1]):
            v = data[k]
            out[indices[k]] += v if v < q[j] else q[j]
    return out


class QuadtreeEstimator(Estimator):
    """Sparse l1 distance between precomputed quadtree embeddings."""

    name = "quadtree"

    def __init__(self, ctx):
        super().__init__(ctx)
        self.index = ctx.get_index()
        lv = self.index.level
        rows, cols, vals = [], [], []
        for i, d in enumerate(self.dataset.distributions):
            nodes, mass = node_masses(self.index, d)
            rows.append(np.full(nodes.size, i))
            cols.append(nodes)
            vals.append(np.ldexp(mass, lv[nodes]))
        self.emb = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.dataset.n, self.index.n_nodes),
        )
        self.row_l1 = np.asarray(self.emb.sum(axis=1)).ravel()
        self.emb_csc = self.emb.tocsc()

    def score(self, query, ids):
        ids = np.asarray(ids, dtype=np.int64)
        nodes, mass = node_masses(self.index, query)
        q = np.ldexp(mass, self.index.level[nodes])
        # |a - q| = a + q - 2 min(a, q) on the query's support, a elsewhere;
        # only the items sharing a node with the query are touched
        m = self.emb_csc
        overlap = _column_overlap(m.indptr, m.indices, m.data, nodes, q, self.dataset.n)
        return self.row_l1[ids] + q.sum() - 2.0 * overlap[ids]


class FlowtreeEstimator(Estimator):
    name = "flowtree"

    def __init__(self, ctx):
        super().__init__(ctx)
        self.index = ctx.get_index()
        self.metric = METRICS[ctx.metric]

    def pair(self, item, query):
        return _flowtree_cost(
            self.index.ancestors, self.ground.points,
            item.ids, item.masses, query.ids, query.masses, self.metric,
        )


class RwmdEstimator(Estimator):
    name = "rwmd"

    def pair(self, item, query):
        return baselines.rwmd_estimate(self.ground, item, query, self.ctx.metric).value


class SinkhornEstimator(Estimator):
    name = "sinkhorn"

    def __init__(self, ctx, iters=3, eta=baselines.DEFAULT_SINKHORN_ETA):
        super().__init__(ctx)
        self.iters = iters
        self.eta = eta
        self.name = f"sinkhorn-{iters}"

    def pair(self, item, query):
        return baselines.sinkhorn_estimate(
            self.ground, item, query, self.iters, self.eta, self.ctx.metric
        ).value


class ExactEstimator(Estimator):
    name = "exact"

    def __init__(self, ctx, size_limit=DEFAULT_SIZE_LIMIT):
        super().__init__(ctx)
        self.size_limit = size_limit

    def pair(self, item, query):
        return exact_w1(self.ground, item, query, self.ctx.metric, self.size_limit)[0]


_REGISTRY = {
    "mean": MeanEstimator,
    "overlap": OverlapEstimator,
    "tfidf": TfidfEstimator,
    "quadtree": QuadtreeEstimator,
    "flowtree": FlowtreeEstimator,
    "rwmd": RwmdEstimator,
    "sinkhorn": SinkhornEstimator,
    "exact": ExactEstimator,
}


def make_estimator(spec, ctx: SearchContext) -> Estimator:
    spec = parse_method(spec)
    cls = _REGISTRY[spec["method"]]
    if cls is SinkhornEstimator:
        return cls(ctx, spec["iters"], spec["eta"])
    if cls is ExactEstimator and "size_limit" in spec:
        return cls(ctx, int(spec["size_limit"]))
    return cls(ctx)

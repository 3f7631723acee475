"""Exact Wasserstein-1 by successive shortest paths on the bipartite support graph.

Dijkstra runs on the dense residual graph with Johnson potentials, so every
augmentation costs O((m + n)^2).  Each augmentation saturates a supply, a
demand or a backward edge; masses stay in double precision and residuals
under ``RESIDUAL_EPS`` are snapped to zero.
"""

from __future__ import annotations

import numba
import numpy as np

from .core import Distribution, GroundSet
from .errors import SizeLimitError, SolverError
from .flowtree import Flow

RESIDUAL_EPS = 1e-13
DEFAULT_SIZE_LIMIT = 4096 * 4096


@numba.njit(cache=True, nogil=True)
def _ssp(cost, a, b):
    m, n = cost.shape
    V = m + n
    flow = np.zeros((m, n))
    supply = a.copy()
    demand = b.copy()
    pot = np.zeros(V)
    dist = np.empty(V)
    pred = np.empty(V, np.int64)
    done = np.empty(V, np.bool_)
    inf = np.inf
    for _ in range(4 * (m + n) * (m + n) + 16):
        left = 0.0
        for i in range(m):
            left += supply[i]
        if left <= RESIDUAL_EPS:
            return flow, 0
        any_demand = False
        for j in range(n):
            if demand[j] > RESIDUAL_EPS:
                any_demand = True
        if not any_demand:
            return flow, 0

        for v in range(V):
            dist[v] = inf
            pred[v] = -1
            done[v] = False
        for i in range(m):
            if supply[i] > RESIDUAL_EPS:
                dist[i] = 0.0
        for _it in range(V):
            u = -1
            best = inf
            for v in range(V):
                if not done[v] and dist[v] < best:
                    best = dist[v]
                    u = v
            if u < 0:
                break
            done[u] = True
            if u < m:
                for j in range(n):
                    w = m + j
                    if done[w]:
                        continue
                    rc = cost[u, j] + pot[u] - pot[w]
                    if rc < 0.0:
                        rc = 0.0
                    nd = best + rc
                    if nd < dist[w]:
                        dist[w] = nd
                        pred[w] = u
            else:
                j = u - m
                for i in range(m):
                    if done[i] or flow[i, j] <= 0.0:
                        continue
                    rc = -cost[i, j] + pot[u] - pot[i]
                    if rc < 0.0:
                        rc = 0.0
                    nd = best + rc
                    if nd < dist[i]:
                        dist[i] = nd
                        pred[i] = u

        t = -1
        best = inf
        for j in range(n):
            if demand[j] > RESIDUAL_EPS and dist[m + j] < best:
                best = dist[m + j]
                t = m + j
        if t < 0:
            return flow, 1
        for v in range(V):
            pot[v] += min(dist[v], best)

        # bottleneck along the path back to a source
        delta = demand[t - m]
        v = t
        while pred[v] >= 0:
            u = pred[v]
            if u >= m:
                if flow[v, u - m] < delta:
                    delta = flow[v, u - m]
            v = u
        if supply[v] < delta:
            delta = supply[v]
        s = v
        v = t
        while pred[v] >= 0:
            u = pred[v]
            if u < m:
                flow[u, v - m] += delta
            else:
                flow[v, u - m] -= delta
                if flow[v, u - m] < RESIDUAL_EPS:
                    flow[v, u - m] = 0.0
            v = u
        supply[s] -= delta
        if supply[s] < RESIDUAL_EPS:
            supply[s] = 0.0
        demand[t - m] -= delta
        if demand[t - m] < RESIDUAL_EPS:
            demand[t - m] = 0.0
    return flow, 2


def _find_cycle(plan):
    """Node sequence of a cycle in the bipartite support of ``plan``, or ``None``.

    Rows are nodes ``0..m-1`` and columns ``m..m+n-1``.
    """
    m, _ = plan.shape
    root = {}

    def find(x):
        root.setdefault(x, x)
        while root[x] != x:
            root[x] = root[root[x]]
            x = root[x]
        return x

    forest: dict[int, list[int]] = {}
    for i, j in zip(*np.nonzero(plan)):
        u, v = int(i), m + int(j)
        ru, rv = find(u), find(v)
        if ru != rv:
            root[ru] = rv
            forest.setdefault(u, []).append(v)
            forest.setdefault(v, []).append(u)
            continue
        # closing edge: cycle is the forest path v -> u plus the edge (u, v)
        prev = {v: None}
        queue = [v]
        while queue:
            x = queue.pop()
            for y in forest.get(x, ()):
                if y not in prev:
                    prev[y] = x
                    queue.append(y)
        path = [u]
        while path[-1] != v:
            path.append(prev[path[-1]])
        return path
    return None


def _cancel_cycles(plan, cost):
    """Turn an optimal plan into one whose support is a forest."""
    m, n = plan.shape
    while np.count_nonzero(plan) > m + n - 1:
        cyc = _find_cycle(plan)
        if cyc is None:
            break
        edges = []
        for k in range(len(cyc)):
            u, v = cyc[k], cyc[(k + 1) % len(cyc)]
            i, j = (u, v - m) if u < m else (v, u - m)
            edges.append((i, j))
        plus, minus = edges[0::2], edges[1::2]
        gain = sum(cost[e] for e in plus) - sum(cost[e] for e in minus)
        if gain > 0:
            plus, minus = minus, plus
        delta = min(plan[e] for e in minus)
        for e in plus:
            plan[e] += delta
        for e in minus:
            plan[e] -= delta
            if plan[e] < RESIDUAL_EPS:
                plan[e] = 0.0
    return plan


def transport(cost, a, b) -> tuple[float, np.ndarray]:
    """Solve the transportation problem for ``cost`` with marginals ``a``, ``b``.

    Returns the optimal value and the dense (m, n) plan.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if cost.shape != (a.size, b.size):
        raise ValueError("cost shape does not match marginals")
    if np.any(cost < 0):
        raise ValueError("costs must be nonnegative")
    if abs(a.sum() - b.sum()) > 1e-9:
        raise ValueError("marginals carry different total mass")
    plan, status = _ssp(cost, a, b)
    if status != 0:
        raise SolverError("successive shortest paths failed to route all mass")
    plan = _cancel_cycles(plan, cost)
    return float(np.sum(plan * cost)), plan


def pairwise_distances(ground: GroundSet, a_ids, b_ids, metric: str = "euclidean") -> np.ndarray:
    x = ground.points[np.asarray(a_ids)]
    y = ground.points[np.asarray(b_ids)]
    diff = x[:, None, :] - y[None, :, :]
    if metric == "euclidean":
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    if metric == "l1":
        return np.abs(diff).sum(axis=-1)
    raise ValueError(f"unknown metric {metric!r}")


def exact_w1(
    ground: GroundSet,
    mu: Distribution,
    nu: Distribution,
    metric: str = "euclidean",
    size_limit: int = DEFAULT_SIZE_LIMIT,
) -> tuple[float, Flow]:
    """Exact W1 between ``mu`` and ``nu`` and an optimal flow."""
    mu.check_ground(ground)
    nu.check_ground(ground)
    if mu.support_size * nu.support_size > size_limit:
        raise SizeLimitError(
            f"{mu.support_size}x{nu.support_size} exceeds the exact solver limit; "
            "use an estimator such as flowtree instead"
        )
    cost = pairwise_distances(ground, mu.ids, nu.ids, metric)
    value, plan = transport(cost, mu.masses, nu.masses)
    r, c = np.nonzero(plan)
    flow = Flow(mu.ids[r], nu.ids[c], plan[r, c])
    return value, flow

"""Baseline W1 estimators: Mean, Overlap, TF-IDF, R-WMD and Sinkhorn-k."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import Dataset, Distribution, GroundSet
from .errors import SolverError
from .exact import pairwise_distances

LOWER = "lower-is-closer"
HIGHER = "higher-is-closer"

DEFAULT_SINKHORN_ETA = 30.0


@dataclass(frozen=True)
class Estimate:
    value: float
    direction: Literal["lower-is-closer", "higher-is-closer"] = LOWER

    def __float__(self) -> float:
        return float(self.value)

    @property
    def rank_key(self) -> float:
        """Smaller means closer, whatever the direction."""
        return self.value if self.direction == LOWER else -self.value


@dataclass(frozen=True)
class IdfTable:
    """Inverse document frequency ``ln(n / df)`` per point id."""

    n: int
    df: dict[int, int]

    def __getitem__(self, pid: int) -> float:
        df = self.df.get(int(pid))
        return 0.0 if df is None else float(np.log(self.n / df))

    def weights(self, ids) -> np.ndarray:
        return np.array([self[i] for i in ids], dtype=np.float64)


def _mean(ground: GroundSet, mu: Distribution) -> np.ndarray:
    return mu.masses @ ground.points[mu.ids]


def mean_estimate(
    ground: GroundSet, mu: Distribution, nu: Distribution, metric: str = "euclidean"
) -> Estimate:
    """Distance between the two means; never exceeds W1."""
    diff = _mean(ground, mu) - _mean(ground, nu)
    if metric == "l1":
        return Estimate(float(np.abs(diff).sum()))
    return Estimate(float(np.sqrt(diff @ diff)))


def overlap_score(mu: Distribution, nu: Distribution) -> Estimate:
    return Estimate(float(np.intersect1d(mu.ids, nu.ids).size), HIGHER)


def build_idf(dataset: Dataset) -> IdfTable:
    df: dict[int, int] = {}
    for d in dataset.distributions:
        for pid in d.ids.tolist():
            df[pid] = df.get(pid, 0) + 1
    return IdfTable(dataset.n, df)


def tfidf_score(idf: IdfTable, mu: Distribution, nu: Distribution) -> Estimate:
    """Cosine similarity of the idf-weighted mass vectors."""
    wa = mu.masses * idf.weights(mu.ids)
    wb = nu.masses * idf.weights(nu.ids)
    na = float(np.sqrt(wa @ wa))
    nb = float(np.sqrt(wb @ wb))
    if na == 0.0 or nb == 0.0:
        return Estimate(0.0, HIGHER)
    _, ia, ib = np.intersect1d(mu.ids, nu.ids, assume_unique=True, return_indices=True)
    return Estimate(float(wa[ia] @ wb[ib]) / (na * nb), HIGHER)


def rwmd_estimate(
    ground: GroundSet, mu: Distribution, nu: Distribution, metric: str = "euclidean"
) -> Estimate:
    """Relaxed WMD: the larger of the two one-sided nearest-point relaxations."""
    return Estimate(max(rwmd_one_sided(ground, mu, nu, metric)))


def rwmd_one_sided(ground, mu, nu, metric="euclidean") -> tuple[float, float]:
    """(mu sent to nearest nu point, nu sent to nearest mu point)."""
    cost = pairwise_distances(ground, mu.ids, nu.ids, metric)
    return float(mu.masses @ cost.min(axis=1)), float(nu.masses @ cost.min(axis=0))


def sinkhorn_plan(cost, a, b, iterations: int, eta: float = DEFAULT_SINKHORN_ETA):
    """Plan after ``iterations`` rounds of row-then-column scaling.

    The kernel is ``exp(-eta * cost / max(cost))``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if eta <= 0:
        raise ValueError("eta must be positive")
    cost = np.asarray(cost, dtype=np.float64)
    top = cost.max()
    if top == 0.0:
        return np.outer(a, b)
    K = np.exp(-eta * cost / top)
    v = np.ones(cost.shape[1])
    for _ in range(iterations):
        Kv = K @ v
        if np.any(Kv == 0.0):
            raise SolverError("Sinkhorn kernel row underflowed; decrease eta")
        u = a / Kv
        Ku = K.T @ u
        if np.any(Ku == 0.0):
            raise SolverError("Sinkhorn kernel column underflowed; decrease eta")
        v = b / Ku
    return u[:, None] * K * v[None, :]


def sinkhorn_estimate(
    ground: GroundSet,
    mu: Distribution,
    nu: Distribution,
    iterations: int = 3,
    eta: float = DEFAULT_SINKHORN_ETA,
    metric: str = "euclidean",
) -> Estimate:
    """Cost of the Sinkhorn-k plan under the ground metric."""
    cost = pairwise_distances(ground, mu.ids, nu.ids, metric)
    if cost.max() == 0.0:
        return Estimate(0.0)
    plan = sinkhorn_plan(cost, mu.masses, nu.masses, iterations, eta)
    return Estimate(float(np.sum(plan * cost)))

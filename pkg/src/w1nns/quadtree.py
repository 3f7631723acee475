"""Randomly shifted quadtree over a ground set and its tree-W1 distance.

The enclosing box has side ``2 * Phi'`` where ``Phi'`` is ``phi`` rounded up
to a power of two, so a node at level ``l`` is a cube of side exactly
``2**l`` and the edge to its parent weighs ``2**l``.  Only nonempty cells
are materialized.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Distribution, GroundSet
from .errors import ParseError

INDEX_MAGIC = b"W1QT"
DEFAULT_MAX_DEPTH = 32
_MAX_DEPTH_LIMIT = 60


def _round_up_pow2(phi: float) -> tuple[float, int]:
    if phi <= 0:
        return 1.0, 0
    e = math.ceil(math.log2(phi))
    # log2 can be off by one ulp around exact powers
    if 2.0 ** (e - 1) >= phi:
        e -= 1
    elif 2.0**e < phi:
        e += 1
    return 2.0**e, e


def draw_shift(dim: int, extent: float, seed: int) -> np.ndarray:
    """Uniform shift in [0, extent]^dim from a Philox (counter-based) stream."""
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.uniform(0.0, extent, size=dim)


@dataclass(frozen=True, eq=False)
class QuadtreeIndex:
    """Immutable quadtree.

    Node arrays are indexed by node id; node 0 is the root.  ``ancestors``
    has one row per point listing the node at each depth on its root path
    (``-1`` below the point's leaf).
    """

    level: np.ndarray
    parent: np.ndarray
    depth: np.ndarray
    center: np.ndarray
    leaf_of: np.ndarray
    shift: np.ndarray
    root_level: int
    seed: int
    max_depth: int
    ancestors: np.ndarray = field(repr=False)
    root_to_node: np.ndarray = field(repr=False)

    root = 0

    @property
    def n_nodes(self) -> int:
        return self.level.size

    @property
    def side(self) -> np.ndarray:
        return np.ldexp(1.0, self.level)

    @property
    def height(self) -> int:
        return int(self.depth.max())

    @property
    def n_points(self) -> int:
        return self.leaf_of.size

    @property
    def weight(self) -> np.ndarray:
        """Edge weight from each node to its parent (``2**level``)."""
        return np.ldexp(1.0, self.level)

    def children(self, node: int) -> np.ndarray:
        return np.flatnonzero(self.parent == node)

    def points_under(self, node: int) -> np.ndarray:
        return np.flatnonzero(self.ancestors[:, self.depth[node]] == node)

    def check_distribution(self, mu: Distribution) -> None:
        if mu.ids[0] < 0 or mu.ids[-1] >= self.n_points:
            raise ValueError("distribution references a point with no leaf in this index")


def build_quadtree(
    ground: GroundSet, seed: int = 0, max_depth: int = DEFAULT_MAX_DEPTH
) -> QuadtreeIndex:
    """Build the randomly shifted quadtree of ``ground``.

    Deterministic in ``(ground, seed, max_depth)``.  Cells are half-open per
    axis; subdivision stops at singleton cells or at ``max_depth`` below the
    root, where coincident points share a leaf.
    """
    if len(ground) == 0:
        raise ValueError("empty ground set")
    if not 1 <= max_depth <= _MAX_DEPTH_LIMIT:
        raise ValueError(f"max_depth must be in [1, {_MAX_DEPTH_LIMIT}]")
    pts = ground.points
    n, d = pts.shape
    extent, exp = _round_up_pow2(ground.phi)
    root_level = exp + 1
    shift = draw_shift(d, extent, seed)
    low = shift - extent
    u = pts - low

    levels = [root_level]
    parents = [-1]
    depths = [0]
    cells = [np.zeros((1, d), dtype=np.int64)]
    node_of = np.zeros(n, dtype=np.int64)
    active = np.arange(n) if n > 1 else np.empty(0, dtype=np.int64)
    n_nodes = 1

    for dep in range(1, max_depth + 1):
        if active.size == 0:
            break
        lvl = root_level - dep
        c = np.floor(np.ldexp(u[active], -lvl)).astype(np.int64)
        np.clip(c, 0, (1 << dep) - 1, out=c)
        uniq, first, inv = np.unique(c, axis=0, return_index=True, return_inverse=True)
        inv = inv.ravel()
        k = uniq.shape[0]
        ids = n_nodes + np.arange(k)
        parents.extend(node_of[active[first]].tolist())
        levels.extend([lvl] * k)
        depths.extend([dep] * k)
        cells.append(uniq)
        node_of[active] = ids[inv]
        n_nodes += k
        counts = np.bincount(inv, minlength=k)
        active = active[counts[inv] > 1]

    level = np.asarray(levels, dtype=np.int64)
    parent = np.asarray(parents, dtype=np.int64)
    depth = np.asarray(depths, dtype=np.int64)
    cell = np.concatenate(cells, axis=0)
    center = low + (cell + 0.5) * np.ldexp(1.0, level)[:, None]

    anc = _ancestor_table(node_of, parent, depth)
    root_to_node = _root_distances(level, parent, depth)
    for arr in (level, parent, depth, center, node_of, shift, anc, root_to_node):
        arr.setflags(write=False)
    return QuadtreeIndex(
        level=level,
        parent=parent,
        depth=depth,
        center=center,
        leaf_of=node_of,
        shift=shift,
        root_level=root_level,
        seed=int(seed),
        max_depth=int(max_depth),
        ancestors=anc,
        root_to_node=root_to_node,
    )


def _ancestor_table(leaf_of, parent, depth) -> np.ndarray:
    n = leaf_of.size
    h = int(depth.max())
    anc = np.full((n, h + 1), -1, dtype=np.int64)
    rows = np.arange(n)
    cur = leaf_of.copy()
    while rows.size:
        anc[rows, depth[cur]] = cur
        cur = parent[cur]
        keep = cur >= 0
        rows, cur = rows[keep], cur[keep]
    return anc


def _root_distances(level, parent, depth) -> np.ndarray:
    w = np.ldexp(1.0, level)
    out = np.zeros(level.size)
    for dep in range(1, int(depth.max()) + 1):
        at = np.flatnonzero(depth == dep)
        out[at] = out[parent[at]] + w[at]
    return out


# ---------------------------------------------------------------------------
# embedding and closed-form distance


@dataclass(frozen=True)
class SparseEmbedding:
    """Sorted node ids with values ``2**level(v) * mass_under(v)``."""

    nodes: np.ndarray
    values: np.ndarray

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.nodes.tolist(), self.values.tolist()))


def node_masses(index: QuadtreeIndex, mu: Distribution) -> tuple[np.ndarray, np.ndarray]:
    """Total mass of ``mu`` beneath every node touched by its support."""
    index.check_distribution(mu)
    paths = index.ancestors[mu.ids]
    reps = np.broadcast_to(mu.masses[:, None], paths.shape)
    valid = paths >= 0
    nodes, inv = np.unique(paths[valid], return_inverse=True)
    mass = np.bincount(inv.ravel(), weights=reps[valid], minlength=nodes.size)
    return nodes, mass


def embed_distribution(index: QuadtreeIndex, mu: Distribution) -> SparseEmbedding:
    nodes, mass = node_masses(index, mu)
    return SparseEmbedding(nodes, np.ldexp(mass, index.level[nodes]))


def embedding_l1(a: SparseEmbedding, b: SparseEmbedding) -> float:
    nodes = np.concatenate([a.nodes, b.nodes])
    vals = np.concatenate([a.values, -b.values])
    _, inv = np.unique(nodes, return_inverse=True)
    diff = np.bincount(inv.ravel(), weights=vals)
    return float(np.abs(diff).sum())


def quadtree_distance(index: QuadtreeIndex, mu: Distribution, nu: Distribution) -> float:
    """Tree-W1 distance ``sum_v 2**l(v) |mu(v) - nu(v)|``."""
    return embedding_l1(embed_distribution(index, mu), embed_distribution(index, nu))


def tree_distance(index: QuadtreeIndex, a, b) -> np.ndarray:
    """Tree-metric distances between point ids ``a`` and ``b`` (broadcast)."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    a, b = np.broadcast_arrays(a, b)
    pa = index.ancestors[a]
    pb = index.ancestors[b]
    shared = (pa == pb) & (pa >= 0)
    # paths agree on a prefix; lca is the deepest shared entry
    lca_depth = shared.sum(axis=-1) - 1
    lca = np.take_along_axis(pa, lca_depth[..., None], axis=-1)[..., 0]
    r = index.root_to_node
    return r[index.leaf_of[a]] + r[index.leaf_of[b]] - 2.0 * r[lca]


def tree_cost_matrix(index: QuadtreeIndex, a_ids, b_ids) -> np.ndarray:
    a_ids = np.asarray(a_ids, dtype=np.int64)
    b_ids = np.asarray(b_ids, dtype=np.int64)
    return tree_distance(index, a_ids[:, None], b_ids[None, :])


# ---------------------------------------------------------------------------
# serialization

_HEADER = "<4sIQIIIiI"  # magic, version, seed, max_depth, n_points, dim, root_level, n_nodes


def save_index(index: QuadtreeIndex, path) -> None:
    n_points = index.n_points
    dim = index.center.shape[1]
    head = struct.pack(
        _HEADER, INDEX_MAGIC, 1, index.seed, index.max_depth,
        n_points, dim, index.root_level, index.n_nodes,
    )
    body = b"".join(
        np.ascontiguousarray(a, dtype=dt).tobytes()
        for a, dt in (
            (index.shift, "<f8"),
            (index.level, "<i4"),
            (index.parent, "<i4"),
            (index.center, "<f8"),
            (index.leaf_of, "<i4"),
        )
    )
    Path(path).write_bytes(head + body)


def load_index(path) -> QuadtreeIndex:
    raw = Path(path).read_bytes()
    size = struct.calcsize(_HEADER)
    if len(raw) < size:
        raise ParseError(f"{path}: truncated index file")
    magic, version, seed, max_depth, n_points, dim, root_level, n_nodes = struct.unpack_from(
        _HEADER, raw
    )
    if magic != INDEX_MAGIC or version != 1:
        raise ParseError(f"{path}: not a W1QT index")
    off = size

    def take(dt, count):
        nonlocal off
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=off)
        off += arr.nbytes
        return arr

    try:
        shift = take("<f8", dim).astype(np.float64)
        level = take("<i4", n_nodes).astype(np.int64)
        parent = take("<i4", n_nodes).astype(np.int64)
        center = take("<f8", n_nodes * dim).reshape(n_nodes, dim).astype(np.float64)
        leaf_of = take("<i4", n_points).astype(np.int64)
    except ValueError:
        raise ParseError(f"{path}: truncated index file") from None
    if off != len(raw):
        raise ParseError(f"{path}: trailing bytes in index file")
    depth = (root_level - level).astype(np.int64)
    anc = _ancestor_table(leaf_of, parent, depth)
    root_to_node = _root_distances(level, parent, depth)
    return QuadtreeIndex(
        level=level, parent=parent, depth=depth, center=center, leaf_of=leaf_of,
        shift=shift, root_level=int(root_level), seed=int(seed),
        max_depth=int(max_depth), ancestors=anc, root_to_node=root_to_node,
    )

"""Ground sets, sparse distributions, datasets and their file formats.

Embedding-text files hold one ``token c_1 ... c_d`` row per point.  Binary
ground files are a little-endian header (magic ``W1GS``, u32 count, u32 dim)
followed by row-major float32 coordinates.  Distribution files hold one
record per line::

    q1: a b             # uniform over {a, b}
    q2: a 2.0 b 6.0     # weighted, renormalized to (0.25, 0.75)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError

MASS_TOL = 1e-6
GROUND_MAGIC = b"W1GS"


@dataclass(frozen=True, eq=False)
class GroundSet:
    """Finite point set translated into the box [0, phi]^dim."""

    points: np.ndarray
    phi: float
    tokens: tuple[str, ...]
    offset: np.ndarray = field(repr=False)
    token_to_id: dict[str, int] = field(repr=False, default_factory=dict)

    @classmethod
    def from_array(cls, points, tokens: Sequence[str] | None = None) -> "GroundSet":
        pts = np.array(points, dtype=np.float64, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise ValueError("ground set needs a non-empty (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("ground set coordinates must be finite")
        lo = pts.min(axis=0)
        pts -= lo
        phi = float(pts.max(axis=0).max())
        if tokens is None:
            tokens = [str(i) for i in range(len(pts))]
        if len(tokens) != len(pts):
            raise ValueError("one token per point required")
        tokens = tuple(tokens)
        # first occurrence wins for repeated tokens
        lookup: dict[str, int] = {}
        for i, t in enumerate(tokens):
            lookup.setdefault(t, i)
        pts.setflags(write=False)
        return cls(points=pts, phi=phi, tokens=tokens, offset=lo, token_to_id=lookup)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def resolve(self, name: str) -> int:
        """Map a token (or a bare integer point id) to a point id."""
        pid = self.token_to_id.get(name)
        if pid is not None:
            return pid
        try:
            pid = int(name)
        except ValueError:
            raise KeyError(name) from None
        if not 0 <= pid < len(self):
            raise KeyError(name)
        return pid


@dataclass(frozen=True, eq=False)
class Distribution:
    """Sparse probability measure over point ids of a ground set.

    ``ids`` is sorted ascending and duplicate-free; ``masses`` are strictly
    positive and sum to one.
    """

    ids: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64).ravel()
        masses = np.asarray(self.masses, dtype=np.float64).ravel()
        if ids.shape != masses.shape:
            raise ValueError("ids and masses differ in length")
        if np.any(masses < 0) or not np.all(np.isfinite(masses)):
            raise ValueError("masses must be finite and nonnegative")
        keep = masses > 0
        ids, masses = ids[keep], masses[keep]
        if ids.size == 0:
            raise ValueError("distribution has no positive mass")
        order = np.argsort(ids, kind="stable")
        ids, masses = ids[order], masses[order]
        if np.any(np.diff(ids) == 0):
            raise ValueError("repeated point id in distribution")
        masses = masses / masses.sum()
        ids.setflags(write=False)
        masses.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "masses", masses)

    @classmethod
    def uniform(cls, ids: Iterable[int]) -> "Distribution":
        ids = np.unique(np.fromiter(ids, dtype=np.int64))
        return cls(ids, np.full(ids.size, 1.0 / max(ids.size, 1)))

    @classmethod
    def point_mass(cls, pid: int) -> "Distribution":
        return cls(np.array([pid]), np.array([1.0]))

    @property
    def support_size(self) -> int:
        return int(self.ids.size)

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(m) for i, m in zip(self.ids, self.masses)}

    def check_ground(self, ground: GroundSet) -> None:
        if self.ids[0] < 0 or self.ids[-1] >= len(ground):
            raise ValueError(
                f"point id out of range for ground set of size {len(ground)}"
            )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Named collection of distributions over one ground set."""

    ground: GroundSet
    distributions: tuple[Distribution, ...]
    names: tuple[str, ...]

    def __post_init__(self):
        if not self.distributions:
            raise ValueError("dataset must hold at least one distribution")
        if len(self.names) != len(self.distributions):
            raise ValueError("one name per distribution required")
        for d in self.distributions:
            d.check_ground(self.ground)

    @classmethod
    def from_list(cls, ground, distributions, names=None) -> "Dataset":
        distributions = tuple(distributions)
        if names is None:
            names = [str(i) for i in range(len(distributions))]
        return cls(ground, distributions, tuple(names))

    def __len__(self) -> int:
        return len(self.distributions)

    def __getitem__(self, i: int) -> Distribution:
        return self.distributions[i]

    @property
    def n(self) -> int:
        return len(self.distributions)

    @property
    def avg_support(self) -> float:
        return float(np.mean([d.support_size for d in self.distributions]))


# ---------------------------------------------------------------------------
# ground set I/O


def load_ground_set(path, format: str = "auto") -> GroundSet:
    """Read an embedding-text or binary ground file.

    ``format`` is ``"text"``, ``"binary"`` or ``"auto"`` (sniffs the magic).
    """
    path = Path(path)
    raw = path.read_bytes()
    if not raw.strip():
        raise ParseError(f"{path}: empty ground file")
    if format == "auto":
        format = "binary" if raw[:4] == GROUND_MAGIC else "text"
    if format == "binary":
        return _parse_binary_ground(raw, path)
    if format in ("text", "embedding-text"):
        return _parse_text_ground(raw.decode("utf-8"), path)
    raise ValueError(f"unknown ground format {format!r}")


def _parse_text_ground(text: str, path) -> GroundSet:
    tokens: list[str] = []
    rows: list[list[float]] = []
    dim = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) < 2:
            raise ParseError(f"{path}:{lineno}: row has no coordinates")
        if dim is None:
            dim = len(parts) - 1
        elif len(parts) - 1 != dim:
            raise ParseError(
                f"{path}:{lineno}: expected {dim} coordinates, got {len(parts) - 1}"
            )
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        tokens.append(parts[0])
    if not rows:
        raise ParseError(f"{path}: empty ground file")
    return GroundSet.from_array(np.array(rows), tokens)


def _parse_binary_ground(raw: bytes, path) -> GroundSet:
    if len(raw) < 12 or raw[:4] != GROUND_MAGIC:
        raise ParseError(f"{path}: bad binary ground header")
    count, dim = struct.unpack_from("<II", raw, 4)
    expected = 12 + 4 * count * dim
    if count == 0 or dim == 0:
        raise ParseError(f"{path}: empty ground file")
    if len(raw) != expected:
        raise ParseError(f"{path}: expected {expected} bytes, found {len(raw)}")
    coords = np.frombuffer(raw, dtype="<f4", offset=12).reshape(count, dim)
    return GroundSet.from_array(coords.astype(np.float64))


def save_ground_set(ground: GroundSet, path, format: str = "binary") -> None:
    """Write the (translated) coordinates of ``ground``."""
    path = Path(path)
    if format == "binary":
        header = GROUND_MAGIC + struct.pack("<II", len(ground), ground.dim)
        body = np.ascontiguousarray(ground.points, dtype="<f4").tobytes()
        path.write_bytes(header + body)
    elif format in ("text", "embedding-text"):
        with path.open("w") as fh:
            for tok, row in zip(ground.tokens, ground.points):
                fh.write(tok + " " + " ".join(repr(float(v)) for v in row) + "\n")
    else:
        raise ValueError(f"unknown ground format {format!r}")


# ---------------------------------------------------------------------------
# distribution records


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def parse_record(line: str, ground: GroundSet, where: str = "record"):
    """Parse ``id: items...`` (the ``id:`` prefix is optional).

    Items form a weighted list ``tok m tok m ...`` when every second item is
    numeric and not itself a known token; otherwise they are a uniform list
    of tokens.  Repeated tokens are summed (weighted) or collapsed (uniform).
    """
    name, sep, body = line.partition(":")
    if not sep:
        name, body = "", line
    name = name.strip()
    where = f"{where} {name!r}" if name else where
    items = body.split()
    if not items:
        raise ParseError(f"{where}: no entries")

    weighted = (
        len(items) % 2 == 0
        and all(_is_float(m) for m in items[1::2])
        and not any(m in ground.token_to_id for m in items[1::2])
    )
    try:
        if weighted:
            acc: dict[int, float] = {}
            for tok, m in zip(items[::2], items[1::2]):
                mass = float(m)
                if mass < 0 or not np.isfinite(mass):
                    raise ParseError(f"{where}: invalid mass {m!r}")
                pid = ground.resolve(tok)
                acc[pid] = acc.get(pid, 0.0) + mass
            if sum(acc.values()) <= 0:
                raise ParseError(f"{where}: all masses are zero")
            ids = np.fromiter(acc.keys(), dtype=np.int64)
            masses = np.fromiter(acc.values(), dtype=np.float64)
            return name, Distribution(ids, masses)
        ids = sorted({ground.resolve(tok) for tok in items})
        return name, Distribution.uniform(ids)
    except KeyError as exc:
        raise ParseError(f"{where}: unknown token {exc.args[0]!r}") from None


def load_distributions(path, ground: GroundSet) -> Dataset:
    """Read a distribution file bound to ``ground``."""
    path = Path(path)
    dists: list[Distribution] = []
    names: list[str] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        name, dist = parse_record(line, ground, where=f"{path}:{lineno}")
        names.append(name or str(len(names)))
        dists.append(dist)
    if not dists:
        raise ParseError(f"{path}: no distributions")
    return Dataset(ground, tuple(dists), tuple(names))


def save_distributions(dataset: Dataset, path) -> None:
    """Write records using point tokens; uniform ones omit their weights."""
    toks = dataset.ground.tokens
    with Path(path).open("w") as fh:
        for name, d in zip(dataset.names, dataset.distributions):
            if np.array_equal(d.masses, Distribution.uniform(d.ids).masses):
                body = " ".join(toks[i] for i in d.ids)
            else:
                body = " ".join(f"{toks[i]} {float(m)!r}" for i, m in zip(d.ids, d.masses))
            fh.write(f"{name}: {body}\n")

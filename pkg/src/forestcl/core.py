"""Windows, marked point patterns and neighbour queries.

Patterns are stored column-wise (ids, locations, marks, species) in numpy
arrays; :class:`MarkedPoint` is the scalar view used by the per-point API.
All objects are immutable after construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, DataError

__all__ = [
    "Window",
    "MarkedPoint",
    "PointPattern",
    "NeighborIndex",
    "CensusSeries",
    "set_difference",
    "radius_query",
    "nearest_mark_weighted_distance",
    "mark_weighted_nearest",
]


@dataclass(frozen=True)
class Window:
    """Closed axis-aligned rectangle ``[xmin, xmax] x [ymin, ymax]`` in metres."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        vals = (self.xmin, self.xmax, self.ymin, self.ymax)
        if not all(np.isfinite(v) for v in vals):
            raise ConfigError(f"window bounds must be finite, got {vals}")
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ConfigError(f"degenerate window {vals}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    def contains(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        return (
            (xy[:, 0] >= self.xmin)
            & (xy[:, 0] <= self.xmax)
            & (xy[:, 1] >= self.ymin)
            & (xy[:, 1] <= self.ymax)
        )

    def contains_window(self, other: "Window") -> bool:
        return (
            other.xmin >= self.xmin
            and other.xmax <= self.xmax
            and other.ymin >= self.ymin
            and other.ymax <= self.ymax
        )

    def shifted(self, dx: float, dy: float) -> "Window":
        return Window(self.xmin + dx, self.xmax + dx, self.ymin + dy, self.ymax + dy)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.xmax, self.ymin, self.ymax)


@dataclass(frozen=True)
class MarkedPoint:
    id: int
    u: tuple[float, float]
    m: float = 1.0
    species: int = 1

    def __post_init__(self):
        if not np.all(np.isfinite(self.u)):
            raise DataError(f"point {self.id}: non-finite location {self.u}")
        # NaN marks stand for "missing"; anything else must be positive.
        if not (np.isnan(self.m) or self.m > 0):
            raise DataError(f"point {self.id}: mark must be positive, got {self.m}")


class PointPattern:
    """An ordered, immutable collection of marked points inside a window.

    Parameters
    ----------
    window : Window
    xy : array_like, shape (n, 2)
    marks : array_like, shape (n,), optional
        Positive marks; NaN marks a missing value. Defaults to 1.
    ids : array_like of int, optional
        Unique identifiers. Defaults to ``0..n-1``.
    species : array_like of int or int, optional
        Species labels (default 1).
    """

    def __init__(self, window: Window, xy, marks=None, ids=None, species=None):
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        n = xy.shape[0]
        marks = np.ones(n) if marks is None else np.asarray(marks, dtype=float).reshape(n)
        ids = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64).reshape(n)
        if species is None:
            species = np.ones(n, dtype=np.int64)
        else:
            species = np.broadcast_to(np.asarray(species, dtype=np.int64), (n,)).copy()

        if not np.all(np.isfinite(xy)):
            raise DataError("non-finite point locations")
        outside = ~window.contains(xy) if n else np.zeros(0, bool)
        if outside.any():
            bad = ids[outside][:10].tolist()
            raise DataError(f"{int(outside.sum())} point(s) outside window {window.as_tuple()}, ids {bad}")
        if np.any(marks[~np.isnan(marks)] <= 0):
            raise DataError("marks must be positive")
        if np.unique(ids).size != n:
            raise DataError("point ids must be unique within a pattern")

        for a in (xy, marks, ids, species):
            a.setflags(write=False)
        self.window = window
        self.xy = xy
        self.marks = marks
        self.ids = ids
        self.species = species

    @classmethod
    def from_points(cls, window: Window, points: Sequence[MarkedPoint]) -> "PointPattern":
        if not points:
            return cls.empty(window)
        return cls(
            window,
            [p.u for p in points],
            marks=[p.m for p in points],
            ids=[p.id for p in points],
            species=[p.species for p in points],
        )

    @classmethod
    def empty(cls, window: Window) -> "PointPattern":
        return cls(window, np.zeros((0, 2)))

    def __len__(self) -> int:
        return self.xy.shape[0]

    def __iter__(self) -> Iterator[MarkedPoint]:
        return iter(self.points)

    def __repr__(self):
        return f"PointPattern(n={len(self)}, window={self.window.as_tuple()})"

    @cached_property
    def points(self) -> tuple[MarkedPoint, ...]:
        return tuple(
            MarkedPoint(int(i), (float(x), float(y)), float(m), int(s))
            for i, (x, y), m, s in zip(self.ids, self.xy, self.marks, self.species)
        )

    @cached_property
    def index(self) -> "NeighborIndex":
        return NeighborIndex(self)

    def subset(self, mask) -> "PointPattern":
        mask = np.asarray(mask)
        return PointPattern(
            self.window, self.xy[mask], self.marks[mask], self.ids[mask], self.species[mask]
        )

    def with_species(self, species: int) -> "PointPattern":
        return PointPattern(self.window, self.xy, self.marks, self.ids, species)

    def restrict(self, window: Window) -> "PointPattern":
        """Points falling inside ``window``, re-anchored to it."""
        keep = window.contains(self.xy) if len(self) else np.zeros(0, bool)
        return PointPattern(window, self.xy[keep], self.marks[keep], self.ids[keep], self.species[keep])

    def union(self, other: "PointPattern") -> "PointPattern":
        if other.window != self.window:
            raise ConfigError("cannot merge patterns on different windows")
        return PointPattern(
            self.window,
            np.vstack([self.xy, other.xy]),
            np.concatenate([self.marks, other.marks]),
            np.concatenate([self.ids, other.ids]),
            np.concatenate([self.species, other.species]),
        )

    def same_as(self, other: "PointPattern") -> bool:
        return (
            self.window == other.window
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.xy, other.xy)
            and np.array_equal(self.marks, other.marks, equal_nan=True)
            and np.array_equal(self.species, other.species)
        )


class NeighborIndex:
    """k-d tree over a pattern's locations (scipy ``cKDTree``)."""

    def __init__(self, pattern: PointPattern):
        self.pattern = pattern
        self._tree = cKDTree(pattern.xy) if len(pattern) else None

    def __len__(self):
        return len(self.pattern)

    @property
    def tree(self):
        return self._tree

    def query_indices(self, u, r: float) -> np.ndarray:
        """Sorted indices of points at distance ``<= r`` from ``u``."""
        if r < 0:
            raise ValueError("radius must be non-negative")
        if self._tree is None:
            return np.zeros(0, dtype=np.intp)
        if not np.isfinite(r):
            return np.arange(len(self.pattern))
        return np.asarray(sorted(self._tree.query_ball_point(np.asarray(u, float), r)), dtype=np.intp)

    def pairs(self, r: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All unordered pairs ``i < j`` with distance ``<= r``.

        Returns ``(i, j, d)`` sorted lexicographically by ``(i, j)``.
        """
        if self._tree is None or len(self.pattern) < 2:
            e = np.zeros(0, dtype=np.intp)
            return e, e, np.zeros(0)
        r = min(r, 2.0 * self.pattern.window.diagonal) if np.isfinite(r) else 2.0 * self.pattern.window.diagonal
        ij = self._tree.query_pairs(r, output_type="ndarray")
        if ij.size == 0:
            e = np.zeros(0, dtype=np.intp)
            return e, e, np.zeros(0)
        order = np.lexsort((ij[:, 1], ij[:, 0]))
        ij = ij[order]
        d = np.hypot(*(self.pattern.xy[ij[:, 0]] - self.pattern.xy[ij[:, 1]]).T)
        return ij[:, 0], ij[:, 1], d


def radius_query(index: NeighborIndex, u, r: float) -> list[MarkedPoint]:
    """Points of the indexed pattern within Euclidean distance ``r`` of ``u``."""
    pts = index.pattern.points
    return [pts[i] for i in index.query_indices(u, r)]


def set_difference(current: PointPattern, previous: PointPattern) -> tuple[PointPattern, PointPattern]:
    """Recruits and deaths between two censuses, matched by tree id.

    Returns ``(current \\ previous, previous \\ current)``.
    """
    if current.window != previous.window:
        raise ConfigError(
            f"census windows differ: {current.window.as_tuple()} vs {previous.window.as_tuple()}"
        )
    new = ~np.isin(current.ids, previous.ids)
    gone = ~np.isin(previous.ids, current.ids)
    return current.subset(new), previous.subset(gone)


def nearest_mark_weighted_distance(x: MarkedPoint, pattern: PointPattern) -> float:
    """``min ||u - u'|| / m'`` over points of ``pattern`` other than ``x`` itself.

    ``x`` is excluded by id. Returns ``inf`` when nothing is left.
    """
    return float(mark_weighted_nearest(np.asarray([x.u]), pattern, np.asarray([x.id]))[0])


def mark_weighted_nearest(xy, pattern: PointPattern, ids=None) -> np.ndarray:
    """Vectorised :func:`nearest_mark_weighted_distance` for many query locations.

    ``ids`` (optional) gives the id of each query point so that a point is
    never its own neighbour; pass ``None`` for points not in any pattern.
    """
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    nq = xy.shape[0]
    out = np.full(nq, np.inf)
    n = len(pattern)
    if nq == 0 or n == 0:
        return out
    tree = pattern.index.tree
    marks = pattern.marks
    if ids is None:
        ids = np.full(nq, np.iinfo(np.int64).min)
    ids = np.asarray(ids, dtype=np.int64)

    kk = min(2, n)
    dist, idx = tree.query(xy, k=kk)
    dist = dist.reshape(nq, kk)
    idx = idx.reshape(nq, kk)
    own = pattern.ids[idx] == ids[:, None]
    dist = np.where(own, np.inf, dist)
    first = np.argmin(dist, axis=1)
    d0 = dist[np.arange(nq), first]
    m0 = marks[idx[np.arange(nq), first]]

    mmax = np.nanmax(marks) if np.any(~np.isnan(marks)) else np.nan
    mmin = np.nanmin(marks) if np.any(~np.isnan(marks)) else np.nan
    if np.isnan(mmax):
        return out
    if mmax == mmin and not np.any(np.isnan(marks)):
        return np.where(np.isfinite(d0), d0 / mmax, np.inf)

    # Unequal marks: the spatial nearest point gives an upper bound D on the
    # weighted distance; any better point lies within D * max(m').
    bound = d0 / m0
    bound = np.where(np.isnan(bound), np.inf, bound)
    # inflated slightly so rounding in bound * mmax never drops the nearest point itself
    radius = np.where(np.isfinite(bound), bound * mmax * (1 + 1e-9), np.inf)
    for i in range(nq):
        if np.isfinite(radius[i]):
            cand = np.asarray(tree.query_ball_point(xy[i], radius[i]), dtype=np.intp)
        else:
            cand = np.arange(n)
        cand = cand[pattern.ids[cand] != ids[i]]
        if cand.size == 0:
            continue
        w = np.hypot(*(pattern.xy[cand] - xy[i]).T) / marks[cand]
        w = w[~np.isnan(w)]
        if w.size:
            out[i] = w.min()
    return out


@dataclass(frozen=True)
class CensusSeries:
    """Snapshots ``X_0..X_K``, one :class:`PointPattern` per species per census.

    ``snapshots[k][s - 1]`` is species ``s`` at census ``k``.
    """

    window: Window
    snapshots: tuple[tuple[PointPattern, ...], ...]
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.snapshots:
            raise DataError("a census series needs at least one census")
        p = len(self.snapshots[0])
        for k, snap in enumerate(self.snapshots):
            if len(snap) != p:
                raise DataError(f"census {k} has {len(snap)} species, expected {p}")
            for pat in snap:
                if pat.window != self.window:
                    raise ConfigError(f"census {k}: pattern window differs from series window")

    @property
    def K(self) -> int:
        return len(self.snapshots) - 1

    @property
    def n_species(self) -> int:
        return len(self.snapshots[0])

    def pattern(self, k: int, species: int) -> PointPattern:
        return self.snapshots[k][species - 1]

    def recruits(self, k: int, species: int = 1) -> PointPattern:
        return set_difference(self.pattern(k, species), self.pattern(k - 1, species))[0]

    def deaths(self, k: int, species: int = 1) -> PointPattern:
        return set_difference(self.pattern(k, species), self.pattern(k - 1, species))[1]

    def counts(self, species: int = 1) -> list[dict]:
        rows = []
        for k in range(self.K + 1):
            row = {"census": k, "trees": len(self.pattern(k, species))}
            if k > 0:
                row["recruits"] = len(self.recruits(k, species))
                row["deaths"] = len(self.deaths(k, species))
            rows.append(row)
        return rows

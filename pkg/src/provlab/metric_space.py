"""Finite metric spaces, greedy nets and covering-number geometry.

All spaces are finite: a list of hashable point ids plus a dense distance
matrix. Grid spaces are built directly and skip the O(n^3) triangle check.
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Hashable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

_TOL = 1e-12


class MetricError(ValueError):
    """Raised when a distance matrix is not a metric."""


@dataclass(frozen=True, eq=False)
class MetricSpace:
    points: tuple
    dist: np.ndarray
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        dist = np.asarray(self.dist, dtype=float)
        dist.setflags(write=False)
        object.__setattr__(self, "dist", dist)
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "_index", {p: i for i, p in enumerate(self.points)})
        if len(self._index) != len(self.points):
            raise MetricError("duplicate point ids")
        if dist.shape != (len(self.points), len(self.points)):
            raise MetricError(f"dist has shape {dist.shape}, expected {(len(self.points),) * 2}")

    @classmethod
    def from_matrix(cls, dist, points: Sequence[Hashable] | None = None, validate: bool = True) -> "MetricSpace":
        dist = np.asarray(dist, dtype=float)
        if points is None:
            points = range(dist.shape[0])
        space = cls(tuple(points), dist)
        if validate:
            space.validate()
        return space

    @classmethod
    def grid(cls, dims: Sequence[int], spacing: float = 1.0, metric: str = "euclidean") -> "MetricSpace":
        """Axis-aligned grid with points identified by integer coordinate tuples."""
        if metric not in ("euclidean", "sup"):
            raise ValueError(f"unknown grid metric {metric!r}")
        coords = np.array(list(itertools.product(*[range(n) for n in dims])), dtype=float)
        coords = coords.reshape(len(coords), len(dims))
        if len(dims) == 0:
            dist = np.zeros((1, 1))
        else:
            dist = cdist(coords, coords, "chebyshev" if metric == "sup" else "euclidean") * spacing
        ids = [tuple(int(c) for c in row) for row in coords]
        return cls(tuple(ids), dist)

    @classmethod
    def from_coordinates(cls, coords, metric: str = "euclidean", points=None) -> "MetricSpace":
        coords = np.asarray(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if metric not in ("euclidean", "sup"):
            raise ValueError(f"unknown metric {metric!r}")
        dist = cdist(coords, coords, "chebyshev" if metric == "sup" else "euclidean")
        return cls(tuple(range(len(coords)) if points is None else points), dist)

    def __len__(self):
        return len(self.points)

    @property
    def diameter(self) -> float:
        return float(self.dist.max()) if self.dist.size else 0.0

    def index(self, point) -> int:
        try:
            return self._index[point]
        except KeyError:
            raise KeyError(f"point {point!r} is not in this space") from None

    def __contains__(self, point) -> bool:
        try:
            return point in self._index
        except TypeError:
            return False

    def d(self, p, q) -> float:
        return float(self.dist[self.index(p), self.index(q)])

    def validate(self) -> None:
        d = self.dist
        if not np.all(np.isfinite(d)):
            raise MetricError("distances must be finite")
        if np.any(d < 0):
            raise MetricError("negative distance")
        if np.any(np.abs(np.diag(d)) > _TOL):
            raise MetricError("nonzero self-distance")
        if not np.allclose(d, d.T, rtol=0, atol=_TOL):
            raise MetricError("distance matrix is not symmetric")
        for k in range(len(d)):
            # d[i, j] <= d[i, k] + d[k, j] for all i, j
            excess = d - (d[:, k][:, None] + d[k, :][None, :])
            if excess.max() > 1e-9:
                i, j = np.unravel_index(np.argmax(excess), d.shape)
                raise MetricError(f"triangle inequality fails for ({i}, {k}, {j})")

    def subspace(self, points: Sequence[Hashable]) -> "MetricSpace":
        idx = [self.index(p) for p in points]
        return MetricSpace(tuple(points), self.dist[np.ix_(idx, idx)])


@dataclass(frozen=True)
class EpsNet:
    radius: float
    centers: tuple  # indices into space.points
    assignment: np.ndarray  # point index -> center index (into space.points)
    space: MetricSpace = field(repr=False)

    def __len__(self):
        return len(self.centers)

    @property
    def center_ids(self) -> list:
        return [self.space.points[c] for c in self.centers]

    def covering_radius(self) -> float:
        """Largest distance from a point to its assigned center."""
        d = self.space.dist[np.arange(len(self.space)), self.assignment]
        return float(d.max()) if d.size else 0.0


def build_greedy_net(space: MetricSpace, radius: float) -> EpsNet:
    """Farthest-point greedy net.

    Starts at point 0 and keeps adding the point farthest from the current
    centers (lowest index on ties) while that distance exceeds `radius`.
    Every point ends within `radius` of a center and centers are pairwise
    more than `radius` apart.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    n = len(space)
    if n == 0:
        return EpsNet(radius, (), np.zeros(0, dtype=int), space)
    d = space.dist
    centers = [0]
    nearest = d[0].copy()
    while True:
        far = int(np.argmax(nearest))
        if nearest[far] <= radius:
            break
        centers.append(far)
        nearest = np.minimum(nearest, d[far])
    centers_arr = np.array(centers)
    assignment = centers_arr[np.argmin(d[:, centers_arr], axis=1)]
    return EpsNet(float(radius), tuple(centers), assignment, space)


def covering_number(space: MetricSpace, radius: float) -> int:
    """Size of the greedy `radius`-net.

    The greedy net is both a `radius`-cover and a `radius`-packing, so the
    true covering number N(r) satisfies N(r) <= result <= N(r/2).
    """
    return len(build_greedy_net(space, radius))


@dataclass(frozen=True)
class DimensionFit:
    slope: float
    intercept: float
    residual: float
    radii: tuple
    counts: tuple

    def __float__(self):
        return self.slope


def fit_doubling_dimension(space: MetricSpace, radii: Sequence[float]) -> DimensionFit:
    """Least-squares slope of log N(r) against log(1/r)."""
    radii = [float(r) for r in radii]
    if len(radii) < 3:
        raise ValueError("need at least 3 radii")
    if len(set(radii)) < 2:
        raise ValueError("radii are degenerate (all equal)")
    if max(radii) / min(radii) < 10:
        warnings.warn("radii span less than a decade; the slope is poorly determined", stacklevel=2)
    counts = [covering_number(space, r) for r in radii]
    x = np.log(1.0 / np.asarray(radii))
    y = np.log(np.asarray(counts, dtype=float))
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ np.array([slope, intercept]) - y) ** 2)))
    return DimensionFit(float(slope), float(intercept), resid, tuple(radii), tuple(counts))


def lipschitz_entropy_bound(radius: float, lip_const: float, doubling_dim: float, c_domain: float) -> float:
    """C * (L/eps)^d * log(1/eps): log-covering bound for L-Lipschitz classes."""
    if radius >= 1:
        raise ValueError("radius must be < 1")
    if min(radius, lip_const, doubling_dim, c_domain) <= 0:
        raise ValueError("all inputs must be positive")
    return c_domain * (lip_const / radius) ** doubling_dim * math.log(1.0 / radius)


def load_metric_space(doc: dict[str, Any] | str) -> MetricSpace:
    """Build a space from {"points", "dist"} or {"grid": {...}} JSON."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    if "grid" in doc:
        g = doc["grid"]
        return MetricSpace.grid(g["dims"], g.get("spacing", 1.0), g.get("metric", "euclidean"))
    points = [tuple(p) if isinstance(p, list) else p for p in doc["points"]]
    return MetricSpace.from_matrix(doc["dist"], points)


def dump_metric_space(space: MetricSpace) -> dict:
    return {"points": [list(p) if isinstance(p, tuple) else p for p in space.points],
            "dist": space.dist.tolist()}

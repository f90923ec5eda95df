"""Atomic goal measures and the bounded-Lipschitz distance between them."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Hashable, Iterable

import numpy as np
from scipy.optimize import linprog

from .metric_space import MetricSpace


def _sort_key(p):
    return (type(p).__name__, repr(p)) if not isinstance(p, (int, float, tuple, str)) else (type(p).__name__, p)


@dataclass(frozen=True)
class GoalMeasure:
    """Finite positive atomic measure; the zero measure is the solved state.

    Atoms are merged on identical point ids (never by distance) and kept in
    a canonical order, so equality and hashing ignore input order.
    """

    support: tuple  # ((point, weight), ...)

    def __init__(self, atoms: Iterable[tuple[Hashable, float]] = ()):
        merged: dict = {}
        for p, w in atoms:
            w = float(w)
            if not w > 0:
                raise ValueError(f"atom weights must be positive, got {w}")
            merged[p] = merged.get(p, 0.0) + w
        object.__setattr__(self, "support", tuple(sorted(merged.items(), key=lambda t: _sort_key(t[0]))))

    @classmethod
    def from_points(cls, points: Iterable[Hashable]) -> "GoalMeasure":
        """Sum of unit Dirac masses, one per (possibly repeated) goal."""
        return cls((p, 1.0) for p in points)

    @property
    def total_mass(self) -> float:
        return float(sum(w for _, w in self.support))

    @property
    def points(self) -> list:
        return [p for p, _ in self.support]

    def __len__(self):
        return len(self.support)

    def __add__(self, other: "GoalMeasure") -> "GoalMeasure":
        return GoalMeasure(self.support + other.support)

    def to_json(self) -> list:
        return [{"point": list(p) if isinstance(p, tuple) else p, "weight": w} for p, w in self.support]

    @classmethod
    def from_json(cls, doc) -> "GoalMeasure":
        if isinstance(doc, str):
            doc = json.loads(doc)
        return cls((tuple(a["point"]) if isinstance(a["point"], list) else a["point"], a["weight"]) for a in doc)


ZERO = GoalMeasure()


def mass(x: GoalMeasure) -> float:
    return x.total_mass


def is_solved(x: GoalMeasure) -> bool:
    return len(x.support) == 0


@dataclass(frozen=True)
class BLWitness:
    points: tuple
    values: np.ndarray
    objective: float

    def as_dict(self) -> dict:
        return dict(zip(self.points, self.values.tolist()))


def _signed_weights(a: GoalMeasure, b: GoalMeasure):
    pts = sorted(set(a.points) | set(b.points), key=_sort_key)
    wa, wb = dict(a.support), dict(b.support)
    c = np.array([wa.get(p, 0.0) - wb.get(p, 0.0) for p in pts])
    return pts, c


def bl_distance(a: GoalMeasure, b: GoalMeasure, space: MetricSpace) -> tuple[float, BLWitness]:
    """Exact d_BL(a, b) via the dual LP on the union support.

    maximize sum_i c_i f_i  s.t.  |f_i| <= 1,  f_i - f_j <= d(p_i, p_j),
    where c is the signed weight vector of a - b. Returns the optimum and an
    optimal f, which `check_witness` can re-verify independently.
    """
    pts, c = _signed_weights(a, b)
    for p in pts:
        if p not in space:
            raise KeyError(f"support point {p!r} is not in the metric space")
    n = len(pts)
    if n == 0 or not np.any(c):
        return 0.0, BLWitness(tuple(pts), np.zeros(n), 0.0)
    idx = [space.index(p) for p in pts]
    D = space.dist[np.ix_(idx, idx)]
    rows, rhs = [], []
    for i in range(n):
        for j in range(n):
            # |f_i - f_j| <= 2 always holds, so those rows are redundant
            if i != j and D[i, j] < 2.0:
                r = np.zeros(n)
                r[i], r[j] = 1.0, -1.0
                rows.append(r)
                rhs.append(D[i, j])
    res = linprog(
        -c,
        A_ub=np.array(rows) if rows else None,
        b_ub=np.array(rhs) if rows else None,
        bounds=[(-1.0, 1.0)] * n,
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"BL linear program failed: {res.message}")
    f = np.clip(res.x, -1.0, 1.0)
    obj = float(c @ f)
    return obj, BLWitness(tuple(pts), f, obj)


def check_witness(a: GoalMeasure, b: GoalMeasure, w: BLWitness, space: MetricSpace, tol: float = 1e-9) -> bool:
    """Re-check feasibility of a BL witness and its objective."""
    f = w.values
    if np.any(np.abs(f) > 1 + tol):
        return False
    idx = [space.index(p) for p in w.points]
    D = space.dist[np.ix_(idx, idx)]
    if np.any(np.abs(f[:, None] - f[None, :]) > D + tol):
        return False
    pts, c = _signed_weights(a, b)
    if tuple(pts) != tuple(w.points):
        return False
    return abs(float(c @ f) - w.objective) <= tol

"""Brute-force reference implementations used as test oracles.

Nothing here imports the package's solvers. Models are plain dicts
(`trans[s]` is a list of {next: prob} per action) so the recursions below
share no code with the sparse Bellman implementation.
"""
from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog


def random_transitions(rng: np.random.Generator, n_states: int, max_actions: int, n_succ: int = 3,
                       goal_frac: float = 0.15, ragged: bool = True):
    goal = rng.random(n_states) < goal_frac
    goal[rng.integers(n_states)] = True
    trans = {}
    for s in range(n_states):
        na = int(rng.integers(1, max_actions + 1)) if ragged else max_actions
        acts = []
        for _ in range(na):
            k = int(rng.integers(1, min(n_succ, n_states) + 1))
            succ = rng.choice(n_states, size=k, replace=False)
            p = rng.dirichlet(np.ones(k))
            acts.append({int(t): float(q) for t, q in zip(succ, p)})
        trans[s] = acts
    return trans, goal


def enumerate_optimal(trans: dict, goal, horizon: int) -> np.ndarray:
    """V*[b][s] by explicit recursion over the trajectory tree."""
    goal = [bool(g) for g in goal]

    @lru_cache(maxsize=None)
    def v(s: int, b: int) -> float:
        if goal[s]:
            return 1.0
        if b == 0:
            return 0.0
        return max(sum(p * v(t, b - 1) for t, p in dist.items()) for dist in trans[s])

    return np.array([[v(s, b) for s in range(len(trans))] for b in range(horizon + 1)])


def enumerate_paths_success(trans: dict, goal, horizon: int, s0: int, choose) -> float:
    """Sum of probabilities of all goal-hitting paths of length <= horizon
    under the deterministic Markov policy choose(b, s) -> action, listing
    every path explicitly."""
    total = 0.0
    stack = [(s0, horizon, 1.0)]
    while stack:
        s, b, pr = stack.pop()
        if goal[s]:
            total += pr
            continue
        if b == 0:
            continue
        for t, p in trans[s][choose(b, s)].items():
            stack.append((t, b - 1, pr * p))
    return total


def brute_force_optimal(trans: dict, goal, horizon: int, s0: int) -> float:
    """Max over every deterministic Markov policy restricted to the states
    reachable from s0, each scored by path enumeration. Exponential; only
    for tiny models."""
    reach = {s0}
    frontier = {s0}
    for _ in range(horizon):
        frontier = {t for s in frontier if not goal[s] for d in trans[s] for t in d}
        reach |= frontier
    keys = [(b, s) for b in range(1, horizon + 1) for s in sorted(reach) if not goal[s]]
    best = 0.0
    for combo in itertools.product(*[range(len(trans[s])) for _, s in keys]):
        table = dict(zip(keys, combo))
        best = max(best, enumerate_paths_success(trans, goal, horizon, s0, lambda b, s: table[(b, s)]))
    return best


def enumerate_policy_value(trans: dict, goal, horizon: int, s0: int, probs) -> float:
    """V^pi_B(s0) for a stochastic Markov policy probs[b][s][a] by recursion."""

    @lru_cache(maxsize=None)
    def v(s: int, b: int) -> float:
        if goal[s]:
            return 1.0
        if b == 0:
            return 0.0
        return sum(probs[b][s][a] * sum(p * v(t, b - 1) for t, p in dist.items())
                   for a, dist in enumerate(trans[s]))

    return v(s0, horizon)


def bl_primal(wa: dict, wb: dict, dist) -> float:
    """BL distance as a transport problem.

    Points carry the ground metric min(d, 2) and a ghost point at distance
    1 from every point absorbs the mass imbalance. The dual of this
    transport problem is the BL dual with the witness fixed to 0 at the ghost.
    """
    pts = sorted(set(wa) | set(wb), key=repr)
    n = len(pts)
    a = np.array([wa.get(p, 0.0) for p in pts] + [0.0])
    b = np.array([wb.get(p, 0.0) for p in pts] + [0.0])
    imbalance = a.sum() - b.sum()
    if imbalance > 0:
        b[-1] += imbalance
    else:
        a[-1] -= imbalance
    C = np.ones((n + 1, n + 1))
    for i, p in enumerate(pts):
        for j, q in enumerate(pts):
            C[i, j] = min(dist(p, q), 2.0)
    C[n, n] = 0.0
    m = n + 1
    A_eq, b_eq = [], []
    for i in range(m):
        r = np.zeros((m, m))
        r[i, :] = 1
        A_eq.append(r.ravel())
        b_eq.append(a[i])
    for j in range(m):
        r = np.zeros((m, m))
        r[:, j] = 1
        A_eq.append(r.ravel())
        b_eq.append(b[j])
    res = linprog(C.ravel(), A_eq=np.array(A_eq), b_eq=np.array(b_eq), bounds=(0, None), method="highs")
    assert res.status == 0, res.message
    return float(res.fun)


def covering_number_1d(xs, r: float) -> int:
    """Exact minimum number of closed r-balls centred at sample points that
    cover a finite subset of the real line (left-to-right sweep)."""
    xs = np.sort(np.asarray(xs, dtype=float))
    count, i, n = 0, 0, len(xs)
    while i < n:
        left = xs[i]
        j = i
        while j + 1 < n and xs[j + 1] <= left + r + 1e-12:
            j += 1
        centre = xs[j]
        count += 1
        while i < n and xs[i] <= centre + r + 1e-12:
            i += 1
    return count


def overflow_by_paths(trans: dict, masses, horizon: int, s0: int, choose, w: float) -> float:
    """P(max mass along the path > w) by listing all length-horizon paths."""
    total = 0.0
    stack = [(s0, horizon, 1.0, masses[s0] > w)]
    while stack:
        s, b, pr, over = stack.pop()
        if b == 0:
            total += pr * over
            continue
        for t, p in trans[s][choose(b, s)].items():
            stack.append((t, b - 1, pr * p, over or masses[t] > w))
    return total

"""Score-guided planners, regret against the exact oracle, occupancy and margins."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mdp import MdpModel, PolicyTable, ValueTables, evaluate_policy, sample_next, solve_exact

BOUND_TOL = 1e-9


def per_depth(eps, horizon: int) -> np.ndarray:
    """Broadcast a scalar or per-depth sequence to an array indexed b = 0..B.

    A length-B sequence is read as b = 1..B; entry 0 is always 0.
    """
    eps = np.asarray(eps, dtype=float)
    if eps.ndim == 0:
        out = np.full(horizon + 1, float(eps))
    elif len(eps) == horizon:
        out = np.concatenate([[0.0], eps])
    elif len(eps) == horizon + 1:
        out = eps.copy()
    else:
        raise ValueError(f"per-depth array has length {len(eps)}, expected {horizon} or {horizon + 1}")
    out[0] = 0.0
    if np.any(out < 0):
        raise ValueError("eps must be nonnegative")
    return out


@dataclass(frozen=True)
class ScoreFunction:
    """Scores h_b(x, a) for b = 1..B; values[0] is unused.

    Values are kept exactly as given (no clipping) so rank-only operations
    can be tested with shifted scores; `perturbed_scores` clips to [0, 1].
    """

    values: np.ndarray  # (B+1, S, A)
    mask: np.ndarray  # (S, A) valid action slots
    declared_eps: np.ndarray | None = None  # (B+1,)
    kind: str = "tabular"
    estimators: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.where(self.mask[None], np.asarray(self.values, dtype=float), -np.inf)
        object.__setattr__(self, "values", v)
        if self.declared_eps is not None:
            object.__setattr__(self, "declared_eps", per_depth(self.declared_eps, self.horizon))

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    @classmethod
    def from_q(cls, model: MdpModel, tables: ValueTables, eps=None) -> "ScoreFunction":
        return cls(np.nan_to_num(tables.q_star, nan=0.0), model.action_mask, eps)

    def with_eps(self, eps) -> "ScoreFunction":
        return ScoreFunction(self.values, self.mask, eps, self.kind, self.estimators)

    def sup_error(self, tables: ValueTables, domain: np.ndarray | None = None) -> np.ndarray:
        """max |h_b - Q_b^*| per depth over `domain` ((B+1, S) bool; default everything)."""
        B = self.horizon
        err = np.zeros(B + 1)
        for b in range(1, B + 1):
            diff = np.where(self.mask, np.abs(np.where(self.mask, self.values[b], 0.0)
                                              - np.where(self.mask, tables.q_star[b], 0.0)), 0.0)
            if domain is not None:
                diff = diff[domain[b]]
            err[b] = diff.max() if diff.size else 0.0
        return err

    def verify_eps(self, tables: ValueTables, domain: np.ndarray | None = None, tol: float = 1e-12) -> bool:
        if self.declared_eps is None:
            return False
        return bool(np.all(self.sup_error(tables, domain) <= self.declared_eps + tol))


def perturbed_scores(model: MdpModel, tables: ValueTables, eps, rng: np.random.Generator) -> ScoreFunction:
    """q_star + independent uniform(-eps_b, eps_b) noise, clipped to [0, 1]."""
    B = model.horizon
    e = per_depth(eps, B)
    noise = rng.uniform(-1.0, 1.0, size=tables.q_star.shape) * e[:, None, None]
    vals = np.clip(np.nan_to_num(tables.q_star, nan=0.0, neginf=0.0) + noise, 0.0, 1.0)
    return ScoreFunction(vals, model.action_mask, e)


def relevant_domain(model: MdpModel, starts) -> np.ndarray:
    """dom[b, x]: x is non-goal and reachable within B - b steps from a start
    without passing through the goal set (any policy)."""
    B, S = model.horizon, model.n_states
    starts = np.atleast_1d(np.asarray(starts))
    if starts.dtype == bool:
        starts = np.flatnonzero(starts)
    K = model.kernel.tocoo()
    succ = np.zeros((S, S), dtype=bool) if S <= 4000 else None
    frontier = np.zeros(S, dtype=bool)
    frontier[starts] = True
    within = [frontier.copy()]
    if succ is not None:
        # successor support under any action
        succ[K.row // model.max_actions, K.col] = True
    for _ in range(B):
        live = within[-1] & ~model.goal
        if succ is not None:
            nxt = succ[live].any(axis=0)
        else:
            rows = np.isin(K.row // model.max_actions, np.flatnonzero(live))
            nxt = np.zeros(S, dtype=bool)
            nxt[K.col[rows]] = True
        within.append(within[-1] | nxt)
    dom = np.zeros((B + 1, S), dtype=bool)
    for b in range(1, B + 1):
        dom[b] = within[B - b] & ~model.goal
    return dom


def _rank(values_bs: np.ndarray) -> np.ndarray:
    # descending by score, ties by lowest action index
    return np.argsort(-values_bs, axis=-1, kind="stable")


def greedy_policy(scores: ScoreFunction) -> PolicyTable:
    choice = np.argmax(scores.values, axis=2)
    choice[0] = 0
    return PolicyTable.deterministic(choice, scores.values.shape[2])


def topk_policy(scores: ScoreFunction, k: int, tie_break: str = "uniform", tables: ValueTables | None = None) -> PolicyTable:
    """Restrict each (b, x) to its k highest-scoring actions.

    uniform: randomise over the retained set. exact_best: take the action
    with the largest Q_b^* inside the retained set (needs `tables`).
    States with fewer than k actions retain all of them.
    """
    A = scores.values.shape[2]
    if k < 1 or k > A:
        raise ValueError(f"k={k} must lie in [1, {A}]")
    if tie_break not in ("uniform", "exact_best"):
        raise ValueError(f"unknown tie_break {tie_break!r}")
    order = _rank(scores.values)[..., :k]  # (B+1, S, k)
    n_act = scores.mask.sum(axis=1)
    keep = np.zeros(scores.values.shape, dtype=bool)
    np.put_along_axis(keep, order, True, axis=2)
    keep &= scores.mask[None]
    if tie_break == "uniform":
        probs = keep / np.minimum(n_act, k)[None, :, None]
        probs[0] = 0.0
        probs[0, :, 0] = 1.0
        return PolicyTable(probs)
    if tables is None:
        raise ValueError("exact_best mode needs the exact value tables")
    q = np.where(keep, np.nan_to_num(tables.q_star, nan=-np.inf), -np.inf)
    choice = np.argmax(q, axis=2)
    choice[0] = 0
    return PolicyTable.deterministic(choice, A)


@dataclass
class BeamNode:
    depth: int
    state: int
    parent: int  # index into the previous level, -1 for the root
    action: int  # action taken from the parent, -1 for the root
    score: float


@dataclass
class BeamResult:
    success: bool
    levels: list  # list of lists of BeamNode

    @property
    def expanded(self) -> int:
        return sum(len(lv) for lv in self.levels)


def beam_search(model: MdpModel, scores: ScoreFunction, width: int, start, seed: int) -> BeamResult:
    """Depth-synchronous beam over sampled successors.

    At each depth every beam node proposes all of its actions, one sampled
    successor per (node, action) from a per-node seed; the `width` highest
    scoring proposals (ties: earlier node, then lower action) form the next
    beam. Success iff some node reaches the goal set within B steps.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    s0 = model.state_index(start)
    levels = [[BeamNode(0, s0, -1, -1, math.inf)]]
    if model.goal[s0]:
        return BeamResult(True, levels)
    B = model.horizon
    for t in range(B):
        b = B - t
        cands = []
        for i, node in enumerate(levels[-1]):
            n_a = model.n_actions[node.state]
            rng = np.random.default_rng([seed, t, i, node.state])
            acts = np.arange(n_a)
            nxt = sample_next(model, np.full(n_a, node.state), acts, rng.random(n_a))
            for a in acts:
                cands.append((-scores.values[b, node.state, a], i, int(a), int(nxt[a])))
        cands.sort(key=lambda c: (c[0], c[1], c[2]))
        level = [BeamNode(t + 1, s, i, a, -negsc) for negsc, i, a, s in cands[:width]]
        levels.append(level)
        if any(model.goal[n.state] for n in level):
            return BeamResult(True, levels)
    return BeamResult(False, levels)


@dataclass
class RegretReport:
    regret: float
    bound: float | None
    holds: bool | None
    eps: np.ndarray | None = None


def regret(model: MdpModel, policy: PolicyTable, x0, tables: ValueTables | None = None) -> float:
    tables = tables or solve_exact(model)
    v = evaluate_policy(model, policy)
    s = model.state_index(x0)
    return float(tables.v_star[-1, s] - v[-1, s])


def measure_regret(model: MdpModel, policy: PolicyTable, x0, scores: ScoreFunction | None = None,
                   tables: ValueTables | None = None) -> RegretReport:
    """Exact regret and the 2 * sum_b eps_b bound.

    The bound is only asserted when the score function's declared eps has
    been verified against Q^* on the states relevant from x0; otherwise
    `bound` and `holds` are None.
    """
    tables = tables or solve_exact(model)
    r = regret(model, policy, x0, tables)
    if scores is None or scores.declared_eps is None:
        return RegretReport(r, None, None)
    dom = relevant_domain(model, [model.state_index(x0)])
    if not scores.verify_eps(tables, dom):
        return RegretReport(r, None, None, scores.declared_eps)
    bound = 2.0 * float(scores.declared_eps[1:].sum())
    return RegretReport(r, bound, r <= bound + BOUND_TOL, scores.declared_eps)


def one_step_losses(tables: ValueTables, policy: PolicyTable) -> np.ndarray:
    """r_b(x) = max_a Q_b^*(x, a) - E_{a ~ pi}[Q_b^*(x, a)], shape (B+1, S)."""
    q = np.nan_to_num(tables.q_star, nan=0.0, neginf=0.0)
    best = np.nan_to_num(tables.q_star, nan=0.0).max(axis=2)
    chosen = (policy.probs[: len(q)] * q).sum(axis=2)
    out = best - chosen
    out[0] = 0.0
    return out


def action_gaps(q_rows: np.ndarray, k: int = 1) -> np.ndarray:
    """Delta^(k): best minus (k+1)-th best value per row; +inf with <= k actions."""
    q_rows = np.asarray(q_rows, dtype=float)
    srt = -np.sort(-np.where(np.isnan(q_rows), -np.inf, q_rows), axis=-1)
    if srt.shape[-1] <= k:
        return np.full(srt.shape[:-1], np.inf)
    gap = srt[..., 0] - srt[..., k]
    return np.where(np.isfinite(srt[..., k]), gap, np.inf)


@dataclass(frozen=True)
class OccupancySample:
    depth: int
    weights: np.ndarray  # (S,) sums to 1
    conditioned_on_alive: bool


def occupancy(model: MdpModel, policy: PolicyTable, q0, depth: int, alive_only: bool = False) -> OccupancySample:
    """Law of X_{depth-1} (optionally given no goal hit at times 0..depth-1).

    The decision at time t uses the policy row for B - t steps to go.
    """
    B = model.horizon
    if not 1 <= depth <= B:
        raise ValueError(f"depth must lie in [1, {B}]")
    mu = np.asarray(q0, dtype=float).copy()
    S, A = model.n_states, model.max_actions
    KT = model.kernel.T.tocsr()
    for t in range(depth - 1):
        if alive_only:
            mu = np.where(model.goal, 0.0, mu)
        sa = (mu[:, None] * policy.probs[B - t]).ravel()
        mu = KT @ sa
    if alive_only:
        mu = np.where(model.goal, 0.0, mu)
    tot = mu.sum()
    if tot <= 0:
        raise ValueError(f"no alive mass at depth {depth}")
    return OccupancySample(depth, mu / tot, alive_only)


@dataclass
class MarginStats:
    k: int
    samples: list  # (depth b, state, gap, weight)
    fitted_c: float | None
    fitted_beta: float | None
    fit_range: tuple
    alive_only: bool
    diagnostic: str = ""
    n_fit_points: int = 0

    def cdf(self, t: float) -> float:
        n_depth = len({b for b, *_ in self.samples}) or 1
        return sum(w for _, _, g, w in self.samples if g <= t) / n_depth


NO_SMALL_MARGIN = math.inf
MIN_DISTINCT_GAPS = 20


def margin_stats(model: MdpModel, tables: ValueTables, occ: Sequence[OccupancySample], k: int,
                 fit_range: tuple[float, float]) -> MarginStats:
    """Occupancy-weighted (k+1)-gap tail and a log-log fit of C t^beta.

    The occupancy at depth b (state X_{b-1}) pairs with Q^*_{B-b+1}.
    States with <= k actions have an infinite gap: they count in the
    denominator but never in the tail. The fit needs at least 20 distinct
    gap values in `fit_range`; otherwise it is refused with a diagnostic.
    """
    B = model.horizon
    samples = []
    for o in occ:
        gaps = action_gaps(tables.q_star[B - o.depth + 1], k)
        for s in np.flatnonzero(o.weights > 0):
            samples.append((o.depth, int(s), float(gaps[s]), float(o.weights[s])))
    alive = any(o.conditioned_on_alive for o in occ)
    lo, hi = fit_range
    stats = MarginStats(k, samples, None, None, (lo, hi), alive)
    if not samples:
        stats.diagnostic = "no occupancy samples"
        return stats
    if stats.cdf(hi) == 0.0:
        stats.fitted_beta, stats.fitted_c = NO_SMALL_MARGIN, 0.0
        stats.diagnostic = "no small-margin mass"
        return stats
    ts = np.array(sorted({g for _, _, g, _ in samples if lo <= g <= hi and g > 0}))
    if len(ts) < MIN_DISTINCT_GAPS:
        stats.diagnostic = f"fit refused: {len(ts)} distinct gaps in range (need {MIN_DISTINCT_GAPS})"
        return stats
    gaps = np.array([g for _, _, g, _ in samples])
    w = np.array([w for *_, w in samples])
    n_depth = len({b for b, *_ in samples})
    order = np.argsort(gaps)
    cum = np.cumsum(w[order]) / n_depth
    F = cum[np.searchsorted(gaps[order], ts, side="right") - 1]
    slope, intercept = loglog_fit(ts, F)
    stats.fitted_beta, stats.fitted_c = slope, math.exp(intercept)
    stats.n_fit_points = len(ts)
    return stats


def loglog_fit(x, y) -> tuple[float, float]:
    """Least-squares (slope, intercept) of log y on log x."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        raise ValueError("need at least two positive points for a log-log fit")
    A = np.vstack([np.log(x[keep]), np.ones(keep.sum())]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, np.log(y[keep]), rcond=None)
    return float(slope), float(intercept)


def expected_regret(model: MdpModel, policy: PolicyTable, dist, tables: ValueTables) -> float:
    """E_{x0 ~ dist}[V_B^* - V_B^pi]."""
    v = evaluate_policy(model, policy)
    return float(np.dot(np.asarray(dist, float), tables.v_star[-1] - v[-1]))


def fast_rate_experiment(model: MdpModel, k: int, eps_grid: Sequence[float], trials: int, seed: int,
                         dist=None, tables: ValueTables | None = None, tie_break: str = "exact_best") -> list[dict]:
    """Mean exact regret of top-k plans built from eps-perturbed Q^* per eps.

    Each trial draws fresh uniform(-eps, eps) noise (clipped) from a
    generator keyed by (seed, eps index, trial). `bound` is the worst-case
    2 * B * eps.
    """
    tables = tables or solve_exact(model)
    B = model.horizon
    if dist is None:
        dist = np.zeros(model.n_states)
        dist[0] = 1.0
    rows = []
    for i, eps in enumerate(eps_grid):
        regs = np.empty(trials)
        for t in range(trials):
            rng = np.random.default_rng([seed, i, t])
            sc = perturbed_scores(model, tables, eps, rng)
            pol = topk_policy(sc, k, tie_break, tables)
            regs[t] = expected_regret(model, pol, dist, tables)
        rows.append({"epsilon": float(eps), "mean_regret": float(regs.mean()),
                     "std": float(regs.std(ddof=1)) if trials > 1 else 0.0,
                     "trials": trials, "bound": 2.0 * B * float(eps)})
    return rows

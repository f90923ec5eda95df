"""Rollout labels, the net + McShane estimator and deviation-bound checks."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .goal_measure import bl_distance
from .metric_space import EpsNet, MetricSpace, build_greedy_net
from .mdp import MdpModel, PolicyTable, ValueTables, optimal_policy, sample_actions, sample_next


@dataclass
class RolloutDataset:
    depth: int
    states: np.ndarray
    actions: np.ndarray
    labels: np.ndarray  # 0/1
    seeds: np.ndarray  # per-record seed (the pair's spawn key)
    continuation: str = "unknown"
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["b", "state", "action", "y", "seed"])
        for s, a, y, sd in zip(self.states, self.actions, self.labels, self.seeds):
            w.writerow([self.depth, int(s), int(a), int(y), int(sd)])
        return buf.getvalue()

    def means(self) -> dict:
        """Mean label per (state, action)."""
        out = {}
        keys = self.states.astype(np.int64) * (self.actions.max() + 1 if len(self.actions) else 1) + self.actions
        for k in np.unique(keys):
            sel = keys == k
            out[(int(self.states[sel][0]), int(self.actions[sel][0]))] = float(self.labels[sel].mean())
        return out


def rollout_labels(model: MdpModel, continuation: PolicyTable, depth: int, pairs: Sequence[tuple[int, int]],
                   m: int, seed: int, continuation_name: str = "custom") -> RolloutDataset:
    """m Monte Carlo labels per (x, a): apply a once, then follow the
    continuation for at most depth - 1 steps; Y = 1 iff the goal is hit.

    E[Y | x, a] is the continuation's Q-value, which equals Q^*_depth only
    when the continuation is optimal.
    """
    if depth < 1 or m < 1:
        raise ValueError("need depth >= 1 and m >= 1")
    pairs = [(int(x), int(a)) for x, a in pairs]
    xs = np.repeat([p[0] for p in pairs], m)
    as_ = np.repeat([p[1] for p in pairs], m)
    pair_seed = np.repeat(np.arange(len(pairs)), m)
    rng = np.random.default_rng([seed, depth])
    s = sample_next(model, xs, as_, rng.random(len(xs)))
    hit = model.goal[s].copy()
    for b in range(depth - 1, 0, -1):
        live = np.flatnonzero(~hit)
        if live.size == 0:
            break
        a = sample_actions(continuation, b, s[live], rng.random(live.size))
        s[live] = sample_next(model, s[live], a, rng.random(live.size))
        hit[live] |= model.goal[s[live]]
    return RolloutDataset(depth, xs, as_, hit.astype(np.int8), pair_seed, continuation_name,
                          {"seed": seed, "m": m, "unbiased_for_q_star": continuation_name == "optimal"})


def optimal_rollout_labels(model: MdpModel, tables: ValueTables, depth: int, pairs, m: int, seed: int) -> RolloutDataset:
    return rollout_labels(model, optimal_policy(model, tables), depth, pairs, m, seed, "optimal")


# -- domain metric on (state, action) pairs ------------------------------

def pair_space(model: MdpModel, pairs: Sequence[tuple[int, int]] | None = None, state_dist=None,
               action_dist=None, space: MetricSpace | None = None) -> MetricSpace:
    """Metric d((x,a),(x',a')) = d_state(x,x') + d_action(a,a').

    d_state is a supplied (S, S) matrix or, failing that, the BL distance
    between goal-measure payloads over `space`; d_action defaults to the
    0/1 discrete metric on action indices.
    """
    if pairs is None:
        pairs = [(s, a) for s in range(model.n_states) if not model.goal[s] for a in range(model.n_actions[s])]
    pairs = [(int(x), int(a)) for x, a in pairs]
    xs = np.array([p[0] for p in pairs])
    as_ = np.array([p[1] for p in pairs])
    if state_dist is None:
        if model.payloads is None or space is None:
            raise ValueError("need state_dist or goal-measure payloads with a metric space")
        state_dist = payload_distances(model, space, np.unique(xs))
    state_dist = np.asarray(state_dist, dtype=float)
    if action_dist is None:
        da = (as_[:, None] != as_[None, :]).astype(float)
    else:
        da = np.asarray(action_dist, dtype=float)[np.ix_(as_, as_)]
    D = state_dist[np.ix_(xs, xs)] + da
    return MetricSpace(tuple(pairs), D)


def payload_distances(model: MdpModel, space: MetricSpace, states=None) -> np.ndarray:
    """(S, S) matrix of BL distances between payloads (only `states` filled)."""
    S = model.n_states
    states = range(S) if states is None else [int(s) for s in states]
    D = np.zeros((S, S))
    states = list(states)
    for i, x in enumerate(states):
        for y in states[i + 1:]:
            D[x, y] = D[y, x] = bl_distance(model.payloads[x], model.payloads[y], space)[0]
    return D


# -- net estimator --------------------------------------------------------

@dataclass(frozen=True)
class NetEstimator:
    net: EpsNet
    q_hat: np.ndarray  # per net center
    m: int
    lip_const: float
    clip_range: tuple = (0.0, 1.0)

    @property
    def eta(self) -> float:
        return self.net.radius

    @property
    def n_centers(self) -> int:
        return len(self.net)

    @property
    def slack(self) -> np.ndarray:
        """q_hat_i minus the extension's value at center i (>= 0)."""
        return self.q_hat - self.center_values()

    def center_values(self) -> np.ndarray:
        c = np.array(self.net.centers)
        return self._extend(self.net.space.dist[np.ix_(c, c)], clip=False)

    def _extend(self, d_to_centers: np.ndarray, clip: bool = True) -> np.ndarray:
        v = (self.q_hat[None, :] + self.lip_const * d_to_centers).min(axis=1)
        return np.clip(v, *self.clip_range) if clip else v

    def values(self, clip: bool = True) -> np.ndarray:
        """Estimator on every point of the domain space."""
        return self._extend(self.net.space.dist[:, list(self.net.centers)], clip)

    def __call__(self, pair) -> float:
        return evaluate_estimator(self, pair)


def fit_net_estimator(domain_space: MetricSpace, labels: RolloutDataset, eta: float, lip_const: float,
                      net: EpsNet | None = None) -> NetEstimator:
    """Average the labels at each center of the greedy eta-net."""
    net = net or build_greedy_net(domain_space, eta)
    width = int(labels.actions.max()) + 1 if len(labels) else 1
    keys = labels.states.astype(np.int64) * width + labels.actions
    uniq, inv = np.unique(keys, return_inverse=True)
    counts = np.bincount(inv)
    sums = np.bincount(inv, weights=labels.labels.astype(float))
    q_hat, ms = [], set()
    for c in net.center_ids:
        x, a = (int(v) for v in c)
        j = np.searchsorted(uniq, x * width + a)
        if a >= width or j >= len(uniq) or uniq[j] != x * width + a:
            raise ValueError(f"net center {c!r} has no labels")
        ms.add(int(counts[j]))
        q_hat.append(sums[j] / counts[j])
    if len(ms) != 1:
        raise ValueError("every net center needs the same number of labels")
    return NetEstimator(net, np.array(q_hat), ms.pop(), float(lip_const))


def estimator_from_values(net: EpsNet, q_hat, m: int, lip_const: float) -> NetEstimator:
    return NetEstimator(net, np.asarray(q_hat, dtype=float), m, float(lip_const))


def evaluate_estimator(est: NetEstimator, pair) -> float:
    """Upper McShane extension clip(min_i q_hat_i + L_H d(pair, z_i))."""
    i = est.net.space.index(tuple(pair) if isinstance(pair, list) else pair)
    d = est.net.space.dist[i, list(est.net.centers)]
    return float(est._extend(d[None, :])[0])


def hoeffding_net_term(n_centers: int, m: int, delta: float) -> float:
    return math.sqrt(math.log(2 * n_centers / delta) / (2 * m))


def uniform_error_bound(est: NetEstimator, eps_app: float, lip_target: float, delta: float) -> float:
    """eps_app + (L_H + L_Q) eta + sqrt(log(2N/delta) / (2m))."""
    return explicit_bound(est.n_centers, est.m, est.eta, est.lip_const, lip_target, eps_app, delta)


def explicit_bound(n_centers: int, m: int, eta: float, lip_h: float, lip_q: float, eps_app: float, delta: float) -> float:
    if min(n_centers, m) < 1 or min(eta, lip_h, lip_q, eps_app) < 0:
        raise ValueError("inputs must be nonnegative with N, m >= 1")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return eps_app + (lip_h + lip_q) * eta + hoeffding_net_term(n_centers, m, delta)


def lipschitz_constant(values, space: MetricSpace) -> float:
    """max |f(z) - f(z')| / d(z, z') over distinct pairs (full enumeration)."""
    v = np.asarray(values, dtype=float)
    diff = np.abs(v[:, None] - v[None, :])
    D = space.dist
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(D > 0, diff / D, 0.0)
    return float(r.max()) if r.size else 0.0


def lipschitz_approx_error(values, space: MetricSpace, lip: float) -> float:
    """inf over lip-Lipschitz h of max |h - f| on a finite space:
    max(0, max_{z,z'} (f(z) - f(z') - lip d(z,z')) / 2)."""
    v = np.asarray(values, dtype=float)
    gap = v[:, None] - v[None, :] - lip * space.dist
    return max(0.0, float(gap.max()) / 2.0)


@dataclass
class CoverageConfig:
    depth: int
    eta: float
    lip_const: float
    m: int
    delta: float
    domain: MetricSpace  # ids are (state, action) pairs


@dataclass
class CoverageReport:
    trials: int
    delta: float
    coverage: float
    threshold: float
    passed: bool
    sup_errors: np.ndarray
    bound: float
    eps_app: float
    lip_target: float
    n_centers: int

    def as_dict(self) -> dict:
        return {"trials": self.trials, "delta": self.delta, "coverage": self.coverage,
                "threshold": self.threshold, "passed": self.passed, "bound": self.bound,
                "eps_app": self.eps_app, "lip_target": self.lip_target, "n_centers": self.n_centers,
                "max_sup_error": float(self.sup_errors.max()), "mean_sup_error": float(self.sup_errors.mean())}


def coverage_threshold(delta: float, trials: int) -> float:
    return 1 - delta - 3 * math.sqrt(delta * (1 - delta) / trials)


def target_values(tables: ValueTables, depth: int, domain: MetricSpace) -> np.ndarray:
    q = tables.q_star[depth]
    return np.array([q[x, a] for x, a in domain.points])


def verify_uniform_bound(model: MdpModel, tables: ValueTables, config: CoverageConfig, trials: int, seed: int) -> CoverageReport:
    """Fraction of independent datasets whose true sup-error is within the
    explicit net-estimator bound; L_Q and eps_app are measured exactly."""
    dom = config.domain
    target = target_values(tables, config.depth, dom)
    lip_q = lipschitz_constant(target, dom)
    eps_app = lipschitz_approx_error(target, dom, config.lip_const)
    net = build_greedy_net(dom, config.eta)
    centers = net.center_ids
    policy = optimal_policy(model, tables)
    errs = np.empty(trials)
    bound = None
    for t in range(trials):
        data = rollout_labels(model, policy, config.depth, centers, config.m, seed * 1_000_003 + t, "optimal")
        est = fit_net_estimator(dom, data, config.eta, config.lip_const, net)
        errs[t] = np.abs(est.values() - target).max()
        if bound is None:
            bound = uniform_error_bound(est, eps_app, lip_q, config.delta)
    cov = float(np.mean(errs <= bound))
    thr = coverage_threshold(config.delta, trials)
    return CoverageReport(trials, config.delta, cov, thr, cov >= thr, errs, bound, eps_app, lip_q, len(net))


# -- adaptive deviation ----------------------------------------------------

@dataclass(frozen=True)
class AdaptiveChain:
    """Finite-state process whose next-step law depends on the past.

    With one kernel it is a Markov chain. With two kernels the step-t law
    is kernels[1] when the running fraction of visits to state 0 exceeds
    `switch_at`, else kernels[0]. The conditional law then depends on the
    whole history, not only the current state.
    """

    kernels: tuple  # each (K, K) row-stochastic
    init: np.ndarray
    switch_at: float = 0.5

    @property
    def n_states(self) -> int:
        return len(self.init)

    def step_laws(self, z_prev: np.ndarray, frac0: np.ndarray) -> np.ndarray:
        if len(self.kernels) == 1:
            return self.kernels[0][z_prev]
        k0, k1 = self.kernels
        return np.where((frac0 > self.switch_at)[:, None], k1[z_prev], k0[z_prev])


def iid_coin() -> AdaptiveChain:
    k = np.full((2, 2), 0.5)
    return AdaptiveChain((k,), np.array([0.5, 0.5]))


def adaptive_deviation_bound(n_functions: int, n: int, eps: float, delta: float) -> float:
    """2 eps + sqrt((2 log N + 2 log(2/delta)) / n)."""
    return 2 * eps + math.sqrt((2 * math.log(n_functions) + 2 * math.log(2 / delta)) / n)


@dataclass
class DeviationReport:
    trials: int
    n: int
    n_functions: int
    delta: float
    bound: float
    coverage: float
    threshold: float
    passed: bool
    deviations: np.ndarray

    def as_dict(self) -> dict:
        return {"trials": self.trials, "n": self.n, "n_functions": self.n_functions, "delta": self.delta,
                "bound": self.bound, "coverage": self.coverage, "threshold": self.threshold,
                "passed": self.passed, "max_deviation": float(self.deviations.max())}


def martingale_deviations(process: AdaptiveChain, functions: np.ndarray, n: int, trials: int, seed: int) -> np.ndarray:
    """sup_f |n^-1 sum_t f(Z_t) - E[f(Z_t) | past]| per trial, with the
    conditional means computed exactly from the step laws."""
    F = np.asarray(functions, dtype=float)  # (N, K)
    rng = np.random.default_rng(seed)
    z = np.array([rng.choice(process.n_states, p=process.init) for _ in range(trials)])
    # first step conditions on the trivial sigma-field
    sums = F[:, z].T - (F @ process.init)[None, :]
    visits0 = (z == 0).astype(float)
    for t in range(1, n):
        laws = process.step_laws(z, visits0 / t)  # (trials, K)
        cdf = np.cumsum(laws, axis=1)
        u = rng.random(trials)
        z = np.minimum((u[:, None] >= cdf).sum(axis=1), process.n_states - 1)
        sums += F[:, z].T - laws @ F.T
        visits0 += z == 0
    return np.abs(sums / n).max(axis=1)


def adaptive_deviation_experiment(process: AdaptiveChain, function_class, n: int, eps: float, delta: float,
                                  trials: int, seed: int) -> DeviationReport:
    F = np.asarray(function_class, dtype=float)
    if F.min() < 0 or F.max() > 1:
        raise ValueError("functions must map into [0, 1]")
    dev = martingale_deviations(process, F, n, trials, seed)
    bound = adaptive_deviation_bound(len(F), n, eps, delta)
    cov = float(np.mean(dev <= bound))
    thr = coverage_threshold(delta, trials)
    return DeviationReport(trials, n, len(F), delta, bound, cov, thr, cov >= thr, dev)

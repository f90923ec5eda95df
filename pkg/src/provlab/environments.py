"""Synthetic proof-search environments sized for the exact oracle.

Families
--------
split_close_tree  goals on a (level, position) grid; split a goal into
                  `branching` children one level down or try to close it
                  directly (hard near the root, certain at the leaves).
layered_dag       random layered kernels with goal-measure payloads.
margin_designed   action values placed so the (k+1)-gaps follow a chosen
                  profile exactly.
overflow_chain    goal count performs a split/close walk; for truncation.
lipschitz_line    states on [0, 1] with smooth success probabilities; a
                  1-D doubling domain for the estimation experiments.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from .goal_measure import GoalMeasure
from .mdp import MdpModel, ValueTables, evaluate_policy

MAX_STATES = 10_000
MAX_ACTIONS = 16
MAX_HORIZON = 20

FAMILIES = ("split_close_tree", "layered_dag", "margin_designed", "overflow_chain", "lipschitz_line")
PROFILES = ("uniform_gaps", "constant_gap", "mixed", "log_uniform_gaps")


class GuardrailError(ValueError):
    pass


@dataclass
class EnvSpec:
    family: str
    branching: int = 2
    depth: int = 3
    noise: float = 0.0
    seed: int = 0
    horizon: int | None = None
    n_actions: int = 2
    width: int = 8
    goal_geometry: dict = field(default_factory=lambda: {"metric": "euclidean"})
    margin_profile: str = "uniform_gaps"
    gap: float = 0.3
    gap_min: float = 1e-4
    gap_max: float = 0.35
    k: int = 1
    close_base: float = 0.3
    start_mass: int = 2
    split_prob: float | None = None
    move_prob: float = 0.0
    frequency: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.margin_profile not in PROFILES:
            raise ValueError(f"unknown margin profile {self.margin_profile!r}")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown EnvSpec keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class InstanceDistribution:
    weights: np.ndarray  # over model states

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("instance distribution must be a probability vector")
        object.__setattr__(self, "weights", w)

    @classmethod
    def point(cls, n_states: int, s: int) -> "InstanceDistribution":
        w = np.zeros(n_states)
        w[s] = 1.0
        return cls(w)

    @classmethod
    def uniform(cls, n_states: int, support) -> "InstanceDistribution":
        w = np.zeros(n_states)
        w[list(support)] = 1.0 / len(support)
        return cls(w)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights)


def statistical_provability(model: MdpModel, dist: InstanceDistribution, tables: ValueTables | None = None,
                            values: np.ndarray | None = None) -> float:
    """E_{x0 ~ Q}[V_B(x0)] for the optimal tables or any value array (B+1, S)."""
    v = values if values is not None else tables.v_star
    return float(np.dot(dist.weights, v[-1]))


def policy_provability(model: MdpModel, dist: InstanceDistribution, policy) -> float:
    return statistical_provability(model, dist, values=evaluate_policy(model, policy))


def _guard(n_states: int, n_actions: int, horizon: int) -> None:
    if n_states > MAX_STATES:
        raise GuardrailError(f"{n_states} states exceeds the {MAX_STATES} limit")
    if n_actions > MAX_ACTIONS:
        raise GuardrailError(f"{n_actions} actions per state exceeds the {MAX_ACTIONS} limit")
    if horizon > MAX_HORIZON:
        raise GuardrailError(f"horizon {horizon} exceeds the {MAX_HORIZON} limit")


def _build(spec: EnvSpec, trans: list, goal, horizon: int, payloads, states=None, labels=None, **meta) -> MdpModel:
    n_act = max(len(t) for t in trans)
    _guard(len(trans), n_act, horizon)
    return MdpModel.from_transitions(
        len(trans), dict(enumerate(trans)), np.asarray(goal, bool), horizon,
        states=tuple(states) if states is not None else None,
        action_labels=tuple(labels) if labels is not None else None,
        payloads=tuple(payloads), metadata={"family": spec.family, "spec": spec.to_dict(), **meta},
    )


def generate(spec: EnvSpec | dict) -> tuple[MdpModel, InstanceDistribution]:
    """Deterministic (given spec.seed) model plus instance distribution."""
    if isinstance(spec, dict):
        spec = EnvSpec.from_dict(spec)
    if spec.horizon is not None and spec.horizon > MAX_HORIZON:
        raise GuardrailError(f"horizon {spec.horizon} exceeds the {MAX_HORIZON} limit")
    return _GENERATORS[spec.family](spec)


# -- split/close tree ----------------------------------------------------

def tree_min_steps(branching: int, depth: int) -> int:
    return depth if branching == 1 else (branching**depth - 1) // (branching - 1)


def _split_close_tree(spec: EnvSpec):
    b, d, noise = spec.branching, spec.depth, spec.noise
    if b < 1 or d < 1:
        raise ValueError("branching and depth must be >= 1")
    horizon = spec.horizon if spec.horizon is not None else min(tree_min_steps(b, d), MAX_HORIZON)
    _guard(0, 0, horizon)
    start = GoalMeasure.from_points([(0, 0)])
    index = {start: 0}
    order = [start]
    trans, labels = [], []
    queue = deque([start])
    while queue:
        x = queue.popleft()
        acts, labs = [], []
        if not x.support:
            acts.append({x: 1.0})
            labs.append("done")
        for p, _ in x.support:
            lvl, pos = p
            rest = GoalMeasure(((q, w) for q, w in x.support if q != p))
            w_p = dict(x.support)[p]
            if w_p > 1:
                rest = rest + GoalMeasure([(p, w_p - 1)])
            p_close = (1 - noise) * spec.close_base ** (d - 1 - lvl)
            acts.append({rest: p_close, x: 1 - p_close})
            labs.append(("close", lvl, pos))
            if lvl < d - 1:
                kids = rest + GoalMeasure.from_points([(lvl + 1, pos * b + c) for c in range(b)])
                acts.append({kids: 1 - noise, x: noise})
                labs.append(("split", lvl, pos))
        if len(acts) > MAX_ACTIONS:
            raise GuardrailError(f"state with {len(acts)} actions exceeds the {MAX_ACTIONS} limit")
        for dist in acts:
            for y in dist:
                if y not in index:
                    index[y] = len(order)
                    order.append(y)
                    queue.append(y)
                    if len(order) > MAX_STATES:
                        raise GuardrailError(f"more than {MAX_STATES} reachable states")
        trans.append([_merge(dist, index) for dist in acts])
        labels.append(tuple(labs))
    goal = [not x.support for x in order]
    model = _build(spec, trans, goal, horizon, order, labels=labels,
                   embedding={"dims": [d, max(1, b ** (d - 1))], "spacing": 1.0 / max(1, b ** (d - 1)),
                              "metric": spec.goal_geometry.get("metric", "euclidean")})
    return model, InstanceDistribution.point(model.n_states, 0)


def _merge(dist: dict, index: dict) -> dict:
    out: dict = {}
    for y, p in dist.items():
        if p > 0:
            out[index[y]] = out.get(index[y], 0.0) + p
    return out


# -- layered DAG ---------------------------------------------------------

def _layered_dag(spec: EnvSpec):
    rng = np.random.default_rng(spec.seed)
    L, W, A, br = spec.depth, spec.width, spec.n_actions, spec.branching
    horizon = spec.horizon if spec.horizon is not None else L
    n_layer = L * W
    goal_s, dead_s = n_layer, n_layer + 1
    S = n_layer + 2
    grid_n = max(2, int(math.ceil(math.sqrt(W))))
    trans, payloads = [], []
    for layer in range(L):
        for j in range(W):
            acts = []
            for a in range(A):
                if layer == L - 1:
                    p = rng.uniform()
                    acts.append({goal_s: p, dead_s: 1 - p})
                    continue
                nxt = rng.choice(W, size=min(br, W), replace=False) + (layer + 1) * W
                probs = rng.dirichlet(np.ones(len(nxt)))
                dist = {int(t): (1 - spec.noise) * float(p) for t, p in zip(nxt, probs)}
                for t in range((layer + 1) * W, (layer + 2) * W):
                    dist[t] = dist.get(t, 0.0) + spec.noise / W
                acts.append(dist)
            if spec.noise == 1.0 and acts:
                acts = [dict(acts[0]) for _ in acts]
            trans.append(acts)
            pts = [(int(rng.integers(grid_n)), int(rng.integers(grid_n))) for _ in range(L - layer)]
            payloads.append(GoalMeasure.from_points(pts))
    trans.append([{goal_s: 1.0}])
    trans.append([{dead_s: 1.0}])
    payloads += [GoalMeasure(), GoalMeasure([(("dead",), 1.0)])]
    goal = np.zeros(S, bool)
    goal[goal_s] = True
    model = _build(spec, trans, goal, horizon, payloads,
                   embedding={"dims": [grid_n, grid_n], "spacing": 1.0 / grid_n, "metric": "euclidean"})
    return model, InstanceDistribution.uniform(S, range(W))


# -- margin-designed -----------------------------------------------------

CONTINUE_PROB = 0.2


def _level_gaps(spec: EnvSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """Gaps for one level. Random profiles are stratified (one draw per
    1/n quantile cell, shuffled) so each level's empirical CDF is close to
    the target law even for small widths."""
    prof = spec.margin_profile
    u = (rng.permutation(n) + rng.random(n)) / n
    if prof == "log_uniform_gaps":
        lo, hi = np.log(spec.gap_min), np.log(spec.gap_max)
        return np.exp(lo + (hi - lo) * u)
    if prof == "uniform_gaps":
        return spec.gap_max * u
    out = np.full(n, spec.gap)
    if prof == "mixed":
        out[1::2] = spec.gap_max * u[1::2]
    return out


def _margin_designed(spec: EnvSpec):
    """Levels t = 0..B-1 of `width` decision states, plus goal and fail.

    Action i at a level-t state reaches the goal w.p. gamma_i, a fixed
    next-level state c w.p. CONTINUE_PROB (none at the last level) and fails
    otherwise, so Q_b(x, i) = gamma_i + CONTINUE_PROB * V_{b-1}(c). Levels
    are built bottom-up and gamma_i solves that linear equation for the
    target Q values exactly; ranks are then shuffled.
    """
    rng = np.random.default_rng(spec.seed)
    B = spec.horizon if spec.horizon is not None else spec.depth
    W, A, k = spec.width, spec.n_actions, spec.k
    if A < k + 1:
        raise ValueError("margin_designed needs n_actions >= k + 1")
    _guard(B * W + 2, A, B)
    goal_s, fail_s = B * W, B * W + 1
    S = B * W + 2
    trans: list = [None] * S
    v_next = np.zeros(W)  # V_{b-1} of the level below
    targets = np.zeros((S, A))
    for t in range(B - 1, -1, -1):
        v_level = np.zeros(W)
        level_gaps = _level_gaps(spec, rng, W)
        for j in range(W):
            s = t * W + j
            gap = float(level_gaps[j])
            child = int(rng.integers(W)) if t < B - 1 else None
            cont = CONTINUE_PROB * v_next[child] if child is not None else 0.0
            top = rng.uniform(0.6, 0.8)
            low_floor = cont
            q = np.empty(A)
            q[0] = top
            q[k] = top - gap
            if k > 1:
                q[1:k] = rng.uniform(top - gap, top, size=k - 1)
            if A > k + 1:
                q[k + 1:] = rng.uniform(low_floor, top - gap, size=A - k - 1)
            if q.min() < cont - 1e-15:
                raise ValueError("gap too large for the value window; lower gap_max")
            q = q[rng.permutation(A)]
            acts = []
            for i in range(A):
                gam = q[i] - cont
                dist = {goal_s: gam}
                if child is not None:
                    dist[(t + 1) * W + child] = CONTINUE_PROB
                    dist[fail_s] = 1.0 - gam - CONTINUE_PROB
                else:
                    dist[fail_s] = 1.0 - gam
                acts.append({y: p for y, p in dist.items() if p > 0})
            trans[s] = acts
            targets[s] = q
            v_level[j] = q.max()
        v_next = v_level
    trans[goal_s] = [{goal_s: 1.0}]
    trans[fail_s] = [{fail_s: 1.0}]
    grid_n = max(2, int(math.ceil(math.sqrt(W))))
    payloads = []
    for t in range(B):
        for j in range(W):
            payloads.append(GoalMeasure.from_points([(j % grid_n, j // grid_n)] * (B - t)))
    payloads += [GoalMeasure(), GoalMeasure([(("fail",), 1.0)])]
    goal = np.zeros(S, bool)
    goal[goal_s] = True
    model = _build(spec, trans, goal, B, payloads, designed_q=targets.tolist(),
                   embedding={"dims": [grid_n, grid_n], "spacing": 1.0 / grid_n, "metric": "euclidean"})
    return model, InstanceDistribution.uniform(S, range(W))


def designed_gap_error(model: MdpModel, tables: ValueTables) -> float:
    """Max |Q^* - designed target| over decision states (post-hoc calibration check)."""
    target = np.asarray(model.metadata["designed_q"])
    W, B = model.metadata["spec"]["width"], model.horizon
    err = 0.0
    for t in range(B):
        b = B - t
        rows = slice(t * W, (t + 1) * W)
        err = max(err, float(np.abs(tables.q_star[b][rows] - target[rows]).max()))
    return err


# -- overflow chain ------------------------------------------------------

def _overflow_chain(spec: EnvSpec):
    rng = np.random.default_rng(spec.seed)
    B = spec.horizon if spec.horizon is not None else spec.depth
    step_up = spec.branching - 1
    n_max = spec.start_mass + B * max(step_up, 0)
    S = n_max + 1
    A = spec.n_actions
    trans = []
    for n in range(S):
        if n == 0:
            trans.append([{0: 1.0}])
            continue
        acts = []
        for a in range(A):
            sp_ = spec.split_prob if spec.split_prob is not None else float(rng.uniform(0.0, 0.6))
            up = min(n + step_up, n_max)
            dist: dict = {}
            for y, p in ((up, (1 - spec.noise) * sp_), (n - 1, (1 - spec.noise) * (1 - sp_)), (n, spec.noise)):
                if p > 0:
                    dist[y] = dist.get(y, 0.0) + p
            acts.append(dist)
        trans.append(acts)
    payloads = [GoalMeasure([((0, 0), float(n))]) if n else GoalMeasure() for n in range(S)]
    goal = np.zeros(S, bool)
    goal[0] = True
    model = _build(spec, trans, goal, B, payloads, states=range(S),
                   embedding={"dims": [1, 1], "spacing": 1.0, "metric": "euclidean"})
    return model, InstanceDistribution.point(S, min(spec.start_mass, n_max))


# -- Lipschitz line ------------------------------------------------------

def line_success(x, a: int, frequency: float, phase_seed: int = 0) -> np.ndarray:
    phase = 2 * math.pi * ((a * 0.37 + phase_seed * 0.11) % 1.0)
    return 0.5 + 0.35 * np.sin(2 * math.pi * frequency * np.asarray(x) + phase)


def _lipschitz_line(spec: EnvSpec):
    n, A = spec.width, spec.n_actions
    B = spec.horizon if spec.horizon is not None else spec.depth
    xs = np.linspace(0.0, 1.0, n)
    goal_s, fail_s = n, n + 1
    mv = spec.move_prob
    trans = []
    for i in range(n):
        acts = []
        for a in range(A):
            g = float(line_success(xs[i], a, spec.frequency, spec.seed))
            dist = {goal_s: g * (1 - mv)}
            if mv > 0:
                for nb in (max(i - 1, 0), min(i + 1, n - 1)):
                    dist[nb] = dist.get(nb, 0.0) + mv / 2
            dist[fail_s] = dist.get(fail_s, 0.0) + (1 - g) * (1 - mv)
            acts.append(dist)
        trans.append(acts)
    trans += [[{goal_s: 1.0}], [{fail_s: 1.0}]]
    payloads = [GoalMeasure([((i,), 1.0)]) for i in range(n)] + [GoalMeasure(), GoalMeasure([(("fail",), 1.0)])]
    goal = np.zeros(n + 2, bool)
    goal[goal_s] = True
    model = _build(spec, trans, goal, B, payloads, state_coords=xs.tolist(),
                   embedding={"dims": [n], "spacing": 1.0 / (n - 1), "metric": "euclidean"})
    return model, InstanceDistribution.uniform(n + 2, range(n))


def line_state_metric(model: MdpModel) -> np.ndarray:
    """|x - x'| between line states; terminal states sit far away (distance 2)."""
    xs = np.asarray(model.metadata["state_coords"])
    n = len(xs)
    D = np.full((model.n_states, model.n_states), 2.0)
    D[:n, :n] = np.abs(xs[:, None] - xs[None, :])
    np.fill_diagonal(D, 0.0)
    return D


_GENERATORS = {
    "split_close_tree": _split_close_tree,
    "layered_dag": _layered_dag,
    "margin_designed": _margin_designed,
    "overflow_chain": _overflow_chain,
    "lipschitz_line": _lipschitz_line,
}


# -- generic random models (tests, harness) -------------------------------

def random_mdp(n_states: int, n_actions: int, horizon: int, seed: int, n_succ: int = 3,
               goal_frac: float = 0.1, ragged: bool = False) -> MdpModel:
    """Random sparse kernel: each (x, a) spreads Dirichlet mass over up to
    `n_succ` successors. At least one goal state."""
    rng = np.random.default_rng(seed)
    goal = rng.random(n_states) < goal_frac
    goal[rng.integers(n_states)] = True
    trans = {}
    for s in range(n_states):
        k = int(rng.integers(1, n_actions + 1)) if ragged else n_actions
        acts = []
        for _ in range(k):
            succ = rng.choice(n_states, size=min(n_succ, n_states), replace=False)
            p = rng.dirichlet(np.ones(len(succ)))
            acts.append({int(t): float(q) for t, q in zip(succ, p)})
        trans[s] = acts
    return MdpModel.from_transitions(n_states, trans, goal, horizon, normalize=True)


def random_goal_measure_model(seed: int, horizon: int | None = None) -> tuple[MdpModel, InstanceDistribution]:
    """A randomly parameterised split_close_tree or overflow_chain instance."""
    rng = np.random.default_rng(seed)
    if rng.random() < 0.5:
        spec = EnvSpec("split_close_tree", branching=int(rng.integers(1, 3)), depth=int(rng.integers(2, 4)),
                       noise=float(rng.uniform(0, 0.5)), close_base=float(rng.uniform(0.1, 0.6)), seed=seed,
                       horizon=horizon if horizon is not None else int(rng.integers(2, 8)))
    else:
        spec = EnvSpec("overflow_chain", branching=int(rng.integers(2, 4)), n_actions=int(rng.integers(1, 4)),
                       depth=int(rng.integers(2, 7)) if horizon is None else horizon, noise=float(rng.uniform(0, 0.3)),
                       start_mass=int(rng.integers(1, 4)), seed=seed)
    return generate(spec)


def load_spec(path_or_doc) -> EnvSpec:
    if isinstance(path_or_doc, dict):
        return EnvSpec.from_dict(path_or_doc)
    text = open(path_or_doc).read()
    if str(path_or_doc).endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return EnvSpec.from_dict(tomllib.loads(text))
    return EnvSpec.from_dict(json.loads(text))

"""Finite-horizon reachability MDPs and their exact backward-induction oracle.

Kernels are stored as a CSR matrix with one row per (state, action) slot,
row index ``s * max_actions + a``. States with fewer actions have empty
padding rows which are masked out everywhere.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Sequence

import numpy as np
import scipy.sparse as sp

from .goal_measure import GoalMeasure, is_solved, mass

ROW_TOL = 1e-12


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MdpModel:
    kernel: sp.csr_matrix
    n_actions: np.ndarray
    goal: np.ndarray
    horizon: int
    states: tuple = None
    action_labels: tuple = None  # per state, tuple of labels
    payloads: tuple = None  # per state GoalMeasure, optional
    mass_cap: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n_actions = np.asarray(self.n_actions, dtype=int)
        goal = np.asarray(self.goal, dtype=bool)
        S = len(goal)
        object.__setattr__(self, "n_actions", n_actions)
        object.__setattr__(self, "goal", goal)
        K = sp.csr_matrix(self.kernel, dtype=float)
        K.eliminate_zeros()
        K.sort_indices()
        object.__setattr__(self, "kernel", K)
        if self.states is None:
            object.__setattr__(self, "states", tuple(range(S)))
        if self.action_labels is None:
            object.__setattr__(self, "action_labels", tuple(tuple(range(k)) for k in n_actions))
        self.validate()

    # -- shape helpers ---------------------------------------------------
    @property
    def n_states(self) -> int:
        return len(self.goal)

    @property
    def max_actions(self) -> int:
        return int(self.n_actions.max()) if len(self.n_actions) else 0

    @property
    def action_mask(self) -> np.ndarray:
        return np.arange(self.max_actions)[None, :] < self.n_actions[:, None]

    def row(self, s: int, a: int) -> int:
        return s * self.max_actions + a

    def transition(self, s: int, a: int) -> np.ndarray:
        return self.kernel[self.row(s, a)].toarray().ravel()

    def successors(self, s: int, a: int) -> tuple[np.ndarray, np.ndarray]:
        r = self.row(s, a)
        lo, hi = self.kernel.indptr[r], self.kernel.indptr[r + 1]
        return self.kernel.indices[lo:hi], self.kernel.data[lo:hi]

    def state_index(self, state) -> int:
        if isinstance(state, (int, np.integer)) and 0 <= state < self.n_states and self.states[state] == state:
            return int(state)
        try:
            return self._state_pos[state]
        except (KeyError, TypeError):
            raise KeyError(f"unknown state {state!r}") from None

    @cached_property
    def _state_pos(self) -> dict:
        return {s: i for i, s in enumerate(self.states)}

    @cached_property
    def _cum(self) -> np.ndarray:
        return np.cumsum(self.kernel.data)

    def backup(self, v: np.ndarray) -> np.ndarray:
        """Q[s, a] = sum_x' P(x'|s,a) v(x'); padded slots are -inf."""
        q = (self.kernel @ v).reshape(self.n_states, self.max_actions)
        return np.where(self.action_mask, q, -np.inf)

    def validate(self) -> None:
        S, A = self.n_states, self.max_actions
        if self.horizon < 0:
            raise ModelError("horizon must be >= 0")
        if np.any(self.n_actions < 1):
            raise ModelError("every state needs at least one action")
        if self.kernel.shape != (S * A, S):
            raise ModelError(f"kernel shape {self.kernel.shape} != {(S * A, S)}")
        if self.kernel.nnz and self.kernel.data.min() < 0:
            raise ModelError("negative transition probability")
        sums = np.asarray(self.kernel.sum(axis=1)).ravel().reshape(S, A)
        mask = self.action_mask
        bad = np.abs(sums[mask] - 1.0) > ROW_TOL
        if bad.any():
            s, a = np.argwhere(mask)[np.argmax(bad)]
            raise ModelError(f"kernel row (state {s}, action {a}) sums to {sums[s, a]!r}")
        if np.any(sums[~mask] != 0):
            raise ModelError("padding action rows must be empty")
        if self.payloads is not None:
            if len(self.payloads) != S:
                raise ModelError("one payload per state required")
            for s, x in enumerate(self.payloads):
                if bool(self.goal[s]) != is_solved(x):
                    raise ModelError(f"state {s}: goal flag disagrees with payload")
                if self.mass_cap is not None and mass(x) > self.mass_cap:
                    raise ModelError(f"state {s}: payload mass {mass(x)} exceeds cap {self.mass_cap}")

    # -- constructors ----------------------------------------------------
    @classmethod
    def from_dense(cls, P, goal, horizon: int, n_actions=None, **kw) -> "MdpModel":
        """P has shape (S, A, S); rows beyond n_actions[s] must be zero."""
        P = np.asarray(P, dtype=float)
        S, A, _ = P.shape
        if n_actions is None:
            n_actions = np.full(S, A)
        return cls(sp.csr_matrix(P.reshape(S * A, S)), n_actions, goal, horizon, **kw)

    @classmethod
    def from_transitions(cls, n_states: int, transitions: dict, goal, horizon: int, normalize: bool = False, **kw) -> "MdpModel":
        """`transitions[s]` is a list (one per action) of {next_state: prob} dicts."""
        n_actions = np.array([len(transitions[s]) for s in range(n_states)])
        A = int(n_actions.max())
        rows, cols, vals = [], [], []
        for s in range(n_states):
            for a, dist in enumerate(transitions[s]):
                tot = sum(dist.values())
                for t, p in dist.items():
                    if p == 0:
                        continue
                    rows.append(s * A + a)
                    cols.append(t)
                    vals.append(p / tot if normalize else p)
        K = sp.csr_matrix((vals, (rows, cols)), shape=(n_states * A, n_states))
        K.sum_duplicates()
        return cls(K, n_actions, goal, horizon, **kw)

    def with_horizon(self, horizon: int) -> "MdpModel":
        return MdpModel(self.kernel, self.n_actions, self.goal, horizon, self.states, self.action_labels,
                        self.payloads, self.mass_cap, dict(self.metadata))

    def goal_absorbing(self) -> "MdpModel":
        """Same model with every action at a goal state turned into a self-loop."""
        A = self.max_actions
        K = self.kernel.tolil()
        for s in np.flatnonzero(self.goal):
            for a in range(self.n_actions[s]):
                K.rows[s * A + a] = [int(s)]
                K.data[s * A + a] = [1.0]
        return MdpModel(K.tocsr(), self.n_actions, self.goal, self.horizon, self.states, self.action_labels,
                        self.payloads, self.mass_cap, dict(self.metadata))


@dataclass(frozen=True)
class ValueTables:
    """Exact V_b^* (b = 0..B), Q_b^* (b = 1..B; q_star[0] is NaN) and argmax."""

    v_star: np.ndarray  # (B+1, S)
    q_star: np.ndarray  # (B+1, S, A), -inf on padded action slots
    argmax: np.ndarray  # (B+1, S), -1 at b = 0

    @property
    def horizon(self) -> int:
        return self.v_star.shape[0] - 1


@dataclass(frozen=True)
class PolicyTable:
    """Markov policy: probs[b, s, :] is the action law with b steps to go."""

    probs: np.ndarray  # (B+1, S, A); probs[0] unused

    @classmethod
    def deterministic(cls, choice: np.ndarray, max_actions: int) -> "PolicyTable":
        choice = np.asarray(choice, dtype=int)
        probs = np.zeros(choice.shape + (max_actions,))
        np.put_along_axis(probs, np.clip(choice, 0, None)[..., None], 1.0, axis=-1)
        probs[0] = 0.0
        probs[0, :, 0] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, model: MdpModel) -> "PolicyTable":
        mask = model.action_mask.astype(float)
        row = mask / mask.sum(axis=1, keepdims=True)
        return cls(np.broadcast_to(row, (model.horizon + 1,) + row.shape).copy())

    @property
    def horizon(self) -> int:
        return self.probs.shape[0] - 1


def solve_exact(model: MdpModel) -> ValueTables:
    """Backward induction V_{b+1} = 1[x in G] v max_a Q_{b+1}(x, a)."""
    B, S, A = model.horizon, model.n_states, model.max_actions
    g = model.goal.astype(float)
    v = np.empty((B + 1, S))
    q = np.full((B + 1, S, A), np.nan)
    arg = np.full((B + 1, S), -1, dtype=int)
    v[0] = g
    for b in range(1, B + 1):
        q[b] = np.minimum(model.backup(v[b - 1]), 1.0)  # summation roundoff can exceed 1 by ~1e-16
        arg[b] = np.argmax(q[b], axis=1)  # first maximiser = lowest index
        v[b] = np.maximum(g, q[b].max(axis=1))
    return ValueTables(v, q, arg)


def optimal_policy(model: MdpModel, tables: ValueTables) -> PolicyTable:
    return PolicyTable.deterministic(tables.argmax, model.max_actions)


def _check_policy(model: MdpModel, policy: PolicyTable) -> None:
    B = model.horizon
    probs = policy.probs
    if probs.shape[0] < B + 1 or probs.shape[1:] != (model.n_states, model.max_actions):
        raise ModelError(f"policy shape {probs.shape} does not match model")
    p = probs[1:B + 1]
    if not np.all(np.isfinite(p)):
        raise ModelError("policy has missing entries")
    if np.any(p[:, ~model.action_mask] != 0):
        raise ModelError("policy puts mass on nonexistent actions")
    if np.any(np.abs(p.sum(axis=2) - 1.0) > 1e-9) or np.any(p < 0):
        raise ModelError("policy rows must be probability distributions")


def evaluate_policy(model: MdpModel, policy: PolicyTable) -> np.ndarray:
    """Exact V_b^pi for b = 0..B (first-hit reachability probability)."""
    _check_policy(model, policy)
    B, S = model.horizon, model.n_states
    g = model.goal.astype(float)
    v = np.empty((B + 1, S))
    v[0] = g
    for b in range(1, B + 1):
        q = model.backup(v[b - 1])
        q = np.where(model.action_mask, q, 0.0)
        v[b] = np.minimum(np.maximum(g, (policy.probs[b] * q).sum(axis=1)), 1.0)
    return v


def continuation_q(model: MdpModel, policy: PolicyTable, b: int) -> np.ndarray:
    """Q^pi_b(x, a): apply a once, then follow `policy` for b - 1 steps."""
    v = evaluate_policy(model.with_horizon(b - 1), PolicyTable(policy.probs[:b])) if b > 1 else \
        model.goal.astype(float)[None, :]
    return model.backup(v[b - 1])


# -- sampling ----------------------------------------------------------

def sample_next(model: MdpModel, states: np.ndarray, actions: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling of successors for vectors of (state, action)."""
    K = model.kernel
    rows = states * model.max_actions + actions
    lo, hi = K.indptr[rows], K.indptr[rows + 1]
    cum = model._cum
    base = np.where(lo > 0, cum[np.maximum(lo - 1, 0)], 0.0)
    target = base + u * (cum[hi - 1] - base)
    pos = np.searchsorted(cum, target, side="right")
    pos = np.clip(pos, lo, hi - 1)
    return K.indices[pos]


def sample_actions(policy: PolicyTable, b: int, states: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(policy.probs[b][states], axis=1)
    a = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(a, policy.probs.shape[2] - 1)


def simulate(model: MdpModel, policy: PolicyTable, start, seed: int) -> list[int]:
    """One trajectory, stopping at the first goal hit or after B steps."""
    rng = np.random.default_rng(seed)
    s = model.state_index(start)
    traj = [s]
    for b in range(model.horizon, 0, -1):
        if model.goal[s]:
            break
        a = sample_actions(policy, b, np.array([s]), rng.random(1))
        s = int(sample_next(model, np.array([s]), a, rng.random(1))[0])
        traj.append(s)
    return traj


def simulate_many(model: MdpModel, policy: PolicyTable, start, n: int, seed: int) -> np.ndarray:
    """Vectorised Monte Carlo: boolean success flags for n independent runs."""
    rng = np.random.default_rng(seed)
    s = np.full(n, model.state_index(start))
    hit = model.goal[s].copy()
    for b in range(model.horizon, 0, -1):
        live = np.flatnonzero(~hit)
        if live.size == 0:
            break
        a = sample_actions(policy, b, s[live], rng.random(live.size))
        s[live] = sample_next(model, s[live], a, rng.random(live.size))
        hit[live] |= model.goal[s[live]]
    return hit


@dataclass
class AttainmentReport:
    checked: int
    violations: list  # (b, state, q_at_argmax, max_q)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_attainment(model: MdpModel, tables: ValueTables) -> AttainmentReport:
    """Re-scan q_star: the recorded argmax must attain the row maximum."""
    viol = []
    B = tables.horizon
    for b in range(1, B + 1):
        q = tables.q_star[b]
        at = q[np.arange(model.n_states), tables.argmax[b]]
        mx = q.max(axis=1)
        for s in np.flatnonzero(at != mx):
            viol.append((b, int(s), float(at[s]), float(mx[s])))
    return AttainmentReport(B * model.n_states, viol)


# -- JSON --------------------------------------------------------------

def _jsonable(x):
    return list(x) if isinstance(x, tuple) else x


def dump_model(model: MdpModel) -> dict[str, Any]:
    trip = []
    S, A = model.n_states, model.max_actions
    K = model.kernel.tocoo()
    for r, c, p in zip(K.row, K.col, K.data):
        s, a = divmod(int(r), A)
        trip.append([_jsonable(model.states[s]), _jsonable(model.action_labels[s][a]), _jsonable(model.states[c]), float(p)])
    doc = {
        "states": [_jsonable(s) for s in model.states],
        "actions": [[_jsonable(a) for a in labels] for labels in model.action_labels],
        "kernel": trip,
        "goal": [_jsonable(model.states[s]) for s in np.flatnonzero(model.goal)],
        "horizon": model.horizon,
    }
    if model.payloads is not None:
        doc["payloads"] = [x.to_json() for x in model.payloads]
    if model.mass_cap is not None:
        doc["mass_cap"] = model.mass_cap
    if model.metadata:
        doc["metadata"] = model.metadata
    return doc


def _key(x):
    return tuple(_key(v) for v in x) if isinstance(x, list) else x


def load_model(doc: dict[str, Any] | str) -> MdpModel:
    """Parse the MdpModel JSON document; kernel rows are renormalised here."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    states = [_key(s) for s in doc["states"]]
    sidx = {s: i for i, s in enumerate(states)}
    actions = [tuple(_key(a) for a in acts) for acts in doc["actions"]]
    aidx = [{a: j for j, a in enumerate(acts)} for acts in actions]
    trans = {s: [dict() for _ in actions[s]] for s in range(len(states))}
    for x, a, y, p in doc["kernel"]:
        s = sidx[_key(x)]
        d = trans[s][aidx[s][_key(a)]]
        t = sidx[_key(y)]
        d[t] = d.get(t, 0.0) + float(p)
    goal = np.zeros(len(states), dtype=bool)
    for g in doc["goal"]:
        goal[sidx[_key(g)]] = True
    payloads = None
    if "payloads" in doc:
        payloads = tuple(GoalMeasure.from_json(x) for x in doc["payloads"])
    return MdpModel.from_transitions(
        len(states), trans, goal, int(doc["horizon"]), normalize=True,
        states=tuple(states), action_labels=tuple(actions), payloads=payloads,
        mass_cap=doc.get("mass_cap"), metadata=doc.get("metadata", {}),
    )

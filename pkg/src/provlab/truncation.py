"""Mass-cap truncation of goal-measure MDPs and the overflow tail."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .goal_measure import GoalMeasure, mass
from .mdp import MdpModel, PolicyTable, evaluate_policy

SINK = "__overflow_sink__"
SINK_POINT = "__sink__"


@dataclass(frozen=True)
class TruncatedModel:
    model: MdpModel  # last state is the sink
    base: MdpModel
    cap: float
    sink: int
    state_map: np.ndarray  # base index -> truncated index, or -1 if removed

    def map_policy(self, policy: PolicyTable) -> PolicyTable:
        """Restrict a base policy to kept states; the sink uses action 0."""
        keep = np.flatnonzero(self.state_map >= 0)
        B = policy.probs.shape[0]
        A2 = self.model.max_actions
        probs = np.zeros((B, self.model.n_states, A2))
        probs[:, self.state_map[keep], :] = policy.probs[:, keep, :A2]
        probs[:, self.sink, 0] = 1.0
        return PolicyTable(probs)


def _masses(model: MdpModel) -> np.ndarray:
    if model.payloads is None:
        raise ValueError("model states carry no goal-measure payloads")
    return np.array([mass(x) for x in model.payloads])


def truncate(model: MdpModel, w: float, start=None) -> TruncatedModel:
    """Drop states with mass > w and send every transition into them to an
    absorbing non-goal sink (appended as the last state)."""
    m = _masses(model)
    keep = m <= w
    if start is not None and not keep[model.state_index(start)]:
        raise ValueError(f"start state mass {m[model.state_index(start)]} exceeds cap {w}")
    kept = np.flatnonzero(keep)
    S2 = len(kept) + 1
    sink = S2 - 1
    smap = np.full(model.n_states, -1)
    smap[kept] = np.arange(len(kept))
    A = model.max_actions
    n_act = np.concatenate([model.n_actions[kept], [1]])
    A2 = int(n_act.max())  # may shrink if the widest states were dropped
    K = model.kernel.tocoo()
    src_state = K.row // A
    sel = keep[src_state]
    rows = smap[src_state[sel]] * A2 + K.row[sel] % A
    cols = np.where(keep[K.col[sel]], smap[K.col[sel]], sink)
    rows = np.concatenate([rows, [sink * A2]])
    cols = np.concatenate([cols, [sink]])
    data = np.concatenate([K.data[sel], [1.0]])
    K2 = sp.csr_matrix((data, (rows, cols)), shape=(S2 * A2, S2))
    K2.sum_duplicates()
    goal = np.concatenate([model.goal[kept], [False]])
    payloads = tuple(model.payloads[i] for i in kept) + (GoalMeasure([(SINK_POINT, 1.0)]),)
    states = tuple(model.states[i] for i in kept) + (SINK,)
    labels = tuple(model.action_labels[i] for i in kept) + (("stay",),)
    tm = MdpModel(K2, n_act, goal, model.horizon, states, labels, payloads, None, dict(model.metadata))
    return TruncatedModel(tm, model, float(w), sink, smap)


def overflow_probability(model: MdpModel, policy: PolicyTable, x0, w: float) -> float:
    """P(max_{t <= B} mass(X_t) > w) by DP with a sticky overflow flag.

    The trajectory is followed for all B steps, including after a goal hit.
    """
    over = (_masses(model) > w).astype(float)
    p = over.copy()
    for b in range(1, model.horizon + 1):
        q = np.where(model.action_mask, model.backup(p), 0.0)
        p = np.maximum(over, (policy.probs[b] * q).sum(axis=1))
    return float(p[model.state_index(x0)])


@dataclass
class TruncationCheck:
    v_true: float
    v_trunc: float
    delta_w: float
    holds: bool
    coupled_holds: bool


def verify_truncation_bound(model: MdpModel, policy: PolicyTable, x0, w: float) -> TruncationCheck:
    """Exact V^pi, truncated V^pi and overflow probability at x0."""
    s = model.state_index(x0)
    tm = truncate(model, w, start=s)
    v_true = float(evaluate_policy(model, policy)[-1, s])
    v_trunc = float(evaluate_policy(tm.model, tm.map_policy(policy))[-1, tm.state_map[s]])
    dw = overflow_probability(model, policy, s, w)
    return TruncationCheck(v_true, v_trunc, dw, v_true >= v_trunc - dw - 1e-12, v_true >= v_trunc - 1e-12)

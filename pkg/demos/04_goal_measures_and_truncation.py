# %% [markdown]
# Proof states as finite measures over goals. Mass counts open goals, the
# zero measure is a finished proof, and the BL distance compares states.

# %%
import numpy as np

from provlab.environments import EnvSpec, generate
from provlab.goal_measure import ZERO, GoalMeasure, bl_distance, is_solved, mass
from provlab.mdp import PolicyTable
from provlab.metric_space import MetricSpace
from provlab.truncation import overflow_probability, truncate, verify_truncation_bound

space = MetricSpace.from_coordinates(np.array([[0.0], [0.5], [3.0]]), points=["p", "q", "r"])
p, q, r = (GoalMeasure([(x, 1.0)]) for x in "pqr")
print("mass(p + q) =", mass(p + q), " solved(0) =", is_solved(ZERO))
for name, a, b in [("p, 0", p, ZERO), ("p, q", p, q), ("p, r", p, r), ("p+q, r", p + q, r)]:
    print(f"d_BL({name}) = {bl_distance(a, b, space)[0]:.4f}")

# %% [markdown]
# Capping the number of open goals makes the state space finite. The
# truncated value can only undercount, and the loss is at most the chance
# of ever exceeding the cap.

# %%
model, dist = generate(EnvSpec("overflow_chain", branching=2, split_prob=0.5, start_mass=2, depth=2, n_actions=1))
x0 = int(dist.support[0])
print("P(mass ever > 3) =", overflow_probability(model, PolicyTable.uniform(model), x0, 3.0))

model, dist = generate(EnvSpec("overflow_chain", branching=2, start_mass=2, depth=8, n_actions=2, seed=4))
x0 = int(dist.support[0])
pol = PolicyTable.uniform(model)
for w in (3, 4, 6, 10):
    chk = verify_truncation_bound(model, pol, x0, w)
    tm = truncate(model, w, start=x0)
    print(f"W={w:>2}: {tm.model.n_states:>2} states  v_true={chk.v_true:.4f}  v_trunc={chk.v_trunc:.4f}"
          f"  overflow={chk.delta_w:.4f}  holds={chk.holds}")

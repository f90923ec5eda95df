# %% [markdown]
# Exact reachability values and the certificates that bracket them.
#
# A tiny proof search: from s0 one tactic closes the goal half the time and
# otherwise leaves a residual goal s1 that is closed for sure.

# %%
import numpy as np

from provlab.certificates import certify_sandwich, exact_certificates, score_certificate, trivial_certificates
from provlab.environments import EnvSpec, generate
from provlab.mdp import MdpModel, evaluate_policy, optimal_policy, solve_exact
from provlab.planners import perturbed_scores

trans = {0: [{2: 0.5, 1: 0.5}], 1: [{2: 1.0}], 2: [{2: 1.0}]}
chain = MdpModel.from_transitions(3, trans, [False, False, True], 2, states=("s0", "s1", "g"))
tables = solve_exact(chain)
print("V*_b(s) rows b = 0, 1, 2:")
print(tables.v_star)

# %% [markdown]
# Backward induction gives V_1(s0) = 0.5 and V_2(s0) = 1. The greedy policy
# on q_star attains those numbers exactly.

# %%
print("greedy on Q* attains V*:", np.allclose(evaluate_policy(chain, optimal_policy(chain, tables)), tables.v_star))

# %% [markdown]
# Certificates. Any sub-solution sequence lower-bounds the value and any
# super-solution upper-bounds it. The trivial pair is uninformative and
# the exact tables close the gap.

# %%
model, dist = generate(EnvSpec("split_close_tree", branching=2, depth=3, noise=0.1, seed=0))
t = solve_exact(model)
x0 = int(dist.support[0])
print(f"tree: {model.n_states} states, horizon {model.horizon}, V* = {t.v_star[-1, x0]:.4f}")
for name, pair in [("trivial", trivial_certificates(model)), ("exact", exact_certificates(t))]:
    res = certify_sandwich(model, *pair, x0)
    print(f"  {name:8s} [{res.lower:.4f}, {res.upper:.4f}] gap {res.gap:.4f}")

# %% [markdown]
# A score function within eps of Q* gives a certificate of width at most
# 2 eps, valid whenever the uniform error premise holds on the relevant states.

# %%
rng = np.random.default_rng(0)
for eps in (0.01, 0.05, 0.1):
    sc = perturbed_scores(model, t, eps, rng)
    res = score_certificate(model, sc, eps, x0, t)
    print(f"  eps={eps:<5} [{res.lower:.4f}, {res.upper:.4f}] gap {res.gap:.4f} sandwich={res.sandwich_holds}")

# %% [markdown]
# Learning Q from rollouts: an eta-net, averaged labels, and a Lipschitz
# extension. The error bound has an approximation part, a net part and a
# Hoeffding part; the rate in n is n^(-1/3) on a line.

# %%
import numpy as np

from provlab.estimation import (CoverageConfig, fit_net_estimator, lipschitz_constant, rollout_labels,
                                target_values, uniform_error_bound, verify_uniform_bound)
from provlab.harness import estimation_error_vs_n, estimation_instance
from provlab.mdp import optimal_policy
from provlab.metric_space import build_greedy_net, fit_doubling_dimension
from provlab.planners import loglog_fit

model, tables, dom = estimation_instance(200, 2, 1.0)
target = target_values(tables, 1, dom)
lip_q = lipschitz_constant(target, dom)
print(f"domain: {len(dom)} (state, action) pairs, L_Q = {lip_q:.3f}")

# %%
eta, m = 0.05, 200
net = build_greedy_net(dom, eta)
data = rollout_labels(model, optimal_policy(model, tables), 1, net.center_ids, m, 0, "optimal")
est = fit_net_estimator(dom, data, eta, 2.5, net)
err = np.abs(est.values() - target).max()
print(f"{len(net)} centers, sup error {err:.4f}, bound {uniform_error_bound(est, 0.0, lip_q, 0.05):.4f}")

# %%
rep = verify_uniform_bound(model, tables, CoverageConfig(1, eta, 2.5, m, 0.05, dom), 200, 1)
print(f"coverage over {rep.trials} datasets: {rep.coverage:.3f} (needs >= {rep.threshold:.3f})")

# %% [markdown]
# Shrinking eta like n^(-1/3) balances net error against sampling error.

# %%
ns = [2_000, 8_000, 32_000, 128_000, 512_000]
rows, errs = estimation_error_vs_n(ns, 0, trials=10)
for r in rows:
    print(f"n={r['n']:>7}  eta={r['eta']:.4f}  N={r['n_centers']:>3}  m={r['m']:>5}  err={r['mean_sup_error']:.4f}")
print(f"slope {loglog_fit(ns, errs)[0]:.3f} (predicted -1/3)")

# %%
print("doubling dimension of the line domain:", round(fit_doubling_dimension(dom, [0.2, 0.1, 0.05, 0.02, 0.01]).slope, 2))

"""Acceptance criteria, each checked against a brute-force oracle at the
stated tolerance. The terminal summary prints one PASS/FAIL line per
criterion (see conftest.py)."""
import math
import time

import numpy as np
import pytest

from provlab.certificates import (CertificateSequence, certify_sandwich, exact_certificates, score_certificate,
                                  trivial_certificates, validate_certificate)
from provlab.environments import EnvSpec, generate, random_goal_measure_model
from provlab.estimation import CoverageConfig, adaptive_deviation_experiment, coverage_threshold, verify_uniform_bound
from provlab.goal_measure import ZERO, GoalMeasure, bl_distance
from provlab.harness import (ExperimentConfig, deviation_setup, estimation_instance, random_valid_certificates,
                             scaling_sweep)
from provlab.mdp import MdpModel, PolicyTable, solve_exact
from provlab.metric_space import MetricSpace
from provlab.planners import (fast_rate_experiment, greedy_policy, loglog_fit, measure_regret, one_step_losses,
                              perturbed_scores, relevant_domain)
from provlab.truncation import overflow_probability, verify_truncation_bound
from oracles import bl_primal, brute_force_optimal, enumerate_optimal, random_transitions

EPS_GRID = [0.02, 0.04, 0.08, 0.16]


def _budget(t0, seconds):
    elapsed = time.perf_counter() - t0
    assert elapsed < seconds, f"took {elapsed:.1f}s (budget {seconds}s)"


def _model(rng, n, a, horizon, **kw):
    trans, goal = random_transitions(rng, n, a, **kw)
    return trans, goal, MdpModel.from_transitions(n, trans, goal, horizon)


@pytest.mark.acceptance("Bellman oracle correctness")
def test_bellman_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1001)
    enumerated = 0
    for i in range(120):
        small = i % 2 == 0
        n = int(rng.integers(2, 60 if small else 201))
        a = int(rng.integers(1, 5 if small else 9))
        B = int(rng.integers(0, 6 if small else 11))
        trans, goal, m = _model(rng, n, a, B)
        v = solve_exact(m).v_star
        assert np.all(v >= 0.0) and np.all(v <= 1.0)
        assert np.all(np.diff(v, axis=0) >= 0.0)
        if small:
            np.testing.assert_allclose(v, enumerate_optimal(trans, goal, B), rtol=0, atol=1e-10)
            enumerated += 1
    # full policy enumeration on tiny instances
    for i in range(25):
        trans, goal, m = _model(rng, 5, 2, 3, n_succ=2, goal_frac=0.2)
        v = solve_exact(m).v_star
        for s0 in range(5):
            assert abs(v[3, s0] - brute_force_optimal(trans, goal, 3, s0)) <= 1e-10
    assert enumerated >= 50
    _budget(t0, 60)


@pytest.mark.acceptance("Certificate soundness")
def test_certificate_soundness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2002)
    checked = 0
    for i in range(200):
        _, _, m = _model(rng, int(rng.integers(3, 80)), int(rng.integers(1, 5)), int(rng.integers(1, 8)))
        v = solve_exact(m).v_star
        lo, up = random_valid_certificates(m, rng)
        # random perturbations: keep whichever sides still validate
        lo2 = CertificateSequence("lower", np.clip(lo.funcs + rng.normal(0, 0.02, lo.funcs.shape), 0, 1))
        up2 = CertificateSequence("upper", np.clip(up.funcs + rng.normal(0, 0.02, up.funcs.shape), 0, 1))
        for L in (lo, lo2):
            for U in (up, up2):
                for x0 in rng.choice(m.n_states, size=min(5, m.n_states), replace=False):
                    res = certify_sandwich(m, L, U, int(x0))
                    if res.status == "ok":
                        assert res.lower <= v[-1, x0] + 1e-12 and v[-1, x0] <= res.upper + 1e-12
                        checked += 1
                    else:
                        assert res.violations
        for lv in (lo, lo2):
            val = validate_certificate(m, lv)
            if val.valid:
                assert np.all(lv.funcs <= v + 1e-12)
        for uv in (up, up2):
            val = validate_certificate(m, uv)
            if val.valid:
                assert np.all(v <= uv.funcs + 1e-12)
        x0 = int(rng.integers(m.n_states))
        triv = certify_sandwich(m, *trivial_certificates(m), x0)
        exact = certify_sandwich(m, *exact_certificates(solve_exact(m)), x0)
        if not m.goal[x0]:
            assert triv.gap == 1.0
        assert exact.gap == 0.0
    assert checked >= 500
    _budget(t0, 60)


@pytest.mark.acceptance("Score certificate")
def test_score_certificate():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3003)
    for i in range(1000):
        _, _, m = _model(rng, int(rng.integers(3, 40)), int(rng.integers(1, 5)), int(rng.integers(1, 7)))
        t = solve_exact(m)
        eps = float(rng.choice([0.0, 0.01, 0.05, 0.1, 0.2]))
        sc = perturbed_scores(m, t, eps, np.random.default_rng([3003, i]))
        x0 = int(rng.integers(m.n_states))
        res = score_certificate(m, sc, eps, x0, t)
        assert not res.premise_violated
        assert res.sandwich_holds
        assert res.gap <= 2 * eps + 1e-12
    _budget(t0, 120)


@pytest.mark.acceptance("Worst-case regret")
def test_worst_case_regret():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4004)
    violations = 0
    for i in range(1000):
        _, _, m = _model(rng, int(rng.integers(3, 50)), int(rng.integers(1, 5)), int(rng.integers(1, 8)))
        t = solve_exact(m)
        eps = (0.01, 0.05, 0.1)[i % 3]
        sc = perturbed_scores(m, t, eps, np.random.default_rng([4004, i]))
        pol = greedy_policy(sc)
        x0 = int(rng.integers(m.n_states))
        rep = measure_regret(m, pol, x0, sc, t)
        violations += not rep.holds
        assert rep.bound == pytest.approx(2 * eps * m.horizon)
        # per-step loss at every state the policy can visit from x0
        r = one_step_losses(t, pol)
        dom = relevant_domain(m, [x0])
        violations += int(np.sum(r[dom] > 2 * eps + 1e-12))
    assert violations == 0
    _budget(t0, 120)


@pytest.mark.acceptance("Fast rate")
def test_fast_rate():
    m, dist = generate(EnvSpec("margin_designed", depth=6, width=40, margin_profile="uniform_gaps", seed=0))
    rows = fast_rate_experiment(m, 1, EPS_GRID, 500, 0, dist.weights, solve_exact(m))
    slope, _ = loglog_fit(EPS_GRID, [r["mean_regret"] for r in rows])
    print(f"fast-rate slope {slope:.3f}")
    assert 1.6 <= slope <= 2.4
    m, dist = generate(EnvSpec("margin_designed", depth=6, width=40, margin_profile="constant_gap", gap=0.4, seed=0))
    assert 0.4 > 2 * max(EPS_GRID)
    rows = fast_rate_experiment(m, 1, EPS_GRID, 500, 0, dist.weights, solve_exact(m))
    assert [r["mean_regret"] for r in rows] == [0.0] * 4


@pytest.mark.acceptance("Estimation coverage")
def test_estimation_coverage():
    t0 = time.perf_counter()
    model, tables, dom = estimation_instance(200, 2, 1.0)
    for delta in (0.05, 0.2):
        conf = CoverageConfig(1, 0.05, 2.5, 200, delta, dom)
        rep = verify_uniform_bound(model, tables, conf, 500, 17)
        print(f"delta={delta}: coverage {rep.coverage:.3f} >= {rep.threshold:.3f}")
        assert rep.threshold == pytest.approx(1 - delta - 3 * math.sqrt(delta * (1 - delta) / 500))
        assert rep.coverage >= rep.threshold
    _budget(t0, 300)


@pytest.mark.acceptance("Adaptive deviation")
def test_adaptive_deviation():
    for N in (1, 32):
        chain, F = deviation_setup(N, 0)
        for n in (500, 2000):
            rep = adaptive_deviation_experiment(chain, F, n, 0.0, 0.05, 500, 7 * N + n)
            print(f"N={N} n={n}: coverage {rep.coverage:.3f}")
            assert rep.coverage >= coverage_threshold(0.05, 500)


@pytest.mark.acceptance("Truncation")
def test_truncation():
    for seed in range(50):
        m, dist = random_goal_measure_model(seed)
        rng = np.random.default_rng([5005, seed])
        masses = np.array([x.total_mass for x in m.payloads])
        x0 = int(dist.support[0])
        w = float(rng.uniform(masses[x0], masses.max() + 0.5))
        probs = rng.dirichlet(np.ones(m.max_actions), size=(m.horizon + 1, m.n_states)) * m.action_mask
        probs /= probs.sum(axis=2, keepdims=True)
        chk = verify_truncation_bound(m, PolicyTable(probs), x0, w)
        assert chk.v_true >= chk.v_trunc
        assert chk.v_true >= chk.v_trunc - chk.delta_w
    m, dist = generate(EnvSpec("overflow_chain", branching=2, split_prob=0.5, start_mass=2, depth=2,
                               n_actions=1, noise=0.0))
    p = overflow_probability(m, PolicyTable.uniform(m), int(dist.support[0]), 3.0)
    assert abs(p - 0.25) <= 1e-12


@pytest.mark.acceptance("BL metric")
def test_bl_metric():
    rng = np.random.default_rng(6006)
    space = MetricSpace.from_coordinates(rng.uniform(0, 3, size=(10, 2)))

    def measure():
        k = int(rng.integers(0, 5))
        idx = rng.choice(10, size=k, replace=False)
        return GoalMeasure([(space.points[i], float(rng.uniform(0.1, 2))) for i in idx])

    for _ in range(200):
        a, b, c = measure(), measure(), measure()
        ab = bl_distance(a, b, space)[0]
        assert ab >= -1e-9
        assert abs(ab - bl_distance(b, a, space)[0]) <= 1e-9
        assert ab <= bl_distance(a, c, space)[0] + bl_distance(c, b, space)[0] + 1e-9
        assert abs(bl_distance(a, a, space)[0]) <= 1e-9
        assert abs(ab - bl_primal(dict(a.support), dict(b.support), space.d)) <= 1e-9
    for p in space.points:
        dp = GoalMeasure([(p, 1.0)])
        assert abs(bl_distance(dp, ZERO, space)[0] - 1.0) <= 1e-9
        for q in space.points:
            dq = GoalMeasure([(q, 1.0)])
            assert abs(bl_distance(dp, dq, space)[0] - min(space.d(p, q), 2.0)) <= 1e-9


@pytest.mark.acceptance("Scaling sweeps")
def test_scaling_sweeps():
    t0 = time.perf_counter()
    worst = scaling_sweep(ExperimentConfig("scaling_sweep", [0], parameters={"axis": "eps_worstcase", "trials": 500}))
    margin = scaling_sweep(ExperimentConfig("scaling_sweep", [0], parameters={"axis": "eps_margin", "trials": 500}))
    est = scaling_sweep(ExperimentConfig("scaling_sweep", [0], parameters={"axis": "n", "trials": 20}))
    print(f"slopes: worst-case {worst['slope']:.3f}, margin {margin['slope']:.3f}, estimation {est['slope']:.3f}")
    assert 0.8 <= worst["slope"] <= 1.2
    assert 1.6 <= margin["slope"] <= 2.4
    assert -0.5 <= est["slope"] <= -0.2
    _budget(t0, 15 * 60)

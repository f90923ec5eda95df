import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from provlab.mdp import (MdpModel, ModelError, PolicyTable, check_attainment, continuation_q, dump_model,
                         evaluate_policy, load_model, optimal_policy, simulate, simulate_many, solve_exact)
from oracles import (brute_force_optimal, enumerate_optimal, enumerate_policy_value, random_transitions)


def test_chain_values(chain):
    t = solve_exact(chain)
    assert t.v_star[1, 0] == pytest.approx(0.5, abs=1e-15)
    assert t.v_star[2, 0] == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(t.v_star, [[0, 0, 1], [0.5, 1, 1], [1, 1, 1]])
    assert np.isnan(t.q_star[0]).all()


def test_goal_start_is_one_at_every_depth(chain):
    t = solve_exact(chain.with_horizon(6))
    assert np.all(t.v_star[:, 2] == 1.0)


def test_zero_horizon_non_goal_is_zero(chain):
    t = solve_exact(chain.with_horizon(0))
    assert t.v_star.shape == (1, 3)
    assert t.v_star[0, 0] == 0.0


def test_optimal_policy_recovers_v_star(rng):
    trans, goal = random_transitions(rng, 60, 4)
    m = MdpModel.from_transitions(60, trans, goal, 6)
    t = solve_exact(m)
    np.testing.assert_allclose(evaluate_policy(m, optimal_policy(m, t)), t.v_star, atol=1e-14)


def test_uniform_policy_chain(chain2):
    # V_2(s0) = 0.5 (0.5 + 0.5 * 1) + 0.5 * V_1(s0); with a uniform action
    # at s0 also at the last step V_1(s0) = 0.25, with action a there 0.5.
    v = evaluate_policy(chain2, PolicyTable.uniform(chain2))
    assert v[2, 0] == pytest.approx(0.625, abs=1e-15)
    probs = PolicyTable.uniform(chain2).probs
    probs[1, 0] = [1.0, 0.0]
    assert evaluate_policy(chain2, PolicyTable(probs))[2, 0] == pytest.approx(0.75, abs=1e-15)


def test_goal_value_one_under_any_policy(chain2):
    v = evaluate_policy(chain2, PolicyTable.uniform(chain2))
    assert np.all(v[:, 2] == 1.0)


def test_policy_validation(chain2):
    probs = PolicyTable.uniform(chain2).probs
    probs[1, 1, 1] = 0.5  # s1 has a single action
    with pytest.raises(ModelError):
        evaluate_policy(chain2, PolicyTable(probs))
    with pytest.raises(ModelError):
        evaluate_policy(chain2, PolicyTable(np.full((3, 3, 2), np.nan)))


def test_model_validation():
    with pytest.raises(ModelError):
        MdpModel.from_transitions(2, {0: [{1: 0.7}], 1: [{1: 1.0}]}, [False, True], 1)
    with pytest.raises(ModelError):
        MdpModel.from_transitions(2, {0: [{1: 1.0}], 1: [{1: 1.0}]}, [False, True], -1)
    m = MdpModel.from_transitions(2, {0: [{1: 2.0, 0: 2.0}], 1: [{1: 1.0}]}, [False, True], 1, normalize=True)
    assert m.transition(0, 0).tolist() == [0.5, 0.5]


@pytest.mark.parametrize("seed", range(5))
def test_solve_matches_recursive_enumeration(seed):
    rng = np.random.default_rng(seed)
    trans, goal = random_transitions(rng, 25, 4)
    m = MdpModel.from_transitions(25, trans, goal, 5)
    np.testing.assert_allclose(solve_exact(m).v_star, enumerate_optimal(trans, goal, 5), atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_solve_matches_policy_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    trans, goal = random_transitions(rng, 5, 2, n_succ=2, goal_frac=0.2)
    m = MdpModel.from_transitions(5, trans, goal, 3)
    t = solve_exact(m)
    for s0 in range(5):
        assert t.v_star[3, s0] == pytest.approx(brute_force_optimal(trans, goal, 3, s0), abs=1e-12)


def test_evaluate_policy_matches_recursion(rng):
    trans, goal = random_transitions(rng, 20, 3)
    m = MdpModel.from_transitions(20, trans, goal, 4)
    probs = rng.random((5, 20, 3)) * m.action_mask
    probs /= probs.sum(axis=2, keepdims=True)
    v = evaluate_policy(m, PolicyTable(probs))
    for s in range(20):
        assert v[4, s] == pytest.approx(enumerate_policy_value(trans, goal, 4, s, probs), abs=1e-12)


def test_continuation_q(chain2):
    t = solve_exact(chain2)
    q = continuation_q(chain2, optimal_policy(chain2, t), 2)
    np.testing.assert_allclose(q[0], t.q_star[2, 0])


def test_simulate_goal_start(chain):
    assert simulate(chain, PolicyTable.uniform(chain), "g", seed=3) == [2]


def test_simulate_deterministic_kernel_is_seed_free():
    trans = {0: [{1: 1.0}], 1: [{2: 1.0}], 2: [{3: 1.0}], 3: [{3: 1.0}]}
    m = MdpModel.from_transitions(4, trans, [False] * 3 + [True], 5)
    pol = PolicyTable.uniform(m)
    runs = {tuple(simulate(m, pol, 0, seed)) for seed in range(20)}
    assert runs == {(0, 1, 2, 3)}


def test_simulated_success_frequency(chain):
    t = solve_exact(chain)
    hits = simulate_many(chain, optimal_policy(chain, t), "s0", 100_000, seed=1)
    p = t.v_star[2, 0]
    sigma = np.sqrt(max(p * (1 - p), 1e-12) / hits.size)
    assert abs(hits.mean() - p) <= 3 * sigma + 1e-12


def test_simulated_frequency_binomial_band(rng):
    trans, goal = random_transitions(rng, 30, 3)
    m = MdpModel.from_transitions(30, trans, goal, 4)
    pol = PolicyTable.uniform(m)
    s0 = int(np.flatnonzero(~m.goal)[0])
    p = evaluate_policy(m, pol)[4, s0]
    hits = simulate_many(m, pol, s0, 50_000, seed=7)
    assert abs(hits.mean() - p) <= 4 * np.sqrt(p * (1 - p) / hits.size) + 1e-9


def test_attainment_and_tie_break(rng):
    trans = {0: [{1: 0.3, 0: 0.7}, {1: 0.3, 0: 0.7}], 1: [{1: 1.0}]}
    m = MdpModel.from_transitions(2, trans, [False, True], 3)
    t = solve_exact(m)
    assert check_attainment(m, t).ok
    assert np.all(t.argmax[1:, 0] == 0)
    trans, goal = random_transitions(rng, 50, 4)
    m = MdpModel.from_transitions(50, trans, goal, 8)
    assert check_attainment(m, solve_exact(m)).violations == []


def test_model_json_roundtrip(rng):
    trans, goal = random_transitions(rng, 15, 3)
    m = MdpModel.from_transitions(15, trans, goal, 4, states=tuple((i, "x") for i in range(15)))
    m2 = load_model(dump_model(m))
    assert m2.states == m.states
    np.testing.assert_allclose(solve_exact(m2).v_star, solve_exact(m).v_star, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 30), st.integers(1, 5), st.integers(0, 8))
def test_value_monotone_and_in_range(seed, n, a, horizon):
    rng = np.random.default_rng(seed)
    trans, goal = random_transitions(rng, n, a)
    v = solve_exact(MdpModel.from_transitions(n, trans, goal, horizon)).v_star
    assert np.all(v >= 0) and np.all(v <= 1 + 1e-12)
    assert np.all(np.diff(v, axis=0) >= -1e-12)
    assert np.all(v[:, goal] == 1.0)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from provlab.goal_measure import ZERO, GoalMeasure, bl_distance, check_witness, is_solved, mass
from provlab.metric_space import MetricSpace
from oracles import bl_primal


@pytest.fixture(scope="module")
def space():
    rng = np.random.default_rng(5)
    return MetricSpace.from_coordinates(rng.uniform(0, 3, size=(8, 2)))


def test_mass_and_solved():
    assert mass(ZERO) == 0 and is_solved(ZERO)
    p, q = GoalMeasure([("p", 1.0)]), GoalMeasure([("q", 1.0)])
    assert mass(p + q) == 2
    assert mass(GoalMeasure([("p", 1.0)] * 3)) == 3
    assert not is_solved(p)
    assert not is_solved(GoalMeasure([("p", 1e-15)]))


def test_invalid_weights():
    with pytest.raises(ValueError):
        GoalMeasure([("p", 0.0)])
    with pytest.raises(ValueError):
        GoalMeasure([("p", -1.0)])


def test_canonical_form():
    a = GoalMeasure([("q", 1.0), ("p", 0.5), ("q", 2.0)])
    b = GoalMeasure([("p", 0.5), ("q", 3.0)])
    assert a == b and hash(a) == hash(b)
    assert GoalMeasure.from_json(a.to_json()) == a


def test_bl_closed_forms():
    s = MetricSpace.from_coordinates(np.array([[0.0], [0.5], [3.0]]), points=["p", "q", "r"])
    dp, dq, dr = (GoalMeasure([(x, 1.0)]) for x in "pqr")
    assert bl_distance(dp, dp, s)[0] == 0.0
    assert bl_distance(dp, ZERO, s)[0] == pytest.approx(1.0, abs=1e-9)
    assert bl_distance(dp, dq, s)[0] == pytest.approx(0.5, abs=1e-9)
    assert bl_distance(dp, dr, s)[0] == pytest.approx(2.0, abs=1e-9)


def test_unknown_point(space):
    with pytest.raises(KeyError):
        bl_distance(GoalMeasure([("nowhere", 1.0)]), ZERO, space)


def _random_measure(rng, space, max_atoms=4):
    k = int(rng.integers(0, max_atoms + 1))
    idx = rng.choice(len(space), size=k, replace=False)
    return GoalMeasure([(space.points[i], float(rng.uniform(0.1, 2.0))) for i in idx])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_bl_matches_transport_primal(space, seed):
    rng = np.random.default_rng(seed)
    a, b = _random_measure(rng, space), _random_measure(rng, space)
    val, wit = bl_distance(a, b, space)
    assert check_witness(a, b, wit, space)
    assert val == pytest.approx(bl_primal(dict(a.support), dict(b.support), space.d), abs=1e-8)


def test_bl_metric_axioms(space):
    rng = np.random.default_rng(11)
    for _ in range(50):
        a, b, c = (_random_measure(rng, space) for _ in range(3))
        ab, ba = bl_distance(a, b, space)[0], bl_distance(b, a, space)[0]
        assert ab >= -1e-9 and abs(ab - ba) <= 1e-9
        assert ab <= bl_distance(a, c, space)[0] + bl_distance(c, b, space)[0] + 1e-9
        assert (ab <= 1e-9) == (a == b)

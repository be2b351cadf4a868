import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safepd.errors import ConfigError
from safepd.mdp_core import Mode
from safepd.nav_env import (Circle, InitialDistribution, NavEnv, NavScenario, Obstacle, Rectangle,
                            default_scenario, in_safe_set, parse_scenario, reward, step)


def test_zero_action_keeps_state():
    assert np.array_equal(step([3.0, 4.0], [0.0, 0.0]), [3.0, 4.0])


def test_step_clamps_to_domain():
    assert np.array_equal(step([9.8, 5.0], [1.0, 0.0]), [10.0, 5.0])


def test_interior_step_is_vector_sum():
    assert np.allclose(step([3.0, 4.0], [0.25, -0.5]), [3.25, 3.5], rtol=0, atol=0)


def test_reward_values():
    assert reward([8.5, 1.5], [8.5, 1.5]) == 0.0
    assert reward([8.5, 2.5], [8.5, 1.5]) == -1.0


def test_reward_coordinatewise(rng):
    s, g = rng.uniform(0, 10, 2), rng.uniform(0, 10, 2)
    assert reward(s, g) == -((s[0] - g[0]) ** 2 + (s[1] - g[1]) ** 2)


def test_circle_membership():
    ob = Obstacle("c", Circle((5.0, 5.0), 1.0))
    assert in_safe_set([7.0, 5.0], ob)
    assert not in_safe_set([5.0, 5.0], ob)
    assert not in_safe_set([6.0, 5.0], ob)  # boundary is unsafe


def test_rectangle_membership():
    ob = Obstacle("r", Rectangle((2.0, 2.0), (3.0, 3.0)))
    assert not in_safe_set([2.5, 2.5], ob)
    assert in_safe_set([1.9, 2.5], ob)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 11), st.floats(-1, 11)), min_size=1, max_size=20))
def test_vectorized_safety_matches_per_obstacle(points):
    env = NavEnv(default_scenario())
    s = np.asarray(points)
    per_shape = np.stack([~ob.geometry.contains(s) for ob in env.scenario.obstacles], axis=1)
    assert np.array_equal(env.safe(s), per_shape)


def test_safety_predicate_is_pure(small_scenario, rng):
    env = NavEnv(small_scenario)
    s = rng.uniform(0, 10, (100, 2))
    assert np.array_equal(env.safe(s), env.safe(s.copy()))


def test_uniform_safe_initial_states(small_scenario, rng):
    env = NavEnv(small_scenario)
    s = env.initial_states(500, rng)
    assert s.shape == (500, 2)
    assert env.safe(s).all()
    assert env.contains(s).all()


def test_fixed_and_mixture_initial_states(small_scenario, rng):
    fixed = NavEnv(small_scenario.with_initial(InitialDistribution("fixed", ((1.0, 9.0),))))
    assert np.all(fixed.initial_states(4, rng) == [1.0, 9.0])
    pts = ((1.0, 9.0), (8.0, 9.5))
    mix = NavEnv(small_scenario.with_initial(InitialDistribution("mixture", pts)))
    s = mix.initial_states(200, rng)
    assert {tuple(p) for p in s} == set(pts)


def test_default_scenario_shape():
    sc = default_scenario()
    assert sc.labels == ["red", "green", "orange", "cyan", "purple"]
    assert sc.goal == (8.5, 1.5)
    specs = sc.constraint_specs(Mode.CONTINUING, gamma=0.95)
    assert len(specs) == 5
    assert all(s.c < 20.0 for s in specs)
    env = NavEnv(sc)
    assert env.safe(np.array([sc.goal])).all()


def test_without_and_round_trip(small_scenario):
    assert small_scenario.without(0).labels == ["wall"]
    import yaml
    back = parse_scenario(yaml.safe_dump(small_scenario.to_dict()))
    assert back == small_scenario


@pytest.mark.parametrize("text, where", [
    ("goal: [11, 1]", "outside the domain"),
    ("obstacles:\n  - {label: a, shape: circle, center: [50, 50], radius: 1}", "does not intersect"),
    ("obstacles:\n  - {label: a, shape: hexagon, center: [5, 5]}", "obstacles"),
    ("initial_distribution: {kind: fixed, point: [5, 5]}\n"
     "obstacles:\n  - {label: a, shape: circle, center: [5, 5], radius: 1}", "inside obstacle"),
    ("initial_distribution: {kind: fixed}", "needs 'point'"),
    ("obstacles:\n  - {label: a, shape: rectangle, min: [3, 3], max: [2, 4]}", "min corner"),
    ("colour: red", "colour"),
])
def test_scenario_validation(text, where):
    with pytest.raises(ConfigError, match=where):
        parse_scenario(text)


def test_scenario_errors_name_the_line():
    text = "goal: [8.5, 1.5]\nobstacles:\n  - label: a\n    shape: circle\n    center: [5, 5]\n    radius: -1\n"
    with pytest.raises(ConfigError, match=r":6:"):
        parse_scenario(text)


def test_degenerate_rectangle_rejected_before_use():
    with pytest.raises(ConfigError):
        NavScenario(obstacles=(Obstacle("x", Rectangle((20.0, 20.0), (21.0, 21.0))),))

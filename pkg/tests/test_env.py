import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmfg.env import (
    FlockingConfig,
    inverse_cdf,
    make_env,
    make_flocking,
    make_invest,
    make_sis,
    make_toy_leftright,
    probability_rows_ok,
    sample_transition,
)

ENVS = {
    "sis": make_sis(),
    "sis_inf": make_sis(horizon=None),
    "invest": make_invest(),
    "flocking": make_flocking(),
    "toy": make_toy_leftright(),
}


def test_sis_examples():
    env = make_sis()
    assert np.allclose(env.transition(0, [0.5, 0.5], 0), [0.6, 0.4])
    assert np.array_equal(env.transition(0, [0.1, 0.9], 1), [1.0, 0.0])
    assert np.array_equal(env.transition(1, [0.3, 0.1], 1), [0.5, 0.5])
    assert env.reward(1, [0.3, 0.7], 1) == -2.5
    assert env.reward(0, [0.3, 0.7], 0) == 0.0
    assert env.horizon == 50 and env.gamma == 1.0
    assert np.array_equal(env.initial_law, [0.5, 0.5])


def test_sis_infinite_mode():
    env = make_sis(horizon=None)
    assert not env.finite and env.gamma == 0.95
    assert env.q_bound() == pytest.approx(2.5 / 0.05)


def test_invest_examples():
    env = make_invest()
    m = np.zeros(10)
    assert env.transition(9, m, 0)[9] == 1.0
    assert env.transition(3, m, 0)[4] == pytest.approx(0.6)
    assert env.transition(3, m, 0)[3] == pytest.approx(0.4)
    assert np.array_equal(env.transition(5, m, 1), np.eye(10)[5])
    assert env.reward(0, np.full(10, 0.7), 1) == 0.0
    m[2] = 1.0
    assert env.reward(3, m, 0) == pytest.approx(0.3 * 3 / 3 - 2)
    assert np.array_equal(env.initial_law, np.eye(10)[0])


def test_flocking_examples():
    env = make_flocking(FlockingConfig(sigma=0.0))
    for x in range(env.n_states):
        assert env.transition(x, np.zeros(env.n_states), 0)[x] == 1.0
    env = make_flocking()
    m = np.zeros(env.n_states)
    i = int(np.argmin(np.abs(env.state_coords - 0.6)))
    m[i] = 1.0
    assert env.terminal_reward(i, m) == pytest.approx(0.0, abs=1e-15)
    assert env.reward(3, m, env.n_actions - 1) == pytest.approx(-0.1)


def test_flocking_centroid_flag():
    coords_env = make_flocking(FlockingConfig(normalize_centroid=False))
    m = np.zeros(21)
    m[20] = 0.5  # coord 1, mass 0.5
    # unnormalized centroid is 0.5, normalized is 1
    assert coords_env.terminal_reward(20, m) == pytest.approx(-0.25)
    assert make_flocking().terminal_reward(20, m) == pytest.approx(0.0)
    # empty neighborhood falls back to the middle of the interval
    assert make_flocking().terminal_reward(0, np.zeros(21)) == pytest.approx(-0.25)


def test_flocking_config_validation():
    with pytest.raises(ValueError):
        FlockingConfig(grid_size=1)
    with pytest.raises(ValueError):
        FlockingConfig(dt=0.2, T_steps=10)


def test_toy_examples():
    env = make_toy_leftright()
    assert env.terminal_reward(2, [0.0, 0.1, 0.3]) == pytest.approx(-0.3)
    assert env.terminal_reward(1, np.zeros(3)) == 0.0
    assert np.array_equal(env.transition(0, np.zeros(3), 0), [0, 1, 0])
    assert np.array_equal(env.transition(0, np.zeros(3), 1), [0, 0, 1])
    assert env.horizon == 1


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(sorted(ENVS)), st.integers(0, 2**31))
def test_transition_rows_are_probabilities(name, seed):
    env = ENVS[name]
    rng = np.random.default_rng(seed)
    # 250 measures per example, mass in [0, 2]
    m = rng.dirichlet(np.ones(env.n_states), size=250) * rng.uniform(0, 2, size=(250, 1))
    P = env.kernel(m)
    assert probability_rows_ok(P, atol=1e-12)


@settings(max_examples=40)
@given(st.integers(0, 2**31))
def test_reward_bounds(seed):
    rng = np.random.default_rng(seed)
    for name in ("sis", "invest", "flocking"):
        env = ENVS[name]
        m = rng.dirichlet(np.ones(env.n_states), size=100) * rng.uniform(0, 2, size=(100, 1))
        assert np.abs(env.rewards(m)).max() <= env.reward_bound + 1e-12
    assert ENVS["sis"].reward_bound == 2.5
    assert ENVS["invest"].reward_bound == pytest.approx(2.7)


def test_flocking_mass_preserved():
    env = make_flocking(FlockingConfig(sigma=0.5))
    P = env.kernel(np.zeros(env.n_states))
    assert np.allclose(P.sum(axis=-1), 1.0, atol=1e-12)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=20))
def test_sis_infection_monotone(levels):
    env = make_sis()
    levels = np.sort(levels)
    m = np.stack([1 - levels, levels], axis=1)
    p = env.kernel(m)[:, 0, 0, 1]
    assert np.all(np.diff(p) >= 0)


def test_sample_transition():
    rng = np.random.default_rng(3)
    inv = make_invest()
    assert all(sample_transition(inv, rng, 4, np.zeros(10), 1) == 4 for _ in range(20))
    sis = make_sis()
    assert inverse_cdf(sis.transition(1, [1, 0], 0), 0.3) == 0
    assert inverse_cdf(sis.transition(1, [1, 0], 0), 0.7) == 1
    a = [sample_transition(sis, np.random.default_rng(9), 0, [0.5, 0.5], 0) for _ in range(5)]
    r1, r2 = np.random.default_rng(11), np.random.default_rng(11)
    s1 = [sample_transition(sis, r1, 0, [0.2, 0.8], 0) for _ in range(50)]
    s2 = [sample_transition(sis, r2, 0, [0.2, 0.8], 0) for _ in range(50)]
    assert s1 == s2 and len(set(a)) == 1


def test_inverse_cdf_vectorized():
    probs = np.array([[0.2, 0.8], [1.0, 0.0]])
    assert np.array_equal(inverse_cdf(probs, np.array([0.5, 0.99])), [1, 0])
    # zero-probability trailing states are never chosen
    assert inverse_cdf([1.0, 0.0], 0.999999) == 0


def test_make_env_from_config():
    assert make_env({"env": "sis"}).horizon == 50
    env = make_env({"env": "sis", "horizon": None, "gamma": 0.9})
    assert env.horizon is None and env.gamma == 0.9
    assert make_env({"env": "invest", "horizon": 10}).horizon == 10
    assert make_env({"env": "flocking", "flocking": {"grid_size": 5}}).n_states == 5
    assert make_env({"env": "toy"}).name == "toy"
    with pytest.raises(ValueError):
        make_env({"env": "mars"})


def test_environment_validation():
    with pytest.raises(ValueError):
        make_sis(horizon=None, gamma=1.0)
    with pytest.raises(ValueError):
        make_sis(initial_law=(0.5, 0.6))

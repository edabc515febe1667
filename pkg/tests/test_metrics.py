import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import constant_env, tabular_env
from oracles import rollout_returns
from gmfg.env import make_flocking, make_invest, make_sis, make_toy_leftright, FlockingConfig
from gmfg.exact import exact_best_response, exact_fpi, greedy_policy, initial_population, policy_from_q
from gmfg.graphon import Graphon, LabelDiscretization, precompute_weights
from gmfg.metrics import (
    MetricsRow,
    epoch_gaps,
    exploitability,
    initial_values,
    policy_distance,
    policy_value,
    tv_distance,
    w1_distance,
    w1_for_env,
)

REGRESSION_UNIFORM_SIS = 1.9224679385249326

probs = st.integers(2, 6).flatmap(
    lambda n: st.tuples(*[st.integers(0, 2**31)] * 3).map(
        lambda seeds: [np.random.default_rng(s).dirichlet(np.ones(n)) for s in seeds]
    )
)


def test_tv_examples():
    assert tv_distance([1, 0], [0, 1]) == 2.0
    assert tv_distance([0.3, 0.7], [0.3, 0.7]) == 0.0
    A = np.array([[1.0, 0.0], [0.5, 0.5]])
    B = np.array([[0.0, 1.0], [0.5, 0.5]])
    assert tv_distance(A, B) == 1.0
    with pytest.raises(ValueError):
        tv_distance([1, 0], [1, 0, 0])


def test_w1_examples():
    assert w1_distance([1, 0], [0, 1], [0, 1]) == 1.0
    assert w1_distance([0.2, 0.8], [0.2, 0.8], [0, 1]) == 0.0
    assert w1_distance([0.5, 0.5, 0], [0, 0.5, 0.5], [0, 0.5, 1]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        w1_distance([1, 0], [0, 1], [1, 0])


@given(probs)
def test_metric_axioms(triple):
    p, q, r = triple
    coords = np.linspace(0, 2, len(p))
    for dist in (tv_distance, lambda a, b: w1_distance(a, b, coords)):
        assert dist(p, p) == pytest.approx(0, abs=1e-12)
        assert dist(p, q) == pytest.approx(dist(q, p), abs=1e-12)
        assert dist(p, r) <= dist(p, q) + dist(q, r) + 1e-12
    # transport cost is at most half the l1 mass difference times the diameter
    assert w1_distance(p, q, coords) <= 2.0 / 2 * tv_distance(p, q) + 1e-12


def test_w1_for_env_uses_sorted_coords():
    toy = make_toy_leftright()  # coords (0, -1, 1)
    p = np.array([0.0, 1.0, 0.0])
    q = np.array([0.0, 0.0, 1.0])
    assert w1_for_env(toy, p, q) == pytest.approx(2.0)
    assert w1_for_env(make_sis(), [1, 0], [0, 1]) is None


def test_policy_distance():
    a = np.array([[[1.0, 0.0], [0.5, 0.5]]])
    b = np.array([[[0.0, 1.0], [0.5, 0.5]]])
    assert policy_distance(a, b) == 1.0


def test_epoch_gap_examples():
    M = np.full((2, 2), 0.5)
    Q = np.zeros((2, 2, 2))
    assert epoch_gaps(M, M, Q, Q) == (0.0, 0.0)
    Q2 = Q.copy()
    Q2[1, 0, 1] = 3.0
    assert epoch_gaps(M, M, Q, Q2)[1] == 3.0
    M2 = np.array([[1.0, 0.0], [0.5, 0.5]])
    assert epoch_gaps(M, M2, Q, Q2) == epoch_gaps(M2, M, Q2, Q)


def test_metrics_row_schema():
    assert MetricsRow.FIELDS == tuple(f.name for f in dataclasses.fields(MetricsRow))


def test_policy_value_trivial():
    env = constant_env(1.0, 0.5)
    assert np.allclose(policy_value(env, [[1.0]], np.ones((1, 1)), np.ones((1, 1, 1))), 2.0)
    zero = tabular_env(np.full((2, 2, 2), 0.5), np.zeros((2, 2)))
    assert np.allclose(policy_value(zero, [[1.0]], np.full((1, 2), 0.5), np.full((1, 2, 2), 0.5)), 0.0)


def test_policy_value_matches_monte_carlo():
    env = make_sis(horizon=10)
    w = precompute_weights(Graphon.uniform(), LabelDiscretization(4))
    rng = np.random.default_rng(5)
    M = rng.dirichlet(np.ones(2), size=(11, 4))
    M[0] = env.initial_law
    pi = rng.dirichlet(np.ones(2), size=(10, 4, 2))
    V = policy_value(env, w, M, pi)
    exact = initial_values(env, V, M)[0]
    samples = rollout_returns(env, w, M, pi, 10_000, rng)
    se = samples.std(ddof=1) / np.sqrt(len(samples))
    assert abs(samples.mean() - exact) <= 3 * se


def _suite():
    D = 3
    disc = LabelDiscretization(D)
    small_flock = make_flocking(FlockingConfig(grid_size=7, action_grid=3))
    for env in (make_sis(horizon=None), make_invest(horizon=None), make_sis(horizon=8),
                make_invest(horizon=8), small_flock, make_toy_leftright()):
        yield env, precompute_weights(Graphon.uniform(), disc), initial_population(env, D)


@pytest.mark.parametrize("case", list(_suite()), ids=lambda c: f"{c[0].name}-{c[0].horizon}")
def test_greedy_best_response_unexploitable(case):
    env, w, M = case
    Q = exact_best_response(env, w, M)
    pi = greedy_policy(Q[: env.horizon] if env.finite else Q)
    assert abs(exploitability(env, w, M, pi)) <= 1e-8


@pytest.mark.parametrize("case", list(_suite()), ids=lambda c: f"{c[0].name}-{c[0].horizon}")
def test_exploitability_invariant_to_reward_shift(case):
    env, w, M = case
    shifted = dataclasses.replace(env, rewards=lambda m, f=env.rewards: f(m) + 1.0, reward_bound=env.reward_bound + 1)
    pi = policy_from_q(env, np.zeros(M.shape + (env.n_actions,)), 0.1)
    assert exploitability(env, w, M, pi) == pytest.approx(exploitability(shifted, w, M, pi), abs=1e-8)


def test_uniform_policy_on_sis_is_exploitable():
    env = make_sis(horizon=None)
    w = precompute_weights(Graphon.uniform(), LabelDiscretization(4))
    M = initial_population(env, 4)
    val = exploitability(env, w, M, np.full((4, 2, 2), 0.5))
    assert val > 0
    # regression snapshot against the dynamic-programming oracle
    assert val == pytest.approx(REGRESSION_UNIFORM_SIS, rel=1e-9)


def test_exploitability_per_class_nonnegative():
    env = make_invest(horizon=None)
    w = precompute_weights(Graphon.ranked(), LabelDiscretization(4))
    M = initial_population(env, 4)
    gaps = exploitability(env, w, M, np.full((4, 10, 2), 0.5), per_class=True)
    assert gaps.shape == (4,) and np.all(gaps >= -1e-10)


def test_converged_fpi_within_entropy_gap():
    env = make_sis(horizon=None)
    w = precompute_weights(Graphon.er(0.8), LabelDiscretization(4))
    eq = exact_fpi(env, w, eta=0.01)
    assert eq.converged
    assert exploitability(env, w, eq.M, eq.pi) <= 1e-6 + 0.01 * np.log(2) / (1 - env.gamma)

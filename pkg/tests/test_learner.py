import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_tabular, tabular_env
from gmfg.env import make_sis, make_toy_leftright
from gmfg.exact import induced_population
from gmfg.graphon import Graphon, LabelDiscretization, precompute_weights
from gmfg.learner import (
    LearnConfig,
    StepSchedule,
    learn_finite,
    learn_infinite,
    population_step,
    sarsa_step,
)
from gmfg.metrics import tv_distance


def test_sarsa_step_examples():
    Q = np.zeros((2, 2))
    assert sarsa_step(Q, 0, 1, 1.0, 1, 0, 1.0, 0.5)[0, 1] == 1.0
    assert np.array_equal(sarsa_step(Q, 0, 1, 1.0, 1, 0, 0.0, 0.5), Q)
    Q = np.full((2, 2), 2.0)
    out = sarsa_step(Q, 0, 0, 1.0, 1, 1, 0.5, 0.5)
    assert out[0, 0] == 2.0
    Q[1, 1] = 7.0
    out = sarsa_step(Q, 0, 0, 1.0, 1, 1, 0.5, 0.5)
    changed = np.argwhere(out != Q)
    assert changed.tolist() == [[0, 0]]


def test_population_step_examples():
    assert np.allclose(population_step([0.5, 0.5], 1, 0.1), [0.45, 0.55])
    assert np.array_equal(population_step([0.2, 0.3, 0.5], 2, 1.0), [0, 0, 1])


@settings(max_examples=30)
@given(st.integers(0, 2**31))
def test_population_steps_stay_on_simplex(seed):
    rng = np.random.default_rng(seed)
    M = rng.dirichlet(np.ones(5))
    for tau in range(1000):
        M = population_step(M, rng.integers(5), 1.0 / (1 + tau))
        assert abs(M.sum() - 1) <= 1e-12 and M.min() >= 0


def test_schedule():
    s = StepSchedule(0.5, 1.0)
    assert s.alpha(0) == 0.5 and s.beta(3) == 0.25
    for bad in (0.0, 1.5):
        with pytest.raises(ValueError):
            StepSchedule(alpha0=bad)


def test_config_validation():
    with pytest.raises(ValueError):
        LearnConfig(K=0)
    with pytest.raises(ValueError):
        LearnConfig(eta=0.0)
    with pytest.raises(ValueError):
        learn_infinite(make_sis(horizon=None), np.ones((2, 2)) / 2, LearnConfig(D=3))


def test_environment_mode_checks():
    w = np.ones((1, 1))
    with pytest.raises(ValueError):
        learn_infinite(make_sis(), w, LearnConfig(K=1, H=1))
    with pytest.raises(ValueError):
        learn_finite(make_sis(horizon=None), w, LearnConfig(K=1))


def test_single_step_full_update():
    env = make_sis(horizon=None)
    w = precompute_weights(Graphon.uniform(), LabelDiscretization(3))
    res = learn_infinite(env, w, LearnConfig(K=1, H=1, track_exploitability=False))
    for row in res.M:
        assert sorted(row.tolist()) == [0.0, 1.0]


def test_measure_independent_occupancy(rng):
    env = random_tabular(rng, 3, 2, gamma=0.8)
    w = precompute_weights(Graphon.uniform(), LabelDiscretization(2))
    res = learn_infinite(env, w, LearnConfig(K=3, H=20_000, track_exploitability=False))
    target = induced_population(env, w, res.M, res.pi)
    assert tv_distance(res.M, target) <= 0.1


def _sis_inf_run(seed=7, **kw):
    env = make_sis(horizon=None)
    w = precompute_weights(Graphon.er(0.5), LabelDiscretization(4))
    cfg = LearnConfig(K=3, H=2000, seed=seed, track_exploitability=False, **kw)
    return learn_infinite(env, w, cfg)


def test_infinite_determinism_and_order_independence():
    a = _sis_inf_run()
    b = _sis_inf_run()
    c = _sis_inf_run(class_order=(3, 1, 0, 2))
    d = _sis_inf_run(workers=2)
    for other in (b, c, d):
        assert np.array_equal(a.M, other.M) and np.array_equal(a.Q, other.Q)
    assert not np.array_equal(a.Q, _sis_inf_run(seed=8).Q)


def test_infinite_invariants():
    res = _sis_inf_run(schedule=StepSchedule(global_tau=True))
    diag = res.diagnostics
    assert diag["max_simplex_error"] <= 1e-12
    assert diag["min_population_mass"] >= 0
    assert diag["max_abs_q"] <= diag["q_bound"]
    assert len(res.history) == 3


def test_bad_class_order():
    with pytest.raises(ValueError):
        _sis_inf_run(class_order=(0, 0, 1, 2))


def test_finite_single_step_exact_targets():
    P = np.zeros((2, 2, 2))
    P[:, 0, 0] = 1.0
    P[:, 1, 1] = 1.0
    R = np.array([[0.5, -1.0], [2.0, 0.25]])
    G = np.array([1.0, -3.0])
    env = tabular_env(P, R, horizon=1, G=G)
    w = np.ones((1, 1))
    res = learn_finite(env, w, LearnConfig(K=200, eta=1.0, track_exploitability=False))
    target = R + G[None, :]  # action a leads to state a
    assert np.allclose(res.Q[0, 0], target, atol=1e-12)


def _toy_run(**kw):
    env = make_toy_leftright()
    w = precompute_weights(Graphon.threshold(), LabelDiscretization(4))
    return learn_finite(env, w, LearnConfig(K=50, seed=3, track_exploitability=False, **kw))


def test_finite_determinism_and_order_independence():
    a = _toy_run()
    for other in (_toy_run(), _toy_run(class_order=(2, 0, 3, 1)), _toy_run(workers=3)):
        assert np.array_equal(a.M, other.M) and np.array_equal(a.Q, other.Q)


def test_finite_flow_structure():
    env = make_sis(horizon=5)
    w = precompute_weights(Graphon.uniform(), LabelDiscretization(3))
    res = learn_finite(env, w, LearnConfig(K=20, track_exploitability=False))
    assert res.M.shape == (6, 3, 2) and res.Q.shape == (6, 3, 2, 2) and res.pi.shape == (5, 3, 2, 2)
    assert np.array_equal(res.M[0], np.tile(env.initial_law, (3, 1)))
    assert np.allclose(res.M.sum(axis=-1), 1.0, atol=1e-12)
    assert res.diagnostics["max_abs_q"] <= res.diagnostics["q_bound"]


def test_finite_live_population_mode():
    res = _toy_run(snapshot_population=False)
    assert res.diagnostics["max_simplex_error"] <= 1e-12
    assert np.allclose(res.M[1].sum(axis=-1), 1.0)


def test_history_and_benchmark_columns():
    from gmfg.exact import exact_fpi

    env = make_sis(horizon=None)
    w = precompute_weights(Graphon.er(0.5), LabelDiscretization(2))
    bench = exact_fpi(env, w)
    res = learn_infinite(env, w, LearnConfig(K=4, H=500, record_every=2), benchmark=bench)
    assert [r.epoch for r in res.history] == [2, 4]
    row = res.history[-1]
    assert row.tv_to_benchmark is not None and row.exploitability is not None
    assert row.w1_to_benchmark is None  # SIS has no state coordinates

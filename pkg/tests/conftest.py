import numpy as np
import pytest

from gmfg.env import EnvironmentSpec


def constant_env(reward=1.0, gamma=0.5, horizon=None):
    """One state, one action, reward ``reward`` everywhere."""
    return EnvironmentSpec(
        name="const",
        states=("s",),
        actions=("a",),
        kernel=lambda m: np.ones(np.shape(m)[:-1] + (1, 1, 1)),
        rewards=lambda m: np.full(np.shape(m)[:-1] + (1, 1), float(reward)),
        reward_bound=abs(reward),
        initial_law=np.array([1.0]),
        horizon=horizon,
        gamma=gamma if horizon is None else 1.0,
    )


def tabular_env(P, R, horizon=None, gamma=0.9, G=None, name="tabular"):
    """Measure-independent env from fixed tables P[x, a, y], R[x, a] (and terminal G[x])."""
    P = np.asarray(P, dtype=float)
    R = np.asarray(R, dtype=float)
    X, A = R.shape

    def kernel(m):
        return np.broadcast_to(P, np.shape(m)[:-1] + P.shape).copy()

    def rewards(m):
        return np.broadcast_to(R, np.shape(m)[:-1] + R.shape).copy()

    terminal = None
    if G is not None:
        G = np.asarray(G, dtype=float)

        def terminal(m):
            return np.broadcast_to(G, np.shape(m)).copy()

    return EnvironmentSpec(
        name=name,
        states=tuple(range(X)),
        actions=tuple(range(A)),
        kernel=kernel,
        rewards=rewards,
        reward_bound=float(np.abs(R).max()),
        initial_law=np.full(X, 1.0 / X),
        horizon=horizon,
        gamma=gamma if horizon is None else 1.0,
        terminal=terminal,
        terminal_bound=0.0 if G is None else float(np.abs(G).max()),
    )


def random_tabular(rng, X=2, A=2, horizon=None, gamma=0.9, terminal=False):
    P = rng.dirichlet(np.ones(X), size=(X, A))
    R = rng.uniform(-1, 1, size=(X, A))
    G = rng.uniform(-1, 1, size=X) if terminal else None
    return tabular_env(P, R, horizon=horizon, gamma=gamma, G=G)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

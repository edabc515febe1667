"""Finite state/action graphon game environments.

Kernels and rewards are vectorized over the measure argument: ``m`` may have
shape ``(..., |X|)`` and the outputs gain the same leading axes.  The measure
passed in is the raw neighborhood measure, which is generally not a
probability vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

KernelFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class EnvironmentSpec:
    """A graphon game on finite state and action sets.

    ``kernel(m)`` returns ``P[..., x, a, y]``, ``rewards(m)`` returns
    ``f[..., x, a]`` and ``terminal(m)`` (optional) returns ``g[..., x]``.
    ``horizon`` is the number of steps T for a finite game and ``None`` for the
    discounted infinite-horizon game.  Rewards are maximized.
    """

    name: str
    states: tuple
    actions: tuple
    kernel: KernelFn
    rewards: KernelFn
    reward_bound: float
    initial_law: np.ndarray
    horizon: int | None = None
    gamma: float = 1.0
    terminal: KernelFn | None = None
    terminal_bound: float = 0.0
    state_coords: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        law = np.asarray(self.initial_law, dtype=float)
        if law.shape != (len(self.states),) or abs(law.sum() - 1.0) > 1e-12 or np.any(law < 0):
            raise ValueError(f"initial law must be a probability vector over {len(self.states)} states")
        object.__setattr__(self, "initial_law", law)
        if self.horizon is None:
            if not 0.0 < self.gamma < 1.0:
                raise ValueError(f"infinite-horizon games need gamma in (0, 1), got {self.gamma}")
        elif int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError(f"horizon must be a positive integer, got {self.horizon!r}")
        if self.state_coords is not None:
            coords = np.asarray(self.state_coords, dtype=float)
            object.__setattr__(self, "state_coords", coords)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def finite(self) -> bool:
        return self.horizon is not None

    def transition(self, x: int, m, a: int) -> np.ndarray:
        return self.kernel(np.asarray(m, dtype=float))[x, a]

    def reward(self, x: int, m, a: int) -> float:
        return float(self.rewards(np.asarray(m, dtype=float))[x, a])

    def terminal_reward(self, x: int, m) -> float:
        if self.terminal is None:
            return 0.0
        return float(self.terminal(np.asarray(m, dtype=float))[x])

    def terminal_values(self, m) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        if self.terminal is None:
            return np.zeros(m.shape)
        return self.terminal(m)

    def q_bound(self) -> float:
        """Sup-norm ball that contains every Q-table reachable from zero."""
        if self.finite:
            return self.horizon * self.reward_bound + self.terminal_bound
        return self.reward_bound / (1.0 - self.gamma)

    def with_horizon(self, horizon: int | None, gamma: float | None = None) -> EnvironmentSpec:
        if gamma is None:
            gamma = 1.0 if horizon is not None else 0.95
        return replace(self, horizon=horizon, gamma=gamma)


def sample_transition(env: EnvironmentSpec, rng: np.random.Generator, x: int, m, a: int) -> int:
    """Draw the next state by inverse CDF over the ordered state list."""
    probs = env.transition(x, m, a)
    return inverse_cdf(probs, rng.random())


def inverse_cdf(probs, u):
    """Smallest index whose cumulative probability exceeds ``u``; vectorized over leading axes."""
    cdf = np.cumsum(probs, axis=-1)
    u = np.asarray(u, dtype=float)
    idx = np.sum(cdf <= u[..., None], axis=-1)
    idx = np.minimum(idx, np.shape(probs)[-1] - 1)
    return int(idx) if idx.ndim == 0 else idx


def _finite_mode(horizon, gamma):
    if horizon is None:
        return None, 0.95 if gamma is None else gamma
    return int(horizon), 1.0 if gamma is None else gamma


# --- SIS ------------------------------------------------------------------

def make_sis(horizon: int | None = 50, gamma: float | None = None, initial_law=(0.5, 0.5)) -> EnvironmentSpec:
    """Epidemic game: states (S, I), actions (U = keep interacting, D = quarantine)."""
    horizon, gamma = _finite_mode(horizon, gamma)

    def kernel(m):
        m = np.asarray(m, dtype=float)
        lead = m.shape[:-1]
        # mass above 1.25 would push the rate past 1; graphons bounded by 1 never get there
        p_inf = np.clip(0.8 * m[..., 1], 0.0, 1.0)
        P = np.zeros(lead + (2, 2, 2))
        P[..., 0, 0, 1] = p_inf
        P[..., 0, 0, 0] = 1.0 - p_inf
        P[..., 0, 1, 0] = 1.0
        P[..., 1, :, 0] = 0.5
        P[..., 1, :, 1] = 0.5
        return P

    base = np.array([[0.0, -0.5], [-2.0, -2.5]])

    def rewards(m):
        m = np.asarray(m, dtype=float)
        return np.broadcast_to(base, m.shape[:-1] + (2, 2)).copy()

    return EnvironmentSpec(
        name="sis",
        states=("S", "I"),
        actions=("U", "D"),
        kernel=kernel,
        rewards=rewards,
        reward_bound=2.5,
        initial_law=np.asarray(initial_law, dtype=float),
        horizon=horizon,
        gamma=gamma,
    )


# --- Invest -----------------------------------------------------------------

def make_invest(horizon: int | None = 50, gamma: float | None = None) -> EnvironmentSpec:
    """Product-quality investment game on qualities 0..9; actions (I = invest, O = hold)."""
    horizon, gamma = _finite_mode(horizon, gamma)
    nx = 10
    q = np.arange(nx, dtype=float)
    P_fixed = np.zeros((nx, 2, nx))
    for x in range(nx):
        P_fixed[x, 0, x] = (1 + x) / 10
        if x < nx - 1:
            P_fixed[x, 0, x + 1] = (9 - x) / 10
        P_fixed[x, 1, x] = 1.0

    def kernel(m):
        m = np.asarray(m, dtype=float)
        return np.broadcast_to(P_fixed, m.shape[:-1] + P_fixed.shape).copy()

    def rewards(m):
        m = np.asarray(m, dtype=float)
        mean_quality = m @ q
        profit = 0.3 * q / (1.0 + mean_quality[..., None])  # (..., X)
        return np.stack([profit - 2.0, profit], axis=-1)

    law = np.zeros(nx)
    law[0] = 1.0
    return EnvironmentSpec(
        name="invest",
        states=tuple(range(nx)),
        actions=("I", "O"),
        kernel=kernel,
        rewards=rewards,
        reward_bound=2.7,
        initial_law=law,
        horizon=horizon,
        gamma=gamma,
        state_coords=q,
    )


# --- Flocking ---------------------------------------------------------------

@dataclass(frozen=True)
class FlockingConfig:
    grid_size: int = 21
    action_grid: int = 11
    dt: float = 0.1
    sigma: float = 0.1
    c: float = 1.0
    T_steps: int = 10
    normalize_centroid: bool = True

    def __post_init__(self):
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        if self.action_grid < 1:
            raise ValueError("action_grid must be >= 1")
        if self.T_steps < 1 or self.dt <= 0:
            raise ValueError("T_steps and dt must be positive")
        if abs(self.dt * self.T_steps - 1.0) > 1e-9:
            raise ValueError(f"dt * T_steps must equal 1, got {self.dt * self.T_steps}")
        if self.sigma < 0 or self.c < 0:
            raise ValueError("sigma and c must be nonnegative")


def _normal_cdf(z):
    return 0.5 * (1.0 + np.vectorize(math.erf)(np.asarray(z, dtype=float) / math.sqrt(2.0)))


def _reflected_cell_masses(mean: float, std: float, edges: np.ndarray) -> np.ndarray:
    """Mass of N(mean, std^2) reflected at 0 and 1, per cell of ``edges``."""
    n_cells = len(edges) - 1
    if std == 0.0:
        y = abs(mean) % 2.0
        y = 2.0 - y if y > 1.0 else y
        out = np.zeros(n_cells)
        out[min(int(np.searchsorted(edges, y, side="right")) - 1, n_cells - 1)] = 1.0
        return out
    # reflection on [0,1] folds the line with images 2k + y and 2k - y
    reach = int(math.ceil((abs(mean) + 12.0 * std) / 2.0)) + 1
    out = np.zeros(n_cells)
    lo, hi = edges[:-1], edges[1:]
    for k in range(-reach, reach + 1):
        shift = 2.0 * k
        out += _normal_cdf((shift + hi - mean) / std) - _normal_cdf((shift + lo - mean) / std)
        out += _normal_cdf((shift - lo - mean) / std) - _normal_cdf((shift - hi - mean) / std)
    out = np.clip(out, 0.0, None)
    return out / out.sum()


def make_flocking(cfg: FlockingConfig | None = None) -> EnvironmentSpec:
    """Time/space discretization of the 1-D flocking game on [0,1]."""
    cfg = cfg or FlockingConfig()
    coords = np.linspace(0.0, 1.0, cfg.grid_size)
    velocities = np.linspace(0.0, 1.0, cfg.action_grid) if cfg.action_grid > 1 else np.zeros(1)
    edges = np.concatenate([[0.0], 0.5 * (coords[1:] + coords[:-1]), [1.0]])
    std = cfg.sigma * math.sqrt(cfg.dt)
    P_fixed = np.zeros((cfg.grid_size, len(velocities), cfg.grid_size))
    for i, x in enumerate(coords):
        for j, a in enumerate(velocities):
            P_fixed[i, j] = _reflected_cell_masses(x + a * cfg.dt, std, edges)
    run_cost = -(velocities**2) * cfg.dt

    def kernel(m):
        m = np.asarray(m, dtype=float)
        return np.broadcast_to(P_fixed, m.shape[:-1] + P_fixed.shape).copy()

    def rewards(m):
        m = np.asarray(m, dtype=float)
        return np.broadcast_to(run_cost, m.shape[:-1] + (cfg.grid_size, len(velocities))).copy()

    def terminal(m):
        m = np.asarray(m, dtype=float)
        first = m @ coords
        if cfg.normalize_centroid:
            mass = m.sum(axis=-1)
            safe = np.where(mass > 0, mass, 1.0)
            centroid = np.where(mass > 0, first / safe, 0.5)
        else:
            centroid = first
        return -cfg.c * (coords - centroid[..., None]) ** 2

    max_dev = 1.0 if cfg.normalize_centroid else None
    return EnvironmentSpec(
        name="flocking",
        states=tuple(float(c) for c in coords),
        actions=tuple(float(v) for v in velocities),
        kernel=kernel,
        rewards=rewards,
        reward_bound=float(np.max(np.abs(run_cost))),
        initial_law=np.full(cfg.grid_size, 1.0 / cfg.grid_size),
        horizon=cfg.T_steps,
        gamma=1.0,
        terminal=terminal,
        terminal_bound=cfg.c * max_dev if max_dev is not None else float("inf"),
        state_coords=coords,
        params={"flocking": cfg},
    )


# --- Toy left/right one-shot game -------------------------------------------

def make_toy_leftright() -> EnvironmentSpec:
    """One-shot left/right game: punished by neighborhood mass on the chosen side.

    States are (start, -1, +1); the single action moves start to -1 or +1.
    """
    P_fixed = np.zeros((3, 2, 3))
    P_fixed[0, 0, 1] = 1.0
    P_fixed[0, 1, 2] = 1.0
    P_fixed[1, :, 1] = 1.0
    P_fixed[2, :, 2] = 1.0

    def kernel(m):
        m = np.asarray(m, dtype=float)
        return np.broadcast_to(P_fixed, m.shape[:-1] + P_fixed.shape).copy()

    def rewards(m):
        m = np.asarray(m, dtype=float)
        return np.zeros(m.shape[:-1] + (3, 2))

    def terminal(m):
        return -np.asarray(m, dtype=float)

    return EnvironmentSpec(
        name="toy",
        states=("start", -1, 1),
        actions=("left", "right"),
        kernel=kernel,
        rewards=rewards,
        reward_bound=0.0,
        initial_law=np.array([1.0, 0.0, 0.0]),
        horizon=1,
        gamma=1.0,
        terminal=terminal,
        terminal_bound=1.0,
        state_coords=np.array([0.0, -1.0, 1.0]),
    )


def make_env(cfg: dict) -> EnvironmentSpec:
    """Build an environment from a config block ``{env: ..., horizon?, gamma?, flocking?: {...}}``."""
    name = cfg.get("env", cfg.get("name"))
    horizon_given = "horizon" in cfg
    horizon = cfg.get("horizon")
    gamma = cfg.get("gamma")
    if name == "sis":
        kw = {"initial_law": tuple(cfg["initial_law"])} if "initial_law" in cfg else {}
        return make_sis(horizon if horizon_given else 50, gamma, **kw)
    if name == "invest":
        return make_invest(horizon if horizon_given else 50, gamma)
    if name == "flocking":
        env = make_flocking(FlockingConfig(**cfg.get("flocking", {})))
    elif name == "toy":
        env = make_toy_leftright()
    else:
        raise ValueError(f"unknown environment {name!r}")
    if horizon_given or gamma is not None:
        env = env.with_horizon(horizon if horizon_given else env.horizon, gamma)
    return env


def state_labels(env: EnvironmentSpec) -> list:
    return [s if isinstance(s, (int, float, str)) else str(s) for s in env.states]


def probability_rows_ok(P: np.ndarray, atol: float = 1e-12) -> bool:
    return bool(np.all(P >= -atol) and np.all(np.abs(P.sum(axis=-1) - 1.0) <= atol))


__all__: Sequence[str] = (
    "EnvironmentSpec",
    "FlockingConfig",
    "inverse_cdf",
    "make_env",
    "make_flocking",
    "make_invest",
    "make_sis",
    "make_toy_leftright",
    "sample_transition",
)

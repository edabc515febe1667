"""Distances, policy evaluation and exploitability.

Total variation follows the l1 convention (no 1/2 factor): for a single
measure vector ``tv_distance`` is ``sum |p - q|``; for tables it is averaged
over every leading axis (classes, and time slices for flows), which is the
TV of the label-lifted measures on [0,1] x X.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .env import EnvironmentSpec


@dataclass
class MetricsRow:
    epoch: int
    tv_gap_M: float
    l2_gap_Q: float
    tv_to_benchmark: float | None = None
    tv_policy_to_benchmark: float | None = None
    w1_to_benchmark: float | None = None
    exploitability: float | None = None

    FIELDS = (
        "epoch",
        "tv_gap_M",
        "l2_gap_Q",
        "tv_to_benchmark",
        "tv_policy_to_benchmark",
        "w1_to_benchmark",
        "exploitability",
    )

    def as_dict(self) -> dict:
        return asdict(self)


def _pair(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    return p, q


def tv_distance(p, q) -> float:
    p, q = _pair(p, q)
    rows = np.abs(p - q).sum(axis=-1)
    return float(rows) if rows.ndim == 0 else float(rows.mean())


def w1_distance(p, q, coords) -> float:
    """1-D Wasserstein-1 via CDF differences; tables are averaged row-wise."""
    p, q = _pair(p, q)
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 1 or coords.shape[0] != p.shape[-1]:
        raise ValueError("coords must be a vector matching the state axis")
    gaps = np.diff(coords)
    if np.any(gaps <= 0):
        raise ValueError("coords must be strictly increasing")
    cdf_gap = np.abs(np.cumsum(p - q, axis=-1))[..., :-1]
    rows = cdf_gap @ gaps
    return float(rows) if np.ndim(rows) == 0 else float(np.mean(rows))


def policy_distance(pi_a, pi_b) -> float:
    """Mean over classes, states (and time) of the l1 distance between action rows."""
    pi_a, pi_b = _pair(pi_a, pi_b)
    return float(np.abs(pi_a - pi_b).sum(axis=-1).mean())


def epoch_gaps(prev_M, curr_M, prev_Q, curr_Q) -> tuple[float, float]:
    """(TV gap of populations, Frobenius gap of Q-tables) between two epochs."""
    prev_Q, curr_Q = _pair(prev_Q, curr_Q)
    return tv_distance(prev_M, curr_M), float(np.sqrt(np.sum((prev_Q - curr_Q) ** 2)))


def _sorted_coords(env: EnvironmentSpec):
    if env.state_coords is None:
        return None, None
    order = np.argsort(env.state_coords, kind="stable")
    coords = env.state_coords[order]
    if np.any(np.diff(coords) <= 0):
        return None, None
    return order, coords


def w1_for_env(env: EnvironmentSpec, p, q) -> float | None:
    """W1 between population tables using the environment's state coordinates, if any."""
    order, coords = _sorted_coords(env)
    if order is None:
        return None
    p = np.asarray(p, dtype=float)[..., order]
    q = np.asarray(q, dtype=float)[..., order]
    return w1_distance(p, q, coords)


# --- policy evaluation --------------------------------------------------------

def policy_value(env: EnvironmentSpec, weights, M, pi) -> np.ndarray:
    """State values of policy ``pi`` against the frozen population ``M``.

    Infinite horizon: solves V = f_pi + gamma P_pi V per class, returns (D, X).
    Finite horizon: ``M`` is a (T+1, D, X) flow and ``pi`` a (T, D, X, A) policy;
    returns the (T+1, D, X) value flow.
    """
    weights = np.asarray(weights, dtype=float)
    M = np.asarray(M, dtype=float)
    pi = np.asarray(pi, dtype=float)
    m = weights @ M
    P = env.kernel(m)
    R = env.rewards(m)
    if not env.finite:
        D, X = M.shape
        R_pi = np.einsum("dxa,dxa->dx", pi, R)
        P_pi = np.einsum("dxa,dxay->dxy", pi, P)
        eye = np.eye(X)
        V = np.linalg.solve(eye[None] - env.gamma * P_pi, R_pi[..., None])[..., 0]
        residual = np.abs(V - R_pi - env.gamma * np.einsum("dxy,dy->dx", P_pi, V)).max()
        if not np.isfinite(residual) or residual > 1e-8 * max(1.0, np.abs(V).max()):
            raise ArithmeticError(f"policy evaluation failed to converge (residual {residual:.3e})")
        return V
    T = env.horizon
    V = np.empty(M.shape)
    V[T] = env.terminal_values(m[T])
    for t in range(T - 1, -1, -1):
        cont = np.einsum("dxay,dy->dxa", P[t], V[t + 1])
        V[t] = np.einsum("dxa,dxa->dx", pi[t], R[t] + env.gamma * cont)
    return V


def initial_values(env: EnvironmentSpec, V, M) -> np.ndarray:
    """Scalar value per class.

    Finite horizon averages V at t=0 over the initial law; infinite horizon
    averages over the class population row (the stationary law).
    """
    V = np.asarray(V, dtype=float)
    M = np.asarray(M, dtype=float)
    if env.finite:
        return V[0] @ env.initial_law
    return np.einsum("dx,dx->d", M, V)


def exploitability(env: EnvironmentSpec, weights, M, pi, per_class: bool = False):
    """Mean over classes of (best-response value - value of ``pi``) against frozen ``M``."""
    from .exact import exact_best_response, greedy_values

    Q_star = exact_best_response(env, weights, M)
    V_star = greedy_values(Q_star)
    V_pi = policy_value(env, weights, M, pi)
    gaps = initial_values(env, V_star, M) - initial_values(env, V_pi, M)
    return gaps if per_class else float(gaps.mean())

"""Model-based oracle: Bellman solver, softmax policy operator, induced
population and exact fixed-point iteration.

Table layouts (numpy arrays, never wrapped):

* infinite horizon: ``M`` (D, X), ``Q`` (D, X, A), ``pi`` (D, X, A)
* finite horizon T: ``M`` (T+1, D, X), ``Q`` (T+1, D, X, A) whose last slice
  holds the terminal reward, ``pi`` (T, D, X, A)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .env import EnvironmentSpec

log = logging.getLogger(__name__)

TOL_BELLMAN = 1e-10
TOL_STAT = 1e-12
TOL_FPI = 1e-9


class ConvergenceError(ArithmeticError):
    """An iterative solver ran out of iterations."""


def _neighborhoods(weights, M) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    M = np.asarray(M, dtype=float)
    if M.shape[-2] != weights.shape[1]:
        raise ValueError(f"dimension mismatch: weights {weights.shape} vs population {M.shape}")
    return weights @ M


def _require_infinite(env: EnvironmentSpec, what: str):
    if env.finite:
        raise ValueError(f"{what} needs an infinite-horizon environment; use backward induction for T={env.horizon}")


def bellman_apply(env: EnvironmentSpec, weights, M, Q) -> np.ndarray:
    _require_infinite(env, "bellman_apply")
    m = _neighborhoods(weights, M)
    return _bellman(env.rewards(m), env.kernel(m), env.gamma, np.asarray(Q, dtype=float))


def _bellman(R, P, gamma, Q):
    return R + gamma * np.einsum("dxay,dy->dxa", P, Q.max(axis=-1))


def greedy_values(Q) -> np.ndarray:
    return np.asarray(Q).max(axis=-1)


def greedy_policy(Q) -> np.ndarray:
    """Deterministic policy table; ties go to the lowest action index."""
    Q = np.asarray(Q)
    return np.eye(Q.shape[-1])[Q.argmax(axis=-1)]


def exact_best_response(
    env: EnvironmentSpec,
    weights,
    M,
    tol: float = TOL_BELLMAN,
    max_iters: int | None = None,
) -> np.ndarray:
    """Optimal Q-function against the frozen population ``M``.

    Value iteration from zero (infinite horizon) or backward induction over
    the population flow (finite horizon).
    """
    m = _neighborhoods(weights, M)
    R = env.rewards(m)
    P = env.kernel(m)
    if env.finite:
        T = env.horizon
        Q = np.empty(m.shape + (env.n_actions,))
        Q[T] = env.terminal_values(m[T])[..., None]
        for t in range(T - 1, -1, -1):
            Q[t] = _bellman(R[t], P[t], env.gamma, Q[t + 1])
        return Q

    if max_iters is None:
        max_iters = int(math.ceil(10 * math.log(tol) / math.log(env.gamma)))
    Q = np.zeros(R.shape)
    for _ in range(max_iters):
        Q_next = _bellman(R, P, env.gamma, Q)
        if np.abs(Q_next - Q).max() <= tol:
            return Q_next
        Q = Q_next
    raise ConvergenceError(f"value iteration did not reach tol={tol} in {max_iters} iterations")


def softmax_policy(Q, eta: float) -> np.ndarray:
    """Boltzmann policy over the last axis at temperature ``eta``."""
    if not eta > 0:
        raise ValueError(f"temperature must be positive, got {eta}")
    z = np.asarray(Q, dtype=float) / eta
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def policy_from_q(env: EnvironmentSpec, Q, eta: float) -> np.ndarray:
    Q = np.asarray(Q)
    return softmax_policy(Q[: env.horizon] if env.finite else Q, eta)


def markov_kernels(env: EnvironmentSpec, weights, M_env, pi) -> np.ndarray:
    """State-to-state kernels K[..., d, x, y] under policy ``pi`` and frozen neighborhoods."""
    m = _neighborhoods(weights, M_env)
    P = env.kernel(m)
    if env.finite:
        P = P[: env.horizon]
    return np.einsum("...xa,...xay->...xy", np.asarray(pi, dtype=float), P)


def stationary_distribution(K, tol: float = TOL_STAT, max_doublings: int = 64, start=None) -> np.ndarray:
    """Stationary law of a row-stochastic matrix by power iteration from ``start`` (uniform).

    The iterate is advanced by K, K^2, K^4, ... so that slowly mixing chains
    (near-deterministic softmax policies) converge in logarithmically many
    steps.  Accepts only when both the doubling step and one plain step move
    the vector by at most ``tol`` in l1.
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    v = np.full(n, 1.0 / n) if start is None else np.asarray(start, dtype=float)
    power = K
    for _ in range(max_doublings):
        v_next = v @ power
        v_next /= v_next.sum()
        if np.abs(v_next - v).sum() <= tol and np.abs(v_next @ K - v_next).sum() <= tol:
            return v_next
        v = v_next
        power = power @ power
        power /= power.sum(axis=1, keepdims=True)
    raise ConvergenceError("power iteration did not converge; the chain is not ergodic (periodic or reducible)")


def induced_population(env: EnvironmentSpec, weights, M_env, pi, tol: float = TOL_STAT) -> np.ndarray:
    """Population induced by ``pi`` when neighborhoods are frozen at ``M_env``.

    Infinite horizon: per-class stationary distributions.  Finite horizon: the
    forward flow from the initial law.
    """
    K = markov_kernels(env, weights, M_env, pi)
    if not env.finite:
        return np.stack([stationary_distribution(K[d], tol=tol) for d in range(K.shape[0])])
    T = env.horizon
    D = K.shape[1]
    flow = np.empty((T + 1, D, env.n_states))
    flow[0] = env.initial_law
    for t in range(T):
        flow[t + 1] = np.einsum("dx,dxy->dy", flow[t], K[t])
    return flow


def fpi_operator(env: EnvironmentSpec, weights, M, eta: float, tol_bellman: float = TOL_BELLMAN, tol_stat: float = TOL_STAT):
    """One application of the smoothed FPI map: returns (induced population, Q, policy)."""
    Q = exact_best_response(env, weights, M, tol=tol_bellman)
    pi = policy_from_q(env, Q, eta)
    return induced_population(env, weights, M, pi, tol=tol_stat), Q, pi


def fpi_gap(A, B) -> float:
    """Largest per-class (and per-slice) l1 distance."""
    return float(np.abs(np.asarray(A) - np.asarray(B)).sum(axis=-1).max())


def initial_population(env: EnvironmentSpec, D: int) -> np.ndarray:
    """Uniform rows; for finite horizon, slice 0 holds the initial law."""
    X = env.n_states
    if env.finite:
        M = np.full((env.horizon + 1, D, X), 1.0 / X)
        M[0] = env.initial_law
        return M
    return np.full((D, X), 1.0 / X)


@dataclass
class Equilibrium:
    M: np.ndarray
    Q: np.ndarray
    pi: np.ndarray
    eta: float
    history: list[float] = field(default_factory=list)
    converged: bool = False


def exact_fpi(
    env: EnvironmentSpec,
    weights,
    M0=None,
    K: int = 500,
    damping: float = 1.0,
    eta: float = 0.1,
    tol_fpi: float = TOL_FPI,
    tol_bellman: float = TOL_BELLMAN,
    tol_stat: float = TOL_STAT,
) -> Equilibrium:
    """Damped fixed-point iteration M <- (1-lambda) M + lambda Gamma(M).

    ``history[k]`` is the residual max-class l1 gap between Gamma(M_k) and
    M_k (equal to the step size of an undamped iteration).  Iteration stops
    at the first M_k whose residual is within ``tol_fpi``; that M_k is
    returned together with its best-response Q and softmax policy.
    Non-convergence is reported through ``converged``, not raised.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError(f"damping must be in (0, 1], got {damping}")
    weights = np.asarray(weights, dtype=float)
    D = weights.shape[0]
    M = initial_population(env, D) if M0 is None else np.array(M0, dtype=float)
    history: list[float] = []
    for k in range(K):
        G, Q, pi = fpi_operator(env, weights, M, eta, tol_bellman, tol_stat)
        gap = fpi_gap(G, M)
        history.append(gap)
        if gap <= tol_fpi:
            log.debug("exact FPI converged after %d iterations", k)
            return Equilibrium(M, Q, pi, eta, history, True)
        M = (1.0 - damping) * M + damping * G
    Q = exact_best_response(env, weights, M, tol=tol_bellman)
    pi = policy_from_q(env, Q, eta)
    log.info("exact FPI stopped without convergence, last gap %.3e", history[-1] if history else float("nan"))
    return Equilibrium(M, Q, pi, eta, history, False)


def random_population(env: EnvironmentSpec, D: int, rng: np.random.Generator) -> np.ndarray:
    X = env.n_states
    if env.finite:
        M = rng.dirichlet(np.ones(X), size=(env.horizon + 1, D))
        M[0] = env.initial_law
        return M
    return rng.dirichlet(np.ones(X), size=D)


def estimate_contraction(env: EnvironmentSpec, weights, trials: int, rng: np.random.Generator, eta: float = 0.1) -> float:
    """Largest observed TV ratio |Gamma(M1) - Gamma(M2)| / |M1 - M2| over random pairs."""
    from .metrics import tv_distance

    if trials < 1:
        raise ValueError("trials must be >= 1")
    D = np.asarray(weights).shape[0]
    best = 0.0
    for _ in range(trials):
        M1 = random_population(env, D, rng)
        M2 = random_population(env, D, rng)
        denom = tv_distance(M1, M2)
        if denom == 0.0:
            continue
        G1 = fpi_operator(env, weights, M1, eta)[0]
        G2 = fpi_operator(env, weights, M2, eta)[0]
        best = max(best, tv_distance(G1, G2) / denom)
    return best

"""Oracle-free online learner: concurrent SARSA and Monte-Carlo population updates.

``learn_infinite`` runs the discounted stationary version (H online steps per
class per epoch with 1/(1+tau) step sizes); ``learn_finite`` runs one
trajectory per class per epoch with visit-count step sizes.  Classes within an
epoch only read the population snapshot taken at the start of the epoch and
each draws from its own (seed, epoch, class) stream, so the class loop may run
in any order or on a thread pool with identical results.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, seeding
from .env import EnvironmentSpec
from .exact import Equilibrium, initial_population, policy_from_q
from .metrics import (
    MetricsRow,
    epoch_gaps,
    exploitability,
    policy_distance,
    tv_distance,
    w1_for_env,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepSchedule:
    """alpha_tau = alpha0 / (1 + tau), beta_tau = beta0 / (1 + tau).

    ``global_tau`` keeps counting tau across epochs instead of restarting it.
    Finite-horizon learning ignores this and uses visit counts.
    """

    alpha0: float = 1.0
    beta0: float = 1.0
    global_tau: bool = False

    def __post_init__(self):
        for name in ("alpha0", "beta0"):
            val = getattr(self, name)
            if not 0.0 < val <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {val}")

    def alpha(self, tau: int) -> float:
        return self.alpha0 / (1.0 + tau)

    def beta(self, tau: int) -> float:
        return self.beta0 / (1.0 + tau)


@dataclass(frozen=True)
class LearnConfig:
    K: int = 50
    H: int = 20_000
    D: int | None = None
    eta: float = 0.1
    seed: int = 0
    schedule: StepSchedule = field(default_factory=StepSchedule)
    record_every: int = 1
    workers: int = 1
    snapshot_population: bool = True
    class_order: tuple[int, ...] | None = None
    track_exploitability: bool = True

    def __post_init__(self):
        if self.K < 1 or self.H < 1:
            raise ValueError("K and H must be >= 1")
        if self.D is not None and self.D < 1:
            raise ValueError("D must be >= 1")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.record_every < 1 or self.workers < 1:
            raise ValueError("record_every and workers must be >= 1")


@dataclass
class LearnResult:
    M: np.ndarray
    Q: np.ndarray
    pi: np.ndarray
    history: list[MetricsRow]
    diagnostics: dict


def sarsa_step(Q_slice, x: int, a: int, r: float, x_next: int, a_next: int, alpha: float, gamma: float):
    """One SARSA update on a copy of ``Q_slice`` (X, A); only cell (x, a) changes."""
    Q = np.array(Q_slice, dtype=float)
    Q[x, a] = (1.0 - alpha) * Q[x, a] + alpha * (r + gamma * Q[x_next, a_next])
    return Q


def population_step(M_row, x_next: int, beta: float):
    """Convex combination of ``M_row`` with the Dirac mass at ``x_next``."""
    M = (1.0 - beta) * np.asarray(M_row, dtype=float)
    M[x_next] += beta
    return M


def _new_diag() -> np.ndarray:
    return np.array([0.0, 1.0, 0.0])


def _merge_diag(diags) -> dict:
    arr = np.array(diags)
    return {
        "max_simplex_error": float(arr[:, 0].max()),
        "min_population_mass": float(arr[:, 1].min()),
        "max_abs_q": float(arr[:, 2].max()),
    }


def _class_order(cfg: LearnConfig, D: int) -> list[int]:
    if cfg.class_order is None:
        return list(range(D))
    order = list(cfg.class_order)
    if sorted(order) != list(range(D)):
        raise ValueError("class_order must be a permutation of range(D)")
    return order


def _run_classes(fn, order, workers):
    if workers == 1:
        return [fn(d) for d in order]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, order))


def _record(env, weights, cfg, k, prev, M, Q, benchmark) -> MetricsRow:
    tv_gap, l2_gap = epoch_gaps(prev[0], M, prev[1], Q)
    row = MetricsRow(epoch=k, tv_gap_M=tv_gap, l2_gap_Q=l2_gap)
    pi = policy_from_q(env, Q, cfg.eta)
    if benchmark is not None:
        row.tv_to_benchmark = tv_distance(M, benchmark.M)
        row.tv_policy_to_benchmark = policy_distance(pi, benchmark.pi)
        row.w1_to_benchmark = w1_for_env(env, M, benchmark.M)
    if cfg.track_exploitability:
        row.exploitability = exploitability(env, weights, M, pi)
    return row


def learn_infinite(
    env: EnvironmentSpec,
    weights,
    config: LearnConfig,
    M_init=None,
    Q_init=None,
    benchmark: Equilibrium | None = None,
) -> LearnResult:
    if env.finite:
        raise ValueError("learn_infinite needs an infinite-horizon environment")
    weights = np.asarray(weights, dtype=float)
    D = weights.shape[0]
    if config.D is not None and config.D != D:
        raise ValueError(f"config D={config.D} does not match weights for D={D}")
    X, A = env.n_states, env.n_actions
    M = initial_population(env, D) if M_init is None else np.array(M_init, dtype=float)
    Q = np.zeros((D, X, A)) if Q_init is None else np.array(Q_init, dtype=float)
    sched = config.schedule
    order = _class_order(config, D)
    diags = []
    history: list[MetricsRow] = []

    for k in range(config.K):
        prev = (M.copy(), Q.copy())
        m = weights @ prev[0]  # frozen for the whole epoch
        P = np.ascontiguousarray(env.kernel(m))
        R = np.ascontiguousarray(env.rewards(m))
        tau0 = k * config.H if sched.global_tau else 0

        def one_class(d, k=k, P=P, R=R, tau0=tau0):
            uniforms = seeding.stream(config.seed, seeding.LEARNER, k, d).random((config.H + 1, 2))
            diag = _new_diag()
            _kernels.sarsa_epoch(
                Q[d], M[d], P[d], R[d], env.gamma, config.eta,
                sched.alpha0, sched.beta0, float(tau0), uniforms, diag,
            )
            return diag

        diags.extend(_run_classes(one_class, order, config.workers))
        if (k + 1) % config.record_every == 0 or k == config.K - 1:
            history.append(_record(env, weights, config, k + 1, prev, M, Q, benchmark))

    diagnostics = _merge_diag(diags)
    diagnostics["q_bound"] = env.q_bound()
    return LearnResult(M, Q, policy_from_q(env, Q, config.eta), history, diagnostics)


def learn_finite(
    env: EnvironmentSpec,
    weights,
    config: LearnConfig,
    M_init=None,
    Q_init=None,
    benchmark: Equilibrium | None = None,
) -> LearnResult:
    """Finite-horizon learner on (T+1)-slice flows.

    Slice t+1 of the population is a running average of the time-(t+1)
    states visited across epochs (step 1/(1 + visits)); slice 0 stays at the
    initial law.  The terminal Q slice is the terminal reward against the
    epoch's population snapshot.
    """
    if not env.finite:
        raise ValueError("learn_finite needs a finite-horizon environment")
    weights = np.asarray(weights, dtype=float)
    D = weights.shape[0]
    if config.D is not None and config.D != D:
        raise ValueError(f"config D={config.D} does not match weights for D={D}")
    T, X, A = env.horizon, env.n_states, env.n_actions
    M = initial_population(env, D) if M_init is None else np.array(M_init, dtype=float)
    Q = np.zeros((T + 1, D, X, A)) if Q_init is None else np.array(Q_init, dtype=float)
    # class-major working copies keep each class's slices contiguous
    Mc = np.ascontiguousarray(M.transpose(1, 0, 2))
    Qc = np.ascontiguousarray(Q.transpose(1, 0, 2, 3))
    counts_t = np.zeros((D, T + 1), dtype=np.int64)
    counts_xat = np.zeros((D, T, X, A), dtype=np.int64)
    order = _class_order(config, D)
    diags = []
    history: list[MetricsRow] = []

    def tables(m):
        P = env.kernel(m[:T]).swapaxes(0, 1)  # (D, T, X, A, X)
        R = env.rewards(m[:T]).swapaxes(0, 1)
        G = env.terminal_values(m[T])
        return np.ascontiguousarray(P), np.ascontiguousarray(R), G

    for k in range(config.K):
        prev_M = Mc.transpose(1, 0, 2).copy()
        prev_Q = Qc.transpose(1, 0, 2, 3).copy()
        if config.snapshot_population:
            P, R, G = tables(weights @ prev_M)

        def one_class(d, k=k):
            if config.snapshot_population:
                Pd, Rd, Gd = P[d], R[d], G[d]
            else:
                # live tables: sees updates from classes processed earlier in this epoch
                m_live = np.tensordot(weights[d], Mc, axes=1)  # (T+1, X)
                Pd = np.ascontiguousarray(env.kernel(m_live[:T]))
                Rd = np.ascontiguousarray(env.rewards(m_live[:T]))
                Gd = env.terminal_values(m_live[T])
            Qc[d, T] = Gd[:, None]
            uniforms = seeding.stream(config.seed, seeding.LEARNER, k, d).random((T + 1, 2))
            diag = _new_diag()
            _kernels.sarsa_trajectory(
                Qc[d], Mc[d], Pd, Rd, env.gamma, config.eta,
                counts_t[d], counts_xat[d], uniforms, diag,
            )
            return diag

        workers = config.workers if config.snapshot_population else 1
        diags.extend(_run_classes(one_class, order, workers))
        if (k + 1) % config.record_every == 0 or k == config.K - 1:
            M = Mc.transpose(1, 0, 2)
            Q = Qc.transpose(1, 0, 2, 3)
            history.append(_record(env, weights, config, k + 1, (prev_M, prev_Q), M, Q, benchmark))

    M = np.ascontiguousarray(Mc.transpose(1, 0, 2))
    Q = np.ascontiguousarray(Qc.transpose(1, 0, 2, 3))
    # terminal slice against the final population, as the next epoch would set it
    Q[T] = env.terminal_values(weights @ M[T])[..., None]
    diagnostics = _merge_diag(diags)
    diagnostics["q_bound"] = env.q_bound()
    return LearnResult(M, Q, policy_from_q(env, Q, config.eta), history, diagnostics)

"""Finite n-player network games built from a graphon, and an empirical
approximate-equilibrium check for class policies.

Player i carries label u_i, interacts through ``xi[i, j] = W(u_i, u_j)`` (zero
diagonal) and sees the weighted empirical measure
``M^i_t = (1/n) sum_j xi[i, j] delta_{X^j_t}``.  A D-class policy table is
played by reading class ``disc.index(u_i)``.

Rollouts are vectorized over replications.  All randomness for one batch of
replications is a single uniform array of shape (R, T+1, n, 2): column 0 of
slice t draws the state at t (the initial law at t=0, the transition into t
afterwards), column 1 draws the action at t.  Feeding the same array to a
baseline and a deviation run gives common random numbers.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .env import EnvironmentSpec, inverse_cdf
from .graphon import Graphon, LabelDiscretization, denseness_second_moment

# cap on floats held by one vectorized kernel evaluation
_CHUNK_BUDGET = 4_000_000


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    xi: np.ndarray

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float)
        if xi.ndim != 2 or xi.shape[0] != xi.shape[1]:
            raise ValueError(f"interaction matrix must be square, got shape {xi.shape}")
        if np.any(xi < 0):
            raise ValueError("interaction weights must be nonnegative")
        if np.any(np.diag(xi) != 0):
            raise ValueError("interaction matrix must have a zero diagonal")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)

    @property
    def n(self) -> int:
        return self.xi.shape[0]

    def second_moment(self) -> float:
        return denseness_second_moment(self.xi)


@dataclass
class NPlayerRollout:
    labels: np.ndarray  # (n,)
    trajectories: np.ndarray  # (n, T+1) state indices
    neighborhood_flow: np.ndarray  # (n, T+1, X)
    rewards: np.ndarray  # (n,) realized discounted return incl. terminal reward


def sample_labels(n: int, rng: np.random.Generator) -> np.ndarray:
    """One uniform label per bin [(i-1)/n, i/n)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    u = (np.arange(n) + rng.random(n)) / n
    # guard against rounding onto the right edge of the bin
    return np.minimum(u, np.nextafter((np.arange(n) + 1) / n, 0.0))


def build_interaction(g: Graphon, labels) -> InteractionMatrix:
    labels = np.asarray(labels, dtype=float)
    xi = np.array(g(labels[:, None], labels[None, :]), dtype=float)
    np.fill_diagonal(xi, 0.0)
    return InteractionMatrix(xi)


def _as_xi(xi) -> np.ndarray:
    return xi.xi if isinstance(xi, InteractionMatrix) else InteractionMatrix(xi).xi


def _player_policies(env: EnvironmentSpec, pi, labels, disc: LabelDiscretization) -> np.ndarray:
    """Per-player policy tables (n, T, X, A) read at each player's class."""
    pi = np.asarray(pi, dtype=float)
    T, X, A = env.horizon, env.n_states, env.n_actions
    if pi.shape != (T, disc.D, X, A):
        raise ValueError(f"policy table must have shape {(T, disc.D, X, A)}, got {pi.shape}")
    classes = np.atleast_1d(disc.index(np.asarray(labels, dtype=float)))
    return np.ascontiguousarray(pi[:, classes].transpose(1, 0, 2, 3))


def _require_finite(env: EnvironmentSpec):
    if not env.finite:
        raise ValueError("n-player simulation needs a finite-horizon environment")


def _rollout_batch(env: EnvironmentSpec, xi: np.ndarray, policies: np.ndarray, uniforms: np.ndarray):
    """Joint simulation of all players for a batch of replications.

    Returns (states (R, T+1, n), flows (R, T+1, n, X), returns (R, n)).
    """
    T, X = env.horizon, env.n_states
    R, _, n, _ = uniforms.shape
    states = np.empty((R, T + 1, n), dtype=np.int64)
    flows = np.empty((R, T + 1, n, X))
    returns = np.zeros((R, n))
    rr = np.arange(R)[:, None]
    ii = np.arange(n)[None, :]
    eye = np.eye(X)
    states[:, 0] = inverse_cdf(env.initial_law, uniforms[:, 0, :, 0])
    discount = 1.0
    for t in range(T + 1):
        x = states[:, t]
        flows[:, t] = np.matmul(xi, eye[x]) / n
        if t == T:
            returns += discount * env.terminal_values(flows[:, t])[rr, ii, x]
            break
        probs = policies[ii, t, x]  # (R, n, A)
        a = inverse_cdf(probs, uniforms[:, t, :, 1])
        m = flows[:, t]
        returns += discount * env.rewards(m)[rr, ii, x, a]
        states[:, t + 1] = inverse_cdf(env.kernel(m)[rr, ii, x, a], uniforms[:, t + 1, :, 0])
        discount *= env.gamma
    return states, flows, returns


def _rollouts(env, xi, policies, uniforms):
    """``_rollout_batch`` in replication chunks that bound kernel memory."""
    R, _, n, _ = uniforms.shape
    per_rep = n * env.n_states * env.n_actions * env.n_states
    step = max(1, _CHUNK_BUDGET // max(per_rep, 1))
    parts = [_rollout_batch(env, xi, policies, uniforms[s : s + step]) for s in range(0, R, step)]
    return tuple(np.concatenate(p, axis=0) for p in zip(*parts))


def _draw_uniforms(env: EnvironmentSpec, n: int, rng: np.random.Generator, replications: int) -> np.ndarray:
    return rng.random((replications, env.horizon + 1, n, 2))


def simulate_nplayer(
    env: EnvironmentSpec,
    xi,
    labels,
    pi,
    disc: LabelDiscretization,
    rng: np.random.Generator,
    replications: int = 1,
) -> list[NPlayerRollout]:
    """Simulate all n players jointly, each playing ``pi`` at its own class."""
    _require_finite(env)
    if replications < 1:
        raise ValueError("replications must be >= 1")
    xi = _as_xi(xi)
    labels = np.asarray(labels, dtype=float)
    if labels.shape != (xi.shape[0],):
        raise ValueError("labels must have one entry per player")
    policies = _player_policies(env, pi, labels, disc)
    uniforms = _draw_uniforms(env, xi.shape[0], rng, replications)
    states, flows, returns = _rollouts(env, xi, policies, uniforms)
    return [
        NPlayerRollout(labels.copy(), states[r].T.copy(), flows[r].transpose(1, 0, 2).copy(), returns[r])
        for r in range(replications)
    ]


def best_response_to_flow(env: EnvironmentSpec, m_flow) -> np.ndarray:
    """Greedy deterministic policy (T, X, A) by backward induction against a fixed flow (T+1, X)."""
    m_flow = np.asarray(m_flow, dtype=float)
    T = env.horizon
    V = env.terminal_values(m_flow[T])
    R = env.rewards(m_flow[:T])
    P = env.kernel(m_flow[:T])
    beta = np.zeros((T, env.n_states, env.n_actions))
    for t in range(T - 1, -1, -1):
        Q = R[t] + env.gamma * P[t] @ V
        best = Q.argmax(axis=-1)
        beta[t, np.arange(env.n_states), best] = 1.0
        V = Q.max(axis=-1)
    return beta


@dataclass
class DeviationEstimate:
    player: int
    eps: float  # clipped at 0
    raw_gain: float
    stderr: float
    baseline_value: float
    deviation_value: float


def _deviation(env, xi, policies, player, mean_flow, rng, replications) -> DeviationEstimate:
    beta = best_response_to_flow(env, mean_flow)
    deviated = policies.copy()
    deviated[player] = beta
    uniforms = _draw_uniforms(env, xi.shape[0], rng, replications)
    base = _rollouts(env, xi, policies, uniforms)[2][:, player]
    dev = _rollouts(env, xi, deviated, uniforms)[2][:, player]
    diff = dev - base
    gain = float(diff.mean())
    return DeviationEstimate(
        player=player,
        eps=max(gain, 0.0),
        raw_gain=gain,
        stderr=float(diff.std(ddof=1) / math.sqrt(replications)),
        baseline_value=float(base.mean()),
        deviation_value=float(dev.mean()),
    )


def _mean_flows(env, xi, policies, rng, replications) -> np.ndarray:
    uniforms = _draw_uniforms(env, xi.shape[0], rng, replications)
    flows = _rollouts(env, xi, policies, uniforms)[1]
    return flows.mean(axis=0).transpose(1, 0, 2)  # (n, T+1, X)


def estimate_player_exploitability(
    env: EnvironmentSpec,
    xi,
    labels,
    pi,
    disc: LabelDiscretization,
    rng: np.random.Generator,
    replications: int,
    player: int,
    detail: bool = False,
):
    """Surrogate deviation gain of one player.

    The mean neighborhood flow of ``player`` is estimated with everyone on
    ``pi``; the player's best response to that frozen flow is then scored
    against the baseline on fresh, shared random numbers.  The gain is a
    Markovian lower surrogate of the full-information deviation gain.
    """
    _require_finite(env)
    if replications < 2:
        raise ValueError("need at least 2 replications for a variance estimate")
    xi = _as_xi(xi)
    n = xi.shape[0]
    if not 0 <= player < n:
        raise IndexError(f"player {player} out of range for n={n}")
    policies = _player_policies(env, pi, labels, disc)
    mean_flow = _mean_flows(env, xi, policies, rng, replications)[player]
    est = _deviation(env, xi, policies, player, mean_flow, rng, replications)
    return est if detail else est.eps


@dataclass
class SweepRow:
    n: int
    mean_eps: float
    stderr_eps: float
    second_moment_diag: float

    FIELDS = ("n", "mean_eps", "stderr_eps", "second_moment_diag")


def approx_equilibrium_sweep(
    env: EnvironmentSpec,
    g: Graphon,
    pi_hat,
    disc: LabelDiscretization,
    n_list,
    replications: int,
    rng: np.random.Generator,
    players: int = 10,
) -> list[SweepRow]:
    """Mean surrogate exploitability over a random subset of players, per n.

    ``stderr_eps`` combines the per-player Monte-Carlo errors (players use
    independent random numbers).
    """
    _require_finite(env)
    if replications < 2:
        raise ValueError("need at least 2 replications for a variance estimate")
    rows = []
    for n in n_list:
        labels = sample_labels(int(n), rng)
        inter = build_interaction(g, labels)
        policies = _player_policies(env, pi_hat, labels, disc)
        chosen = np.sort(rng.choice(int(n), size=min(int(n), players), replace=False))
        flows = _mean_flows(env, inter.xi, policies, rng, replications)
        ests = [_deviation(env, inter.xi, policies, int(i), flows[i], rng, replications) for i in chosen]
        k = len(ests)
        rows.append(SweepRow(
            n=int(n),
            mean_eps=float(np.mean([e.eps for e in ests])),
            stderr_eps=float(math.sqrt(sum(e.stderr**2 for e in ests)) / k),
            second_moment_diag=inter.second_moment(),
        ))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SweepRow.FIELDS)
    for r in rows:
        writer.writerow([r.n, repr(r.mean_eps), repr(r.stderr_eps), repr(r.second_moment_diag)])
    return buf.getvalue()

"""Compiled inner loops of the online learner.

All randomness arrives as pre-drawn uniforms so the loops are pure functions
of their inputs.  Each loop also tracks the invariants the caller asserts:
largest |row sum - 1| and smallest entry of the population rows, and largest
|Q| written.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _pick(probs, u):
    acc = 0.0
    n = probs.shape[0]
    for i in range(n - 1):
        acc += probs[i]
        if u < acc:
            return i
    return n - 1


@njit(cache=True, nogil=True)
def _softmax_pick(q_row, eta, u):
    n = q_row.shape[0]
    top = q_row[0]
    for i in range(1, n):
        if q_row[i] > top:
            top = q_row[i]
    total = 0.0
    w = np.empty(n)
    for i in range(n):
        w[i] = np.exp((q_row[i] - top) / eta)
        total += w[i]
    acc = 0.0
    for i in range(n - 1):
        acc += w[i] / total
        if u < acc:
            return i
    return n - 1


@njit(cache=True, nogil=True)
def _mix_dirac(row, x, beta, diag):
    s = 0.0
    lo = 1.0
    for i in range(row.shape[0]):
        row[i] = (1.0 - beta) * row[i]
        if i == x:
            row[i] += beta
        s += row[i]
        if row[i] < lo:
            lo = row[i]
    err = abs(s - 1.0)
    if err > diag[0]:
        diag[0] = err
    if lo < diag[1]:
        diag[1] = lo


@njit(cache=True, nogil=True)
def sarsa_epoch(Q, M, P, R, gamma, eta, alpha0, beta0, tau0, uniforms, diag):
    """H online steps for one class; ``Q`` (X, A) and ``M`` (X,) are updated in place.

    ``uniforms`` has shape (H + 1, 2): row 0 draws (x0, a0), row tau + 1 draws
    (x_{tau+1}, a_{tau+1}).
    """
    H = uniforms.shape[0] - 1
    x = _pick(M, uniforms[0, 0])
    a = _softmax_pick(Q[x], eta, uniforms[0, 1])
    for tau in range(H):
        r = R[x, a]
        x_next = _pick(P[x, a], uniforms[tau + 1, 0])
        a_next = _softmax_pick(Q[x_next], eta, uniforms[tau + 1, 1])
        alpha = alpha0 / (1.0 + tau0 + tau)
        beta = beta0 / (1.0 + tau0 + tau)
        target = r + gamma * Q[x_next, a_next]
        Q[x, a] = (1.0 - alpha) * Q[x, a] + alpha * target
        if abs(Q[x, a]) > diag[2]:
            diag[2] = abs(Q[x, a])
        _mix_dirac(M, x_next, beta, diag)
        x = x_next
        a = a_next


@njit(cache=True, nogil=True)
def sarsa_trajectory(Q, M, P, R, gamma, eta, counts_t, counts_xat, uniforms, diag):
    """One finite-horizon trajectory for one class with visit-count step sizes.

    ``Q`` (T+1, X, A) and ``M`` (T+1, X) are updated in place; the terminal
    slice ``Q[T]`` must already hold the terminal reward.  ``uniforms`` has
    shape (T + 1, 2).
    """
    T = P.shape[0]
    x = _pick(M[0], uniforms[0, 0])
    a = _softmax_pick(Q[0, x], eta, uniforms[0, 1])
    for t in range(T):
        r = R[t, x, a]
        x_next = _pick(P[t, x, a], uniforms[t + 1, 0])
        a_next = _softmax_pick(Q[t + 1, x_next], eta, uniforms[t + 1, 1])
        beta = 1.0 / (1.0 + counts_t[t + 1])
        counts_t[t + 1] += 1
        _mix_dirac(M[t + 1], x_next, beta, diag)
        alpha = 1.0 / (1.0 + counts_xat[t, x, a])
        counts_xat[t, x, a] += 1
        target = r + gamma * Q[t + 1, x_next, a_next]
        Q[t, x, a] = (1.0 - alpha) * Q[t, x, a] + alpha * target
        if abs(Q[t, x, a]) > diag[2]:
            diag[2] = abs(Q[t, x, a])
        x = x_next
        a = a_next

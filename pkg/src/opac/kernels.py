"""Hot loops: explicit-loop kernels compiled with numba, plus numpy twins.

The compiled path is used by default.  Set ``OPAC_NUMBA=0`` in the
environment (before importing ``opac``) to disable compilation: the loop
kernels then run as plain Python and the dispatch names below point at the
vectorized numpy implementations where one exists.  ``*_loop`` and ``*_vec``
variants stay importable under their explicit names so they can be compared
side by side (see ``benchmarks/bench_kernels.py``).

Strategy codes shared by the aggregation kernels::

    0  mean of the two smallest of three
    1  median of three
    2  minimum of the first two (third column ignored)
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

MEAN_SMALLER_TWO, MEDIAN_THREE, MIN_PAIR = 0, 1, 2


def _flag_enabled(value: str | None) -> bool:
    if value is None:
        return True
    return value.strip().lower() not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and _flag_enabled(os.environ.get("OPAC_NUMBA"))


def njit(fn):
    """Compile ``fn`` when the accelerated path is enabled, else return it as is."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# three-way aggregation


@njit
def _agg3(x, y, z, code):
    if code == 2:
        return x if x < y else y
    # sort three values
    if x > y:
        x, y = y, x
    if y > z:
        y, z = z, y
    if x > y:
        x, y = y, x
    if code == 0:
        return 0.5 * (x + y)
    return y


@njit
def aggregate_rows_loop(q, code):
    n = q.shape[0]
    out = np.empty(n)
    for i in range(n):
        if code == 2:
            out[i] = _agg3(q[i, 0], q[i, 1], 0.0, 2)
        else:
            out[i] = _agg3(q[i, 0], q[i, 1], q[i, 2], code)
    return out


def aggregate_rows_vec(q, code):
    q = np.asarray(q, dtype=np.float64)
    if code == MIN_PAIR:
        return np.minimum(q[:, 0], q[:, 1])
    s = np.sort(q[:, :3], axis=1)
    if code == MEAN_SMALLER_TWO:
        return 0.5 * (s[:, 0] + s[:, 1])
    return s[:, 1].copy()


# ---------------------------------------------------------------------------
# trailing moving average with partial windows at the left edge


@njit
def moving_average_loop(x, window):
    # direct window sums (newest first) so no rounding drift accumulates
    n = x.shape[0]
    out = np.empty(n)
    for i in range(n):
        lo = max(i - window + 1, 0)
        acc = 0.0
        for j in range(i, lo - 1, -1):
            acc += x[j]
        out[i] = acc / (i - lo + 1)
    return out


def moving_average_vec(x, window):
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    acc = np.zeros(n)
    for k in range(min(window, n)):
        acc[k:] += x[: n - k]
    counts = np.minimum(np.arange(1, n + 1), window)
    return acc / counts


# ---------------------------------------------------------------------------
# Bellman optimality backup for a finite MDP


@njit
def bellman_backup_loop(P, R, terminal, gamma, Q):
    n_s, n_a = R.shape
    v = np.empty(n_s)
    for s in range(n_s):
        if terminal[s]:
            v[s] = 0.0
        else:
            best = Q[s, 0]
            for a in range(1, n_a):
                if Q[s, a] > best:
                    best = Q[s, a]
            v[s] = best
    out = np.empty((n_s, n_a))
    for s in range(n_s):
        for a in range(n_a):
            acc = 0.0
            for s2 in range(n_s):
                acc += P[s, a, s2] * v[s2]
            out[s, a] = R[s, a] + gamma * acc
    return out


def bellman_backup_vec(P, R, terminal, gamma, Q):
    v = np.where(terminal, 0.0, Q.max(axis=1))
    return R + gamma * (P @ v)


# ---------------------------------------------------------------------------
# clipped triple Q-learning on a finite MDP
#
# All randomness is drawn up front by the caller so the compiled and the
# interpreted loops consume identical streams.


@njit
def _argmax_row(q, s):
    best = 0
    for a in range(1, q.shape[1]):
        if q[s, a] > q[s, best]:
            best = a
    return best


@njit
def triple_q_loop(
    P_cum, R, terminal, gamma, code, qa, qb, qc, q_star,
    epsilon, decay, s0, u_explore, a_random, u_next, reward_noise, u_reset,
    record_every, errors, y_agg, y_max, visits,
):
    """Run the tabular loop in place; returns the final state index."""
    n_s, n_a = R.shape
    steps = u_explore.shape[0]
    s = s0
    k = 0
    for t in range(steps):
        if u_explore[t] < epsilon:
            a = a_random[t]
        else:
            a = _argmax_row(qa, s)
        # inverse-CDF draw of the successor
        s2 = n_s - 1
        for j in range(n_s):
            if u_next[t] < P_cum[s, a, j]:
                s2 = j
                break
        r = R[s, a] + reward_noise[t]
        if terminal[s2]:
            y = r
            ym = r
        else:
            b = _argmax_row(qa, s2)
            g = _agg3(qa[s2, b], qb[s2, b], qc[s2, b], code)
            y = r + gamma * g
            ym = r + gamma * qa[s2, b]
        y_agg[t] = y
        y_max[t] = ym
        visits[s, a] += 1
        lr = 1.0 / (1.0 + decay * visits[s, a])
        qa[s, a] = (1.0 - lr) * qa[s, a] + lr * y
        qb[s, a] = (1.0 - lr) * qb[s, a] + lr * y
        qc[s, a] = (1.0 - lr) * qc[s, a] + lr * y
        if terminal[s2]:
            s = min(int(u_reset[t] * n_s), n_s - 1)
        else:
            s = s2
        if record_every > 0 and (t + 1) % record_every == 0:
            ea = 0.0
            eb = 0.0
            ec = 0.0
            for i in range(n_s):
                for j in range(n_a):
                    ea = max(ea, abs(qa[i, j] - q_star[i, j]))
                    eb = max(eb, abs(qb[i, j] - q_star[i, j]))
                    ec = max(ec, abs(qc[i, j] - q_star[i, j]))
            errors[k, 0] = ea
            errors[k, 1] = eb
            errors[k, 2] = ec
            k += 1
    return s


# ---------------------------------------------------------------------------
# default dispatch

if USE_NUMBA:
    aggregate_rows = aggregate_rows_loop
    moving_average_kernel = moving_average_loop
    bellman_backup = bellman_backup_loop
else:
    aggregate_rows = aggregate_rows_vec
    moving_average_kernel = moving_average_vec
    bellman_backup = bellman_backup_vec

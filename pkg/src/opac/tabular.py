"""Clipped triple Q-learning on finite MDPs, with value iteration as the oracle.

Three tables are kept and all of them are moved toward one shared target

    y = r + gamma * g(QA(s', a*), QB(s', a*), QC(s', a*)),  a* = argmax_a QA(s', a)

where ``g`` is one of the ensemble aggregation strategies.  Greedy ties go to
the lowest action index.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .ensemble import TargetStrategy, aggregate


@dataclass
class FiniteMDP:
    P: np.ndarray
    R: np.ndarray
    gamma: float = 0.9
    terminal: np.ndarray | None = None
    # standard deviation of Gaussian noise added to sampled rewards
    reward_noise: float = 0.0

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        n_s, n_a = self.R.shape
        if self.P.shape != (n_s, n_a, n_s):
            raise ValueError(f"P has shape {self.P.shape}, expected {(n_s, n_a, n_s)}")
        if np.any(self.P < 0) or np.max(np.abs(self.P.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("each P[s, a] must be a probability vector")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.terminal is None:
            self.terminal = np.zeros(n_s, dtype=bool)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        self._rng = np.random.default_rng()
        self.state = 0

    @property
    def n_states(self) -> int:
        return self.R.shape[0]

    @property
    def n_actions(self) -> int:
        return self.R.shape[1]

    # minimal episodic interface

    def reset(self, seed: int | None = None) -> int:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.state = int(self._rng.integers(self.n_states))
        return self.state

    def step(self, action: int) -> tuple[int, float, bool]:
        s, a = self.state, int(action)
        s2 = int(self._rng.choice(self.n_states, p=self.P[s, a]))
        r = float(self.R[s, a] + self.reward_noise * self._rng.standard_normal())
        self.state = s2
        return s2, r, bool(self.terminal[s2])


@dataclass
class QTables:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, n_states: int, n_actions: int) -> "QTables":
        return cls(*(np.zeros((n_states, n_actions)) for _ in range(3)))

    @classmethod
    def uniform(cls, n_states, n_actions, rng: np.random.Generator, scale: float = 1.0):
        """Independent U(-scale, scale) initializations for the three tables."""
        return cls(*(rng.uniform(-scale, scale, (n_states, n_actions)) for _ in range(3)))

    def copy(self) -> "QTables":
        return QTables(self.a.copy(), self.b.copy(), self.c.copy())

    def all(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.a, self.b, self.c


def greedy(q: np.ndarray, s: int) -> int:
    """argmax over actions; np.argmax already returns the lowest index on ties."""
    return int(np.argmax(q[s]))


def triple_q_step(
    tables: QTables, s: int, a: int, r: float, s_next: int, lr: float,
    g: TargetStrategy, gamma: float, terminal: bool = False,
) -> QTables:
    """One clipped triple Q-learning update, applied in place; returns ``tables``."""
    if not 0.0 <= lr <= 1.0:
        raise ValueError(f"learning rate must lie in [0, 1], got {lr}")
    n_s, n_a = tables.a.shape
    if not (0 <= s < n_s and 0 <= s_next < n_s and 0 <= a < n_a):
        raise IndexError(f"(s={s}, a={a}, s'={s_next}) outside {n_s}x{n_a} tables")
    if terminal:
        y = r
    else:
        best = greedy(tables.a, s_next)
        y = r + gamma * aggregate(
            tables.a[s_next, best], tables.b[s_next, best], tables.c[s_next, best], g
        )
    for q in tables.all():
        q[s, a] = (1.0 - lr) * q[s, a] + lr * y
    return tables


def bellman_optimality(mdp: FiniteMDP, q: np.ndarray) -> np.ndarray:
    return kernels.bellman_backup(mdp.P, mdp.R, mdp.terminal, mdp.gamma, np.asarray(q, dtype=np.float64))


def value_iteration(mdp: FiniteMDP, tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """Optimal action values; the returned table has sup-norm Bellman residual < tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.zeros_like(mdp.R)
    for _ in range(max_iter):
        q_new = bellman_optimality(mdp, q)
        # residual(q_new) <= gamma * |q_new - q|
        if np.max(np.abs(q_new - q)) * max(mdp.gamma, 1e-300) < tol:
            return q_new
        q = q_new
    raise RuntimeError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")


@dataclass(frozen=True)
class Schedule:
    """epsilon-greedy behavior over QA and lr = 1 / (1 + decay * visits(s, a)).

    ``visits`` includes the current visit, so every step size is in (0, 1).
    """

    epsilon: float = 0.3
    decay: float = 0.01

    def lr(self, visits):
        return 1.0 / (1.0 + self.decay * np.asarray(visits, dtype=np.float64))


@dataclass
class ConvergenceResult:
    strategy: TargetStrategy
    seed: int
    steps: np.ndarray
    errors: np.ndarray  # (n_records, 3): sup-norm error of QA, QB, QC vs Q*
    tables: QTables
    q_star: np.ndarray
    visits: np.ndarray
    y_agg: np.ndarray = field(repr=False)
    y_max: np.ndarray = field(repr=False)

    @property
    def final_error(self) -> float:
        return float(np.max(np.abs(self.tables.a - self.q_star)))


def run_convergence_experiment(
    mdp: FiniteMDP,
    g: TargetStrategy,
    schedule: Schedule = Schedule(),
    steps: int = 200_000,
    seed: int = 0,
    record_every: int = 1000,
    init_scale: float = 1.0,
    q_star: np.ndarray | None = None,
) -> ConvergenceResult:
    """Clipped triple Q-learning driven by an epsilon-greedy walk over the MDP.

    Every ``record_every`` steps the sup-norm error of each table against the
    value-iteration solution is logged.  Also logs, per step, the aggregated
    target and the single-estimator target r + gamma * QA(s', a*).
    """
    if q_star is None:
        q_star = value_iteration(mdp)
    g = TargetStrategy.parse(g)
    rng = np.random.default_rng(seed)
    n_s, n_a = mdp.n_states, mdp.n_actions
    tables = QTables.uniform(n_s, n_a, rng, init_scale)
    s0 = int(rng.integers(n_s))
    u_explore = rng.random(steps)
    a_random = rng.integers(0, n_a, size=steps)
    u_next = rng.random(steps)
    noise = rng.normal(0.0, mdp.reward_noise, size=steps) if mdp.reward_noise > 0 else np.zeros(steps)
    u_reset = rng.random(steps)

    n_rec = steps // record_every if record_every > 0 else 0
    errors = np.zeros((n_rec, 3))
    y_agg = np.empty(steps)
    y_max = np.empty(steps)
    visits = np.zeros((n_s, n_a), dtype=np.int64)
    kernels.triple_q_loop(
        np.cumsum(mdp.P, axis=2), mdp.R, mdp.terminal.astype(np.uint8), float(mdp.gamma), g.code,
        tables.a, tables.b, tables.c, np.asarray(q_star, dtype=np.float64),
        float(schedule.epsilon), float(schedule.decay), s0,
        u_explore, a_random, u_next, noise, u_reset,
        int(record_every), errors, y_agg, y_max, visits,
    )
    rec_steps = np.arange(1, n_rec + 1) * record_every
    return ConvergenceResult(g, seed, rec_steps, errors, tables, np.asarray(q_star), visits, y_agg, y_max)


CSV_HEADER = ("step", "sup_error_A", "sup_error_B", "sup_error_C", "strategy", "seed")


def write_convergence_csv(path, results) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for res in results:
            for step, (ea, eb, ec) in zip(res.steps, res.errors):
                w.writerow([int(step), repr(float(ea)), repr(float(eb)), repr(float(ec)),
                            res.strategy.value, res.seed])

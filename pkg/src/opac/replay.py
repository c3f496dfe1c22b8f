"""Fixed-capacity FIFO transition store with uniform sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    d: float
    truncated: bool = False


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    d: np.ndarray
    truncated: np.ndarray

    def __len__(self) -> int:
        return self.r.shape[0]

    def transitions(self) -> list[Transition]:
        return [
            Transition(self.s[i], self.a[i], float(self.r[i]), self.s_next[i],
                       float(self.d[i]), bool(self.truncated[i]))
            for i in range(len(self))
        ]


class ReplayBuffer:
    """Ring buffer; once full, the oldest transitions are overwritten first."""

    def __init__(self, obs_dim: int, act_dim: int, capacity: int = 1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self._s = np.zeros((capacity, obs_dim))
        self._a = np.zeros((capacity, act_dim))
        self._r = np.zeros(capacity)
        self._s2 = np.zeros((capacity, obs_dim))
        self._d = np.zeros(capacity)
        self._trunc = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0
        self.pushes = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        s, a, s2 = np.asarray(t.s), np.asarray(t.a), np.asarray(t.s_next)
        if s.shape != (self.obs_dim,) or s2.shape != (self.obs_dim,) or a.shape != (self.act_dim,):
            raise ValueError(
                f"transition dims {s.shape}/{a.shape}/{s2.shape} do not match "
                f"buffer ({self.obs_dim}, {self.act_dim})"
            )
        i = self.cursor
        self._s[i], self._a[i], self._r[i] = s, a, t.r
        self._s2[i], self._d[i], self._trunc[i] = s2, t.d, t.truncated
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.pushes += 1

    def _gather(self, idx: np.ndarray) -> Batch:
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s2[idx],
                     self._d[idx], self._trunc[idx])

    def contents(self) -> Batch:
        """Stored transitions, oldest first."""
        if self.size < self.capacity:
            idx = np.arange(self.size)
        else:
            idx = (np.arange(self.capacity) + self.cursor) % self.capacity
        return self._gather(idx)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        return rng.integers(0, self.size, size=n)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """``n`` transitions drawn uniformly with replacement."""
        return self._gather(self.sample_indices(n, rng))

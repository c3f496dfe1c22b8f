"""Critic ensemble: target aggregation, the shared Q-target and critic losses."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .diffcore import Tape
from .nets import CriticNet, bind, critic_graph, forward_critic


class TargetStrategy(enum.Enum):
    MEAN_SMALLER_TWO = "mean2"
    MEDIAN_THREE = "median3"
    MIN_PAIR = "min2"

    @property
    def code(self) -> int:
        return _CODES[self]

    @property
    def n_critics(self) -> int:
        return 2 if self is TargetStrategy.MIN_PAIR else 3

    @classmethod
    def parse(cls, value) -> "TargetStrategy":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for s in cls:
            if key in (s.value, s.name.lower()):
                return s
        raise ValueError(f"unknown target strategy {value!r}")


_CODES = {
    TargetStrategy.MEAN_SMALLER_TWO: kernels.MEAN_SMALLER_TWO,
    TargetStrategy.MEDIAN_THREE: kernels.MEDIAN_THREE,
    TargetStrategy.MIN_PAIR: kernels.MIN_PAIR,
}


def aggregate(q1: float, q2: float, q3: float, strategy: TargetStrategy) -> float:
    """Combine three critic estimates into one target value.

    >>> aggregate(1.0, 2.0, 3.0, TargetStrategy.MEAN_SMALLER_TWO)
    1.5
    >>> aggregate(3.0, 1.0, 2.0, TargetStrategy.MEDIAN_THREE)
    2.0
    """
    if strategy is TargetStrategy.MIN_PAIR:
        return float(min(q1, q2))
    a, b, c = sorted((float(q1), float(q2), float(q3)))
    if strategy is TargetStrategy.MEAN_SMALLER_TWO:
        return 0.5 * (a + b)
    return b


def aggregate_batch(q: np.ndarray, strategy: TargetStrategy) -> np.ndarray:
    """Row-wise :func:`aggregate` over an ``(n, k)`` array of critic outputs."""
    q = np.ascontiguousarray(q, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] < strategy.n_critics:
        raise ValueError(f"need {strategy.n_critics} critic columns, got shape {q.shape}")
    return kernels.aggregate_rows(q, strategy.code)


def shared_q_target(r, d, gamma, agg, alpha, logp_next):
    """y = r + gamma * (1 - d) * (agg - alpha * logp_next); vectorizes over arrays."""
    return r + gamma * (1.0 - d) * (agg - alpha * logp_next)


@dataclass
class CriticTriple:
    """Model and target critics.  Baseline variants hold only two of each."""

    models: list[CriticNet]
    targets: list[CriticNet]

    @classmethod
    def create(cls, obs_dim, act_dim, hidden, seeds, n_critics: int = 3) -> "CriticTriple":
        models = [CriticNet.create(obs_dim, act_dim, hidden, seed=s) for s in seeds[:n_critics]]
        return cls(models, [m.copy() for m in models])

    def __len__(self) -> int:
        return len(self.models)

    def target_values(self, s_next, a_next) -> np.ndarray:
        """(n, k) matrix of target-critic outputs."""
        return np.stack([forward_critic(t, s_next, a_next) for t in self.targets], axis=1)


def critic_loss_and_grads(
    critics: list[CriticNet], states, actions, y
) -> tuple[list[float], list[list[np.ndarray]]]:
    """Mean squared errors against the shared target and their parameter gradients.

    All critics share one tape; their parameter sets are disjoint, so one
    backward pass over the summed loss yields each critic's own gradient.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != np.shape(states)[0]:
        raise ValueError(f"target length {y.shape} does not match batch {np.shape(states)}")
    tape = Tape()
    s = tape.constant(states)
    a = tape.constant(actions)
    yc = tape.constant(y)
    losses, bound_all = [], []
    for net in critics:
        bound = bind(net.params, tape)
        losses.append((critic_graph(net, bound, s, a) - yc).square().mean())
        bound_all.append(bound)
    total = losses[0]
    for extra in losses[1:]:
        total = total + extra
    table = tape.backward(total)
    grads = []
    for bound in bound_all:
        grads.append([table.get(n.id, np.zeros(n.shape)) for pair in bound for n in pair])
    return [float(l.value) for l in losses], grads


def critic_loss(triple: CriticTriple, batch, y) -> list[float]:
    """One MSE loss per model critic against the shared targets ``y``."""
    losses, _ = critic_loss_and_grads(triple.models, batch.s, batch.a, y)
    return losses

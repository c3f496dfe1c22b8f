"""Squashed-Gaussian policy: reparameterized sampling and exact log-densities.

An action is produced as ``a = center + scale * tanh(u)`` with
``u = mu + exp(log_std) * eps``.  Its log-density carries the
change-of-variables correction for both the tanh and the affine map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diffcore import Node
from .nets import ActorNet, forward_actor

LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)
# inverse squash is evaluated on (-1 + OPEN_EPS, 1 - OPEN_EPS)
OPEN_EPS = 1e-6


@dataclass(frozen=True)
class ActionBounds:
    low: np.ndarray
    high: np.ndarray

    def __init__(self, low, high):
        low = np.atleast_1d(np.asarray(low, dtype=np.float64))
        high = np.atleast_1d(np.asarray(high, dtype=np.float64))
        if low.shape != high.shape or not np.all(low < high):
            raise ValueError(f"invalid action bounds {low} / {high}")
        if not (np.all(np.isfinite(low)) and np.all(np.isfinite(high))):
            raise ValueError("action bounds must be finite")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def dim(self) -> int:
        return self.low.size

    @property
    def scale(self) -> np.ndarray:
        return 0.5 * (self.high - self.low)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.high + self.low)

    def to_unit(self, action) -> np.ndarray:
        return (np.asarray(action, dtype=np.float64) - self.center) / self.scale

    def from_unit(self, x) -> np.ndarray:
        return self.center + self.scale * x

    def clip(self, action) -> np.ndarray:
        return np.clip(action, self.low, self.high)


SYMMETRIC_UNIT = ActionBounds(-1.0, 1.0)


@dataclass(frozen=True)
class SmoothingSpec:
    """Target-policy smoothing noise.

    ``sigma`` and ``c`` are in unit (pre-scale) action coordinates.  A sigma of
    zero disables smoothing altogether.
    """

    sigma: float = 0.2
    c: float = 0.5
    bounds: ActionBounds = field(default=SYMMETRIC_UNIT)

    def __post_init__(self):
        if self.sigma < 0 or self.c <= 0:
            raise ValueError(f"need sigma >= 0 and c > 0, got {self.sigma}, {self.c}")


@dataclass
class ActionSample:
    pre_squash: np.ndarray
    action: np.ndarray
    log_prob: np.ndarray


def log1m_tanh_sq(u):
    """log(1 - tanh(u)^2), stable for large |u|."""
    return 2.0 * (LOG_2 - u - np.logaddexp(0.0, -2.0 * u))


def gaussian_log_prob(u, mu, log_std):
    z = (u - mu) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def sample_reparam(
    mu, log_std, eps, bounds: ActionBounds = SYMMETRIC_UNIT, squash: bool = True
) -> ActionSample:
    mu = np.asarray(mu, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if not (mu.shape == log_std.shape == eps.shape):
        raise ValueError(f"shape mismatch: {mu.shape}, {log_std.shape}, {eps.shape}")
    u = mu + np.exp(log_std) * eps
    logp = np.sum(-0.5 * eps * eps - log_std - 0.5 * LOG_2PI, axis=-1)
    if not squash:
        return ActionSample(u, u, logp)
    logp = logp - np.sum(log1m_tanh_sq(u) + np.log(bounds.scale), axis=-1)
    return ActionSample(u, bounds.from_unit(np.tanh(u)), logp)


def sample_reparam_graph(
    mu: Node, log_std: Node, eps: np.ndarray, bounds: ActionBounds = SYMMETRIC_UNIT,
    squash: bool = True,
) -> tuple[Node, Node]:
    """Differentiable twin of :func:`sample_reparam` over tape nodes.

    Returns ``(action, log_prob)`` nodes; ``log_prob`` has one entry per row.
    """
    tape = mu.tape
    eps = np.asarray(eps, dtype=np.float64)
    u = mu + log_std.exp() * tape.constant(eps)
    base = tape.constant(-0.5 * eps * eps - 0.5 * LOG_2PI) - log_std
    axis = len(mu.shape) - 1
    if not squash:
        return u, base.sum(axis=axis)
    corr = (LOG_2 - u - (u * -2.0).softplus()) * 2.0
    logp = (base - corr).sum(axis=axis) - float(np.sum(np.log(bounds.scale)))
    action = u.tanh() * tape.constant(bounds.scale) + tape.constant(bounds.center)
    return action, logp


def log_prob_of(mu, log_std, action, bounds: ActionBounds = SYMMETRIC_UNIT) -> np.ndarray:
    """Log-density of ``action`` under the squashed Gaussian (mu, exp(log_std))."""
    action = np.asarray(action, dtype=np.float64)
    if np.any(action < bounds.low) or np.any(action > bounds.high):
        raise ValueError("action outside the closed action bounds")
    x = np.clip(bounds.to_unit(action), -1.0 + OPEN_EPS, 1.0 - OPEN_EPS)
    u = np.arctanh(x)
    return gaussian_log_prob(u, mu, log_std) - np.sum(
        log1m_tanh_sq(u) + np.log(bounds.scale), axis=-1
    )


def deterministic_action(mu, bounds: ActionBounds = SYMMETRIC_UNIT) -> np.ndarray:
    return bounds.from_unit(np.tanh(np.asarray(mu, dtype=np.float64)))


def smooth(action, noise, spec: SmoothingSpec) -> np.ndarray:
    """clip(action + scale * clip(noise, -c, c), low, high)."""
    b = spec.bounds
    return b.clip(action + b.scale * np.clip(noise, -spec.c, spec.c))


def target_action(
    actor_target: ActorNet, s_next, spec: SmoothingSpec, rng: np.random.Generator,
    deterministic: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed target actions and their log-density under the target policy.

    Draw order from ``rng``: policy noise (skipped when ``deterministic``),
    then smoothing noise (skipped when ``spec.sigma == 0``).  In deterministic
    mode the returned log-probabilities are zeros.
    """
    mu, log_std = forward_actor(actor_target, s_next)
    if deterministic:
        a = deterministic_action(mu, spec.bounds)
    else:
        eps = rng.standard_normal(mu.shape)
        a = sample_reparam(mu, log_std, eps, spec.bounds).action
    if spec.sigma > 0:
        a = smooth(a, rng.normal(0.0, spec.sigma, size=a.shape), spec)
    if deterministic:
        return a, np.zeros(a.shape[0])
    return a, log_prob_of(mu, log_std, a, spec.bounds)

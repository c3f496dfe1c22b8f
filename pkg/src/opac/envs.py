"""Desk-scale environments and the name-keyed registry.

Registered names: ``"pendulum"``, ``"pointmass"`` and
``"random-mdp:<seed>:<n_states>:<n_actions>"``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .policy import ActionBounds
from .tabular import FiniteMDP


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    act_dim: int
    bounds: ActionBounds
    max_episode_steps: int


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    done: bool
    # episode ended by the length cap rather than a true terminal state
    truncated: bool = False


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


class Pendulum:
    """Torque-limited pendulum swing-up; angle 0 is upright."""

    g = 10.0
    l = 1.0
    m = 1.0
    dt = 0.05
    max_torque = 2.0
    max_speed = 8.0

    def __init__(self, max_episode_steps: int = 500):
        self.spec = EnvSpec(3, 1, ActionBounds(-self.max_torque, self.max_torque), max_episode_steps)
        self._rng = np.random.default_rng()
        self.theta = 0.0
        self.theta_dot = 0.0
        self.t = 0

    def observe(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])

    def set_state(self, theta: float, theta_dot: float) -> np.ndarray:
        self.theta = wrap_angle(float(theta))
        self.theta_dot = float(np.clip(theta_dot, -self.max_speed, self.max_speed))
        self.t = 0
        return self.observe()

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        # uniform on [0, 2pi) reflected onto (-pi, pi]
        theta = math.pi - self._rng.uniform(0.0, 2.0 * math.pi)
        return self.set_state(theta, self._rng.uniform(-1.0, 1.0))

    def energy(self) -> float:
        """Rod kinetic plus potential energy (zero potential at horizontal)."""
        inertia = self.m * self.l**2 / 3.0
        return 0.5 * inertia * self.theta_dot**2 + 0.5 * self.m * self.g * self.l * math.cos(self.theta)

    def step(self, action) -> StepResult:
        u = float(np.asarray(action, dtype=np.float64).reshape(-1)[0])
        if not math.isfinite(u):
            raise ValueError(f"non-finite action {action!r}")
        u = min(max(u, -self.max_torque), self.max_torque)
        th, thd = self.theta, self.theta_dot
        reward = -(th * th + 0.1 * thd * thd + 0.001 * u * u)
        # -sin(th + pi) written as sin(th) so the upright rest state is exact
        acc = 1.5 * self.g / self.l * math.sin(th) + 3.0 * u / (self.m * self.l**2)
        thd = min(max(thd + acc * self.dt, -self.max_speed), self.max_speed)
        self.theta = wrap_angle(th + thd * self.dt)
        self.theta_dot = thd
        self.t += 1
        truncated = self.t >= self.spec.max_episode_steps
        return StepResult(self.observe(), reward, truncated, truncated)


class PointMass:
    """Planar unit point mass pushed toward a fixed goal."""

    dt = 0.1
    goal = (1.0, 1.0)

    def __init__(self, max_episode_steps: int = 200):
        self.spec = EnvSpec(4, 2, ActionBounds([-1.0, -1.0], [1.0, 1.0]), max_episode_steps)
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.t = 0

    def observe(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel])

    def reset(self, seed: int | None = None) -> np.ndarray:
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.t = 0
        return self.observe()

    def step(self, action) -> StepResult:
        f = np.asarray(action, dtype=np.float64).reshape(2)
        if not np.all(np.isfinite(f)):
            raise ValueError(f"non-finite action {action!r}")
        f = np.clip(f, -1.0, 1.0)
        dist = float(np.hypot(*(self.pos - self.goal)))
        reward = -(dist + 0.01 * float(f @ f))
        self.vel = self.vel + f * self.dt
        self.pos = self.pos + self.vel * self.dt
        self.t += 1
        truncated = self.t >= self.spec.max_episode_steps
        return StepResult(self.observe(), reward, truncated, truncated)


def random_mdp(
    seed: int, n_states: int, n_actions: int, gamma: float = 0.9, reward_noise: float = 0.5
) -> FiniteMDP:
    """Dense random MDP: Dirichlet(1) transition rows, uniform [0, 1) mean rewards."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return FiniteMDP(P, R, gamma, reward_noise=reward_noise)


def make_env(name: str):
    key = name.strip().lower()
    if key == "pendulum":
        return Pendulum()
    if key == "pointmass":
        return PointMass()
    if key.startswith("random-mdp:"):
        try:
            _, seed, n_s, n_a = key.split(":")
            return random_mdp(int(seed), int(n_s), int(n_a))
        except ValueError:
            raise ValueError(f"expected random-mdp:<seed>:<n_states>:<n_actions>, got {name!r}") from None
    raise ValueError(f"unknown environment {name!r}")


ENV_NAMES = ("pendulum", "pointmass", "random-mdp:<seed>:<n_states>:<n_actions>")

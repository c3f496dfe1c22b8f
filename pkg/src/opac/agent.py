"""Opportunistic actor-critic training loop and its SAC/TD3 baseline variants.

Per gradient step ``j``:

1. smoothed target actions a' and log pi_target(a'|s') from the target actor;
2. one shared target y = r + gamma (1 - d) (agg(Q_target(s', a')) - alpha log pi);
3. one Adam step on every model critic against y;
4. when ``j % policy_delay == 0``: one actor step on
   mean(alpha log pi(a|s) - Q_1(s, a)), one temperature step, and Polyak
   updates of the actor target and every critic target.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .diffcore import Tape
from .ensemble import CriticTriple, TargetStrategy, aggregate_batch, critic_loss_and_grads, shared_q_target
from .nets import (
    DEFAULT_HIDDEN,
    ActorNet,
    Adam,
    actor_graph,
    bind,
    critic_graph,
    decode_checkpoint,
    encode_checkpoint,
    forward_actor,
    polyak_update,
)
from .policy import (
    ActionBounds,
    SmoothingSpec,
    deterministic_action,
    sample_reparam,
    sample_reparam_graph,
    target_action,
)
from .replay import Batch, ReplayBuffer, Transition

ALPHA_MIN = 1e-4


class Variant(enum.Enum):
    OPAC = "opac"
    SAC = "sac"
    TD3 = "td3"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown algorithm variant {value!r}") from None


@dataclass(frozen=True)
class AgentConfig:
    variant: Variant = Variant.OPAC
    strategy: TargetStrategy = TargetStrategy.MEDIAN_THREE
    gamma: float = 0.99
    tau: float = 0.995  # retention: target <- tau * target + (1 - tau) * model
    batch_size: int = 256
    policy_delay: int = 2
    target_entropy: float | None = None  # None -> -(action dim)
    initial_alpha: float = 0.2
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    start_steps: int = 10_000
    update_every: int = 1
    buffer_capacity: int = 1_000_000
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    smoothing_sigma: float = 0.2
    smoothing_clip: float = 0.5
    # Gaussian exploration noise (unit action coordinates), TD3 only
    explore_noise: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        object.__setattr__(self, "strategy", TargetStrategy.parse(self.strategy))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.policy_delay < 1 or self.batch_size < 1 or self.update_every < 1:
            raise ValueError("policy_delay, batch_size and update_every must be >= 1")
        if self.start_steps < 0 or self.buffer_capacity < 1:
            raise ValueError("start_steps must be >= 0 and buffer_capacity >= 1")
        if self.initial_alpha < 0:
            raise ValueError("initial_alpha must be >= 0")

    def resolved(self) -> "AgentConfig":
        """Apply the variant's fixed choices.

        SAC: two critics with the min-pair target, no smoothing noise.
        TD3: two critics with the min-pair target, deterministic actor,
        temperature fixed at zero.
        """
        if self.variant is Variant.SAC:
            return replace(self, strategy=TargetStrategy.MIN_PAIR, smoothing_sigma=0.0)
        if self.variant is Variant.TD3:
            return replace(self, strategy=TargetStrategy.MIN_PAIR, initial_alpha=0.0)
        if self.strategy is TargetStrategy.MIN_PAIR:
            raise ValueError("OPAC needs the mean2 or median3 strategy")
        return self


@dataclass
class Diagnostics:
    update: int
    critic_losses: list[float]
    alpha: float
    policy_loss: float | None = None
    entropy: float | None = None


class EnvFault(RuntimeError):
    def __init__(self, step: int, cause: BaseException):
        super().__init__(f"environment failed at step {step}: {cause!r}")
        self.step = step


@dataclass
class Agent:
    """Model and target networks, temperature, optimizers and counters."""

    config: AgentConfig
    bounds: ActionBounds
    actor: ActorNet
    actor_target: ActorNet
    critics: CriticTriple
    alpha: float
    actor_opt: Adam
    critic_opts: list[Adam]
    updates: int = 0  # gradient-step counter j
    env_steps: int = 0
    alpha_updates: int = 0
    policy_updates: int = 0
    events: list[str] | None = field(default=None, repr=False)

    @classmethod
    def create(cls, config: AgentConfig, obs_dim: int, act_dim: int, bounds: ActionBounds, seed=0):
        cfg = config.resolved()
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        actor_seed, *critic_seeds = ss.spawn(4)
        actor = ActorNet.create(obs_dim, act_dim, cfg.hidden, seed=actor_seed)
        critics = CriticTriple.create(obs_dim, act_dim, cfg.hidden, critic_seeds, cfg.strategy.n_critics)
        return cls(
            cfg, bounds, actor, actor.copy(), critics, float(cfg.initial_alpha),
            Adam(actor.params, lr=cfg.actor_lr),
            [Adam(c.params, lr=cfg.critic_lr) for c in critics.models],
        )

    # -- properties --------------------------------------------------------

    @property
    def act_dim(self) -> int:
        return self.bounds.dim

    @property
    def deterministic(self) -> bool:
        return self.config.variant is Variant.TD3

    @property
    def fixed_alpha(self) -> bool:
        return self.config.variant is Variant.TD3

    @property
    def target_entropy(self) -> float:
        h0 = self.config.target_entropy
        return -float(self.act_dim) if h0 is None else float(h0)

    @property
    def smoothing(self) -> SmoothingSpec:
        return SmoothingSpec(self.config.smoothing_sigma, self.config.smoothing_clip, self.bounds)

    def _log(self, event: str) -> None:
        if self.events is not None:
            self.events.append(event)

    # -- acting ------------------------------------------------------------

    def act(self, s, mode: str = "explore", rng: np.random.Generator | None = None) -> np.ndarray:
        """One action for observation ``s``.

        ``explore`` draws uniformly from the action box until ``start_steps``
        environment steps have elapsed, then samples the policy; ``exploit``
        returns the squashed mean.
        """
        if mode not in ("explore", "exploit"):
            raise ValueError(f"mode must be 'explore' or 'exploit', got {mode!r}")
        if mode == "explore" and rng is None:
            raise ValueError("explore mode needs an rng")
        if mode == "explore" and self.env_steps < self.config.start_steps:
            return rng.uniform(self.bounds.low, self.bounds.high)
        mu, log_std = forward_actor(self.actor, s)
        mu, log_std = mu[0], log_std[0]
        if mode == "exploit":
            return deterministic_action(mu, self.bounds)
        if self.deterministic:
            a = deterministic_action(mu, self.bounds)
            noise = rng.normal(0.0, self.config.explore_noise, size=a.shape)
            return self.bounds.clip(a + self.bounds.scale * noise)
        return sample_reparam(mu, log_std, rng.standard_normal(mu.shape), self.bounds).action

    # -- losses ------------------------------------------------------------

    def compute_targets(self, batch: Batch, rng: np.random.Generator):
        """Shared targets y with the smoothed target actions and log-probs."""
        a_next, logp_next = target_action(
            self.actor_target, batch.s_next, self.smoothing, rng, deterministic=self.deterministic
        )
        q_next = self.critics.target_values(batch.s_next, a_next)
        agg = aggregate_batch(q_next, self.config.strategy)
        y = shared_q_target(batch.r, batch.d, self.config.gamma, agg, self.alpha, logp_next)
        return y, a_next, logp_next

    def policy_loss_and_grads(self, states, eps):
        """mean(alpha * log pi(a|s) - Q_1(s, a)) over reparameterized actions.

        Only critic 1's model network is used, with its parameters held
        constant.  Returns (loss, actor gradients, per-row log-probs).
        """
        tape = Tape()
        s = tape.constant(states)
        bound = bind(self.actor.params, tape)
        mu, log_std = actor_graph(self.actor, bound, s)
        if self.deterministic:
            action = mu.tanh() * tape.constant(self.bounds.scale) + tape.constant(self.bounds.center)
            logp = None
        else:
            action, logp = sample_reparam_graph(mu, log_std, eps, self.bounds)
        critic = self.critics.models[0]
        q = critic_graph(critic, bind(critic.params, tape, requires_grad=False), s, action)
        per_row = -q if logp is None or self.alpha == 0.0 else logp * self.alpha - q
        loss = per_row.mean()
        grads = tape.grad(loss, [n for pair in bound for n in pair])
        logp_val = np.zeros(len(states)) if logp is None else np.array(logp.value)
        return float(loss.value), grads, logp_val

    def policy_loss(self, states, eps=None, rng=None) -> float:
        if eps is None:
            eps = (rng or np.random.default_rng()).standard_normal((len(states), self.act_dim))
        return self.policy_loss_and_grads(states, eps)[0]

    def alpha_update(self, logp_batch) -> float:
        """alpha <- max(alpha - lr * (entropy estimate - H0), ALPHA_MIN)."""
        g = float(np.mean(-np.asarray(logp_batch))) - self.target_entropy
        self.alpha = max(self.alpha - self.config.alpha_lr * g, ALPHA_MIN)
        self.alpha_updates += 1
        self._log("alpha")
        return self.alpha

    # -- one gradient step -------------------------------------------------

    def update_step(self, batch: Batch, rng: np.random.Generator) -> Diagnostics:
        if len(batch) == 0:
            raise ValueError("update_step needs a non-empty batch")
        y, _, _ = self.compute_targets(batch, rng)
        losses, grads = critic_loss_and_grads(self.critics.models, batch.s, batch.a, y)
        for opt, g in zip(self.critic_opts, grads):
            opt.step(g)
        self._log("critic")
        diag = Diagnostics(self.updates, losses, self.alpha)
        if self.updates % self.config.policy_delay == 0:
            eps = None if self.deterministic else rng.standard_normal((len(batch), self.act_dim))
            loss, pgrads, logp = self.policy_loss_and_grads(batch.s, eps)
            self.actor_opt.step(pgrads)
            self.policy_updates += 1
            self._log("policy")
            if not self.fixed_alpha:
                self.alpha_update(logp)
            tau = self.config.tau
            polyak_update(self.actor_target.params, self.actor.params, tau)
            for target, model in zip(self.critics.targets, self.critics.models):
                polyak_update(target.params, model.params, tau)
            self._log("targets")
            diag.policy_loss = loss
            diag.entropy = None if self.deterministic else float(-np.mean(logp))
            diag.alpha = self.alpha
        self.updates += 1
        return diag

    # -- persistence -------------------------------------------------------

    def param_sets(self):
        return [
            self.actor.params, self.actor_target.params,
            *(c.params for c in self.critics.models),
            *(c.params for c in self.critics.targets),
        ]

    def checkpoint_bytes(self) -> bytes:
        return encode_checkpoint(self.param_sets(), self.alpha, self.env_steps)

    def load_checkpoint_bytes(self, blob: bytes) -> None:
        sets, alpha, step = decode_checkpoint(blob)
        mine = self.param_sets()
        if len(sets) != len(mine) or not all(a.same_shapes(b) for a, b in zip(sets, mine)):
            raise ValueError("checkpoint does not match this agent's architecture")
        for dst, src in zip(mine, sets):
            for d, s in zip(dst.arrays(), src.arrays()):
                d[...] = s
        self.alpha = alpha
        self.env_steps = step

    def policy_snapshot(self) -> ActorNet:
        return self.actor.copy()


def actor_from_checkpoint(blob: bytes) -> tuple[ActorNet, float, int]:
    sets, alpha, step = decode_checkpoint(blob)
    return ActorNet.from_params(sets[0]), alpha, step


@dataclass
class StepInfo:
    step: int
    updates: list[Diagnostics]
    episode_return: float | None
    agent: Agent
    buffer: ReplayBuffer


def train(
    config: AgentConfig, env, total_steps: int, seed: int, agent: Agent | None = None
) -> Iterator[StepInfo]:
    """Interact with ``env`` for ``total_steps`` steps, yielding after each one.

    Deterministic given ``seed``: separate generator streams drive network
    initialization, exploration, replay sampling, update noise and resets.
    """
    ss = np.random.SeedSequence(seed)
    init_ss, act_ss, replay_ss, update_ss, env_ss = ss.spawn(5)
    spec = env.spec
    if agent is None:
        agent = Agent.create(config, spec.obs_dim, spec.act_dim, spec.bounds, seed=init_ss)
    cfg = agent.config
    act_rng = np.random.default_rng(act_ss)
    replay_rng = np.random.default_rng(replay_ss)
    update_rng = np.random.default_rng(update_ss)
    buffer = ReplayBuffer(spec.obs_dim, spec.act_dim, min(cfg.buffer_capacity, max(total_steps, 1)))

    obs = env.reset(seed=int(env_ss.generate_state(1)[0]))
    ep_return = 0.0
    for t in range(total_steps):
        a = agent.act(obs, "explore", act_rng)
        try:
            res = env.step(a)
        except Exception as exc:
            raise EnvFault(t, exc) from exc
        terminal = bool(res.done and not res.truncated)
        buffer.push(Transition(obs, a, res.reward, res.observation, float(terminal), bool(res.truncated)))
        agent.env_steps += 1
        ep_return += res.reward
        finished = None
        obs = res.observation
        if res.done:
            finished, ep_return = ep_return, 0.0
            obs = env.reset()
        diags = []
        if agent.env_steps >= cfg.start_steps and agent.env_steps % cfg.update_every == 0:
            for _ in range(cfg.update_every):
                diags.append(agent.update_step(buffer.sample(cfg.batch_size, replay_rng), update_rng))
        yield StepInfo(agent.env_steps, diags, finished, agent, buffer)

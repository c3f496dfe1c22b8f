"""Coupled temperature / policy experiment shared by the agent and acceptance tests.

A 1-D policy on fixed states faces a critic computing Q(s, a) = -c |a|
exactly (two relu units), so lower entropy earns more value and the
temperature decides the balance.  H0 is set one nat below the starting
entropy.
"""

from dataclasses import replace

import numpy as np

from opac.agent import Agent, AgentConfig
from opac.policy import ActionBounds


def abs_value_critic(agent, c=1.0):
    crit = agent.critics.models[0]
    (w1, _), (w2, _) = crit.params.layers
    crit.params.flat[:] = 0.0
    w1[1, 0], w1[1, 1] = 1.0, -1.0  # row 1 is the action input
    w2[:, 0] = -c


def run_steering(seed, iterations=2000, lr=3e-3, batch=64):
    cfg = AgentConfig(hidden=(2,), actor_lr=lr, alpha_lr=lr, batch_size=batch, start_steps=0)
    agent = Agent.create(cfg, 1, 1, ActionBounds([-1.0], [1.0]), seed=seed)
    abs_value_critic(agent)
    rng = np.random.default_rng(seed)
    states = rng.normal(size=(batch, 1))

    def entropy(n_batches=20):
        return float(np.mean([-agent.policy_loss_and_grads(states, rng.standard_normal((batch, 1)))[2].mean()
                              for _ in range(n_batches)]))

    start = entropy()
    h0 = start - 1.0
    agent.config = replace(cfg, target_entropy=h0)
    for _ in range(iterations):
        _, grads, logp = agent.policy_loss_and_grads(states, rng.standard_normal((batch, 1)))
        agent.actor_opt.step(grads)
        agent.alpha_update(logp)
    final = entropy()
    return {"h0": h0, "initial_gap": abs(start - h0), "final_gap": abs(final - h0), "alpha": agent.alpha}

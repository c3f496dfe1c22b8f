"""Finite-difference checks of every analytic gradient used in training.

Each configuration draws a small random network and batch, computes the
gradient through the tape, and compares it with central differences of the
same loss evaluated without the tape where possible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agent import Agent, AgentConfig
from .diffcore import Tape, finite_diff_gradient
from .ensemble import critic_loss_and_grads
from .policy import ActionBounds, sample_reparam, sample_reparam_graph

KINDS = ("actor", "critic", "logprob", "alpha")
REL_TOL = 1e-4
ABS_TOL = 1e-6  # used instead of the relative error when |analytic| < ABS_TOL
FD_STEP = 1e-5


@dataclass
class CheckResult:
    index: int
    kind: str
    detail: str
    n_params: int
    max_rel_error: float
    max_abs_error_small: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < REL_TOL and self.max_abs_error_small < ABS_TOL

    def line(self) -> str:
        flag = "ok  " if self.passed else "FAIL"
        return (f"{flag} #{self.index:02d} {self.kind:<8} {self.detail:<34} "
                f"n={self.n_params:<4d} rel={self.max_rel_error:.2e} abs={self.max_abs_error_small:.2e}")


def compare(analytic, numeric) -> tuple[float, float]:
    """(max relative error over large entries, max absolute error over small ones)."""
    a = np.ravel(analytic)
    f = np.ravel(numeric)
    err = np.abs(a - f)
    small = np.abs(a) < ABS_TOL
    rel = err[~small] / np.abs(a[~small])
    return (float(rel.max()) if rel.size else 0.0, float(err[small].max()) if small.any() else 0.0)


def _random_shape(rng):
    obs_dim = int(rng.integers(1, 5))
    act_dim = int(rng.integers(1, 4))
    hidden = tuple(int(h) for h in rng.integers(3, 9, size=int(rng.integers(1, 3))))
    batch = int(rng.integers(2, 7))
    return obs_dim, act_dim, hidden, batch


def _random_bounds(rng, act_dim):
    low = rng.uniform(-3.0, 0.0, act_dim)
    return ActionBounds(low, low + rng.uniform(0.5, 3.0, act_dim))


def _perturb(params, rng, scale=0.3):
    # nonzero biases so the check covers them meaningfully
    params.flat[:] += rng.normal(0.0, scale, params.flat.shape)


def check_actor(rng, index) -> CheckResult:
    obs_dim, act_dim, hidden, batch = _random_shape(rng)
    variant = "td3" if rng.random() < 0.25 else "opac"
    cfg = AgentConfig(variant=variant, hidden=hidden, initial_alpha=float(rng.uniform(0.05, 1.0)))
    agent = Agent.create(cfg, obs_dim, act_dim, _random_bounds(rng, act_dim), seed=int(rng.integers(2**31)))
    _perturb(agent.actor.params, rng)
    _perturb(agent.critics.models[0].params, rng)
    states = rng.normal(size=(batch, obs_dim))
    eps = None if agent.deterministic else rng.standard_normal((batch, act_dim))
    _, grads, _ = agent.policy_loss_and_grads(states, eps)
    analytic = np.concatenate([g.ravel() for g in grads])
    base = agent.actor.params.flat.copy()

    def f(vec):
        agent.actor.params.flat[:] = vec
        return agent.policy_loss_and_grads(states, eps)[0]

    numeric = finite_diff_gradient(f, base, FD_STEP)
    agent.actor.params.flat[:] = base
    rel, small = compare(analytic, numeric)
    return CheckResult(index, "actor", f"{variant} hidden={hidden} B={batch}", base.size, rel, small)


def check_critic(rng, index) -> CheckResult:
    obs_dim, act_dim, hidden, batch = _random_shape(rng)
    agent = Agent.create(AgentConfig(hidden=hidden), obs_dim, act_dim,
                         _random_bounds(rng, act_dim), seed=int(rng.integers(2**31)))
    models = agent.critics.models
    for m in models:
        _perturb(m.params, rng)
    states = rng.normal(size=(batch, obs_dim))
    actions = rng.normal(size=(batch, act_dim))
    y = rng.normal(size=batch)
    _, grads = critic_loss_and_grads(models, states, actions, y)
    worst_rel, worst_small, n = 0.0, 0.0, 0
    for k, model in enumerate(models):
        base = model.params.flat.copy()

        def f(vec, k=k, model=model):
            model.params.flat[:] = vec
            return critic_loss_and_grads(models, states, actions, y)[0][k]

        numeric = finite_diff_gradient(f, base, FD_STEP)
        model.params.flat[:] = base
        rel, small = compare(np.concatenate([g.ravel() for g in grads[k]]), numeric)
        worst_rel, worst_small, n = max(worst_rel, rel), max(worst_small, small), n + base.size
    return CheckResult(index, "critic", f"3 critics hidden={hidden} B={batch}", n, worst_rel, worst_small)


def check_logprob(rng, index) -> CheckResult:
    _, act_dim, _, batch = _random_shape(rng)
    bounds = _random_bounds(rng, act_dim)
    mu = rng.normal(0.0, 1.0, (batch, act_dim))
    log_std = rng.uniform(-1.5, 0.5, (batch, act_dim))
    eps = rng.standard_normal((batch, act_dim))
    # weight rows so the check sees per-row structure, not only the sum
    w = rng.uniform(0.5, 1.5, batch)
    tape = Tape()
    mu_n, ls_n = tape.leaf(mu), tape.leaf(log_std)
    _, logp = sample_reparam_graph(mu_n, ls_n, eps, bounds)
    loss = (logp * tape.constant(w)).sum()
    g_mu, g_ls = tape.grad(loss, [mu_n, ls_n])
    analytic = np.concatenate([g_mu.ravel(), g_ls.ravel()])
    n = mu.size

    def f(vec):
        return float(np.sum(w * sample_reparam(vec[:n].reshape(mu.shape), vec[n:].reshape(mu.shape),
                                               eps, bounds).log_prob))

    numeric = finite_diff_gradient(f, np.concatenate([mu.ravel(), log_std.ravel()]), FD_STEP)
    rel, small = compare(analytic, numeric)
    return CheckResult(index, "logprob", f"act_dim={act_dim} B={batch}", 2 * n, rel, small)


def check_alpha(rng, index) -> CheckResult:
    """J(alpha) = mean(-alpha * (log pi + H0)); its derivative drives the temperature step."""
    batch = int(rng.integers(2, 64))
    act_dim = int(rng.integers(1, 4))
    logp = rng.normal(-act_dim * 0.5, 1.0, batch)
    h0 = -float(act_dim)
    alpha0 = float(rng.uniform(0.01, 1.0))
    tape = Tape()
    a = tape.leaf(np.array(alpha0))
    loss = (tape.constant(-(logp + h0)) * a).mean()
    (analytic,) = tape.grad(loss, [a])
    numeric = finite_diff_gradient(lambda v: float(np.mean(-v[0] * (logp + h0))), np.array([alpha0]), FD_STEP)
    rel, small = compare(analytic, numeric)
    # the temperature update must use the same derivative
    agent = Agent.create(AgentConfig(hidden=(3,), initial_alpha=alpha0), 1, act_dim,
                         ActionBounds(-np.ones(act_dim), np.ones(act_dim)), seed=0)
    step = agent.config.alpha_lr
    agent.alpha_update(logp)
    expected = max(alpha0 - step * float(analytic), 1e-4)
    rel = max(rel, abs(agent.alpha - expected) / max(abs(expected), 1e-12))
    return CheckResult(index, "alpha", f"B={batch} H0={h0:g}", 1, rel, small)


CHECKS = {"actor": check_actor, "critic": check_critic, "logprob": check_logprob, "alpha": check_alpha}


def run_suite(n_configs: int = 50, seed: int = 0) -> list[CheckResult]:
    """Cycle through the check kinds over ``n_configs`` random configurations."""
    rng = np.random.default_rng(seed)
    return [CHECKS[KINDS[i % len(KINDS)]](rng, i) for i in range(n_configs)]

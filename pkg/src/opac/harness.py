"""Multi-seed experiment runner: periodic evaluation, CSV metrics, aggregation.

Per-seed CSVs are appended one row per evaluation and flushed immediately,
so an interrupted run still leaves parseable files.  Smoothing is applied
only when writing the plot-data file; stored metrics are raw.
"""

from __future__ import annotations

import csv
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .agent import AgentConfig, train
from .envs import make_env
from .nets import ActorNet, forward_actor
from .policy import deterministic_action

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 200, 872, 2359, 6574)
METRICS_HEADER = (
    "step", "eval_mean", "eval_std", "alpha", "entropy",
    "critic1_loss", "critic2_loss", "critic3_loss", "policy_loss", "wall_ms",
)
AGGREGATE_HEADER = ("step", "eval_mean", "eval_std_population", "n_seeds")
PLOT_HEADER = ("step", "series", "value")


class RunFailure(RuntimeError):
    """One or more seeds failed; partial outputs and an error manifest remain."""


@dataclass
class RunConfig:
    env: str = "pendulum"
    algo: str = "opac"
    strategy: str = "median3"
    total_steps: int = 1_000_000
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    eval_interval: int = 5000
    eval_episodes: int = 20
    out: str = "runs/opac"
    agent: dict = field(default_factory=dict)
    workers: int = 1
    smoothing_window: int = 5
    # real elapsed time in the wall_ms column; off by default to keep
    # reruns byte-identical
    wall_clock: bool = False
    checkpoint: bool = True

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.eval_interval <= 0 or self.eval_episodes < 1:
            raise ValueError("eval_interval must be > 0 and eval_episodes >= 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        self.agent_config()  # validate overrides early

    def agent_config(self) -> AgentConfig:
        return AgentConfig(variant=self.algo, strategy=self.strategy, **self.agent)


# ---------------------------------------------------------------------------
# evaluation


def _as_policy(policy) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(policy, ActorNet):
        net = policy

        def act(obs, bounds):
            mu, _ = forward_actor(net, obs)
            return deterministic_action(mu[0], bounds)

        return act
    return lambda obs, bounds: policy(obs)


def evaluate(policy, env, episodes: int, seed: int) -> tuple[float, float]:
    """Undiscounted return of noiseless rollouts; (mean, population std).

    ``policy`` is an :class:`ActorNet` (acted on with its squashed mean) or
    any callable mapping an observation to an action.  Episode ``k`` starts
    from a reset seeded by the k-th word of ``SeedSequence(seed)``, so every
    evaluation with the same seed sees the same start states.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    act = _as_policy(policy)
    bounds = env.spec.bounds
    reset_seeds = np.random.SeedSequence(seed).generate_state(episodes)
    returns = np.empty(episodes)
    for k in range(episodes):
        obs = env.reset(seed=int(reset_seeds[k]))
        total, done = 0.0, False
        while not done:
            res = env.step(act(obs, bounds))
            total += res.reward
            obs, done = res.observation, res.done
        returns[k] = total
    return float(returns.mean()), float(returns.std())


def random_policy_baseline(env, episodes: int, seed: int) -> tuple[float, float, np.ndarray]:
    """Returns of uniformly random actions: (mean, population std, all returns)."""
    rng = np.random.default_rng(seed)
    bounds = env.spec.bounds
    reset_seeds = np.random.SeedSequence(seed).generate_state(episodes)
    returns = np.empty(episodes)
    for k in range(episodes):
        env.reset(seed=int(reset_seeds[k]))
        total, done = 0.0, False
        while not done:
            res = env.step(rng.uniform(bounds.low, bounds.high))
            total += res.reward
            done = res.done
        returns[k] = total
    return float(returns.mean()), float(returns.std()), returns


# ---------------------------------------------------------------------------
# smoothing and aggregation


def moving_average(series: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean over the last min(i + 1, window) values."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.ascontiguousarray(series, dtype=np.float64)
    if x.size == 0:
        return x
    return kernels.moving_average_kernel(x, int(window))


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _mean_or_none(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def read_metrics(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def aggregate_runs(per_seed: dict[int, list[dict]]) -> list[tuple[int, float, float, int]]:
    """Mean and population std of eval_mean across seeds, for steps all seeds reached."""
    by_step: dict[int, list[float]] = {}
    for rows in per_seed.values():
        for row in rows:
            by_step.setdefault(int(row["step"]), []).append(float(row["eval_mean"]))
    n = len(per_seed)
    out = []
    for step in sorted(by_step):
        vals = by_step[step]
        if len(vals) == n:
            out.append((step, float(np.mean(vals)), float(np.std(vals)), n))
    return out


# ---------------------------------------------------------------------------
# runs


@dataclass
class SeedResult:
    seed: int
    metrics_path: str
    checkpoint_path: str | None
    max_eval_mean: float | None
    final_eval_means: list[float]


def run_seed(config: RunConfig, seed: int, observer: Callable | None = None) -> SeedResult:
    """Train one seed, writing ``seed_<seed>.csv`` (and a checkpoint) under ``out``.

    ``observer`` receives every StepInfo (used by tests to instrument runs).
    """
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    env, eval_env = make_env(config.env), make_env(config.env)
    agent_cfg = config.agent_config()
    n_critics = agent_cfg.resolved().strategy.n_critics
    metrics_path = out / f"seed_{seed}.csv"
    eval_means = []
    t0 = time.perf_counter()
    with metrics_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        fh.flush()
        pending = []
        agent = None
        for info in train(agent_cfg, env, config.total_steps, seed):
            agent = info.agent
            pending.extend(info.updates)
            if observer is not None:
                observer(info)
            if info.step % config.eval_interval:
                continue
            mean, std = evaluate(agent.policy_snapshot(), eval_env, config.eval_episodes, seed)
            eval_means.append(mean)
            losses = [
                _mean_or_none([d.critic_losses[i] for d in pending]) if i < n_critics else None
                for i in range(3)
            ]
            wall = (time.perf_counter() - t0) * 1000.0 if config.wall_clock else None
            writer.writerow([
                info.step, _fmt(mean), _fmt(std), _fmt(agent.alpha),
                _fmt(_mean_or_none([d.entropy for d in pending])),
                *(_fmt(x) for x in losses),
                _fmt(_mean_or_none([d.policy_loss for d in pending])),
                "" if wall is None else f"{wall:.1f}",
            ])
            fh.flush()
            pending = []
            log.info("seed %d step %d eval %.2f +- %.2f", seed, info.step, mean, std)
    ckpt = None
    if config.checkpoint and agent is not None:
        ckpt = out / f"seed_{seed}.ckpt"
        ckpt.write_bytes(agent.checkpoint_bytes())
    return SeedResult(
        seed, str(metrics_path), None if ckpt is None else str(ckpt),
        max(eval_means) if eval_means else None, eval_means,
    )


def _run_seed_safe(config: RunConfig, seed: int):
    try:
        return run_seed(config, seed), None
    except Exception as exc:  # reported through the error manifest
        return None, {"seed": seed, "error": repr(exc), "traceback": traceback.format_exc()}


@dataclass
class ExperimentResult:
    seeds: list[SeedResult]
    aggregate_path: str
    plot_path: str
    summary_path: str
    summary: dict


def write_reports(config: RunConfig, results: list[SeedResult]) -> ExperimentResult:
    out = Path(config.out)
    per_seed = {r.seed: read_metrics(r.metrics_path) for r in results}
    agg = aggregate_runs(per_seed)
    agg_path = out / "aggregate.csv"
    with agg_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_HEADER)
        for step, mean, std, n in agg:
            w.writerow([step, repr(mean), repr(std), n])

    plot_path = out / "plot_data.csv"
    with plot_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_HEADER)
        for seed, rows in per_seed.items():
            for row in rows:
                w.writerow([row["step"], f"seed_{seed}", row["eval_mean"]])
        if agg:
            steps = [a[0] for a in agg]
            means = np.array([a[1] for a in agg])
            stds = np.array([a[2] for a in agg])
            smooth = moving_average(means, config.smoothing_window)
            for i, step in enumerate(steps):
                w.writerow([step, "mean", repr(float(means[i]))])
                w.writerow([step, "mean_smoothed", repr(float(smooth[i]))])
                w.writerow([step, "std", repr(float(stds[i]))])

    # best unsmoothed evaluation mean per trial
    maxima = {r.seed: r.max_eval_mean for r in results if r.max_eval_mean is not None}
    vals = np.array(list(maxima.values()), dtype=np.float64)
    summary = {
        "env": config.env,
        "algo": config.algo,
        "strategy": config.strategy,
        "total_steps": config.total_steps,
        "max_average_return_per_seed": {str(k): v for k, v in maxima.items()},
        "max_average_return_mean": float(vals.mean()) if vals.size else None,
        "max_average_return_std_population": float(vals.std()) if vals.size else None,
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return ExperimentResult(results, str(agg_path), str(plot_path), str(summary_path), summary)


def run_experiment(config: RunConfig) -> ExperimentResult:
    """Run every seed (optionally in parallel processes), then aggregate."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(asdict(config), indent=2, sort_keys=True) + "\n")
    if config.workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_run_seed_safe, [config] * len(config.seeds), config.seeds))
    else:
        outcomes = [_run_seed_safe(config, s) for s in config.seeds]
    results = [r for r, err in outcomes if r is not None]
    errors = [err for _, err in outcomes if err is not None]
    if errors:
        (out / "errors.json").write_text(json.dumps(errors, indent=2) + "\n")
        raise RunFailure(f"{len(errors)} of {len(config.seeds)} seeds failed; see {out / 'errors.json'}")
    return write_reports(config, results)


def summary_line(result: ExperimentResult) -> str:
    s = result.summary
    per = ", ".join(f"{k}: {v:.2f}" for k, v in s["max_average_return_per_seed"].items())
    if s["max_average_return_mean"] is None:
        return "no evaluations recorded"
    return (
        f"max average return {s['max_average_return_mean']:.2f} "
        f"+- {s['max_average_return_std_population']:.2f} over {len(result.seeds)} seeds ({per})"
    )

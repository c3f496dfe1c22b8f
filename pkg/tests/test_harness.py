import csv
import json

import numpy as np
import pytest

import opac.harness as harness
from opac.envs import EnvSpec, PointMass, StepResult, make_env
from opac.harness import (
    METRICS_HEADER,
    RunConfig,
    RunFailure,
    aggregate_runs,
    evaluate,
    moving_average,
    random_policy_baseline,
    read_metrics,
    run_experiment,
    run_seed,
)
from opac.nets import ActorNet
from opac.policy import ActionBounds

TINY = dict(hidden=(8,), batch_size=8, start_steps=100)


def tiny_config(tmp_path, **kw):
    base = dict(env="pointmass", total_steps=400, seeds=(0, 1), eval_interval=100, eval_episodes=2,
                out=str(tmp_path / "run"), agent=dict(TINY))
    base.update(kw)
    return RunConfig(**base)


class _NoReward:
    spec = EnvSpec(2, 1, ActionBounds([-1.0], [1.0]), 10)

    def reset(self, seed=None):
        self.t = 0
        return np.zeros(2)

    def step(self, action):
        self.t += 1
        return StepResult(np.zeros(2), 0.0, self.t >= 10, self.t >= 10)


def test_evaluate_reward_free_env():
    assert evaluate(lambda obs: np.zeros(1), _NoReward(), 5, seed=0) == (0.0, 0.0)


def test_evaluate_deterministic_env_has_zero_std():
    actor = ActorNet.create(4, 2, (8,), seed=0)
    mean, std = evaluate(actor, PointMass(), 4, seed=1)
    assert std == 0.0 and mean < 0.0


def test_evaluate_requires_episodes():
    with pytest.raises(ValueError):
        evaluate(lambda o: np.zeros(1), _NoReward(), 0, seed=0)


def test_evaluate_is_seeded():
    actor = ActorNet.create(3, 1, (8,), seed=0)
    env = make_env("pendulum")
    assert evaluate(actor, env, 3, seed=5) == evaluate(actor, env, 3, seed=5)


def test_random_baseline_shape():
    mean, std, returns = random_policy_baseline(make_env("pendulum"), 5, seed=0)
    assert returns.shape == (5,) and mean == pytest.approx(returns.mean()) and std == pytest.approx(returns.std())


def test_moving_average_examples():
    np.testing.assert_array_equal(moving_average([0.0, 2.0], 2), [0.0, 1.0])
    x = np.random.default_rng(0).normal(size=20)
    np.testing.assert_array_equal(moving_average(x, 1), x)
    np.testing.assert_allclose(moving_average(np.full(9, 3.5), 4), np.full(9, 3.5))
    assert moving_average([], 3).size == 0
    np.testing.assert_allclose(moving_average([1.0, 2.0, 3.0, 4.0], 3), [1.0, 1.5, 2.0, 3.0])
    with pytest.raises(ValueError):
        moving_average([1.0], 0)


def test_run_config_validation(tmp_path):
    with pytest.raises(ValueError):
        tiny_config(tmp_path, seeds=())
    with pytest.raises(ValueError):
        tiny_config(tmp_path, eval_interval=0)
    with pytest.raises(TypeError):
        tiny_config(tmp_path, agent={"no_such_field": 1})
    assert RunConfig().seeds == (0, 200, 872, 2359, 6574)
    assert (RunConfig().eval_interval, RunConfig().eval_episodes) == (5000, 20)


def test_aggregate_identical_seeds_zero_std():
    rows = [{"step": str(s), "eval_mean": str(v)} for s, v in [(100, -3.0), (200, -1.0)]]
    agg = aggregate_runs({0: rows, 1: rows})
    assert [a[2] for a in agg] == [0.0, 0.0]
    assert [a[1] for a in agg] == [-3.0, -1.0]


def test_aggregate_population_std():
    a = [{"step": "1", "eval_mean": "0.0"}]
    b = [{"step": "1", "eval_mean": "2.0"}]
    assert aggregate_runs({0: a, 1: b}) == [(1, 1.0, 1.0, 2)]


def test_run_experiment_outputs(tmp_path):
    cfg = tiny_config(tmp_path)
    res = run_experiment(cfg)
    out = tmp_path / "run"
    for seed in (0, 1):
        rows = list(csv.reader((out / f"seed_{seed}.csv").open()))
        assert tuple(rows[0]) == METRICS_HEADER
        assert [int(r[0]) for r in rows[1:]] == [100, 200, 300, 400]
        assert all(len(r) == len(METRICS_HEADER) for r in rows)
        assert (out / f"seed_{seed}.ckpt").exists()
    summary = json.loads((out / "summary.json").read_text())
    for seed in ("0", "1"):
        col = [float(r["eval_mean"]) for r in read_metrics(out / f"seed_{seed}.csv")]
        assert summary["max_average_return_per_seed"][seed] == max(col)
    agg = list(csv.DictReader((out / "aggregate.csv").open()))
    assert len(agg) == 4 and "eval_std_population" in agg[0]
    plot = list(csv.DictReader((out / "plot_data.csv").open()))
    assert {"seed_0", "seed_1", "mean", "mean_smoothed", "std"} <= {r["series"] for r in plot}
    assert "max average return" in harness.summary_line(res)


def test_metrics_are_raw_and_three_critic_losses(tmp_path):
    cfg = tiny_config(tmp_path, seeds=(0,))
    res = run_seed(cfg, 0)
    rows = read_metrics(res.metrics_path)
    assert [float(r["eval_mean"]) for r in rows] == res.final_eval_means
    assert rows[0]["critic1_loss"] != "" and rows[0]["critic3_loss"] != ""
    assert all(r["wall_ms"] == "" for r in rows)


def test_two_critic_variant_leaves_third_loss_empty(tmp_path):
    res = run_seed(tiny_config(tmp_path, algo="sac", seeds=(0,)), 0)
    rows = read_metrics(res.metrics_path)
    assert all(r["critic3_loss"] == "" for r in rows) and rows[-1]["critic2_loss"] != ""


def test_rerun_is_byte_identical(tmp_path):
    a = run_experiment(tiny_config(tmp_path / "a"))
    b = run_experiment(tiny_config(tmp_path / "b"))
    for ra, rb in zip(a.seeds, b.seeds):
        assert open(ra.metrics_path, "rb").read() == open(rb.metrics_path, "rb").read()
        assert open(ra.checkpoint_path, "rb").read() == open(rb.checkpoint_path, "rb").read()


def test_parallel_matches_serial(tmp_path):
    a = run_experiment(tiny_config(tmp_path / "serial"))
    b = run_experiment(tiny_config(tmp_path / "parallel", workers=2))
    for ra, rb in zip(a.seeds, b.seeds):
        assert open(ra.metrics_path, "rb").read() == open(rb.metrics_path, "rb").read()


def test_interrupted_run_leaves_valid_csv(tmp_path):
    cfg = tiny_config(tmp_path, seeds=(0,))

    def stop(info):
        if info.step == 250:
            raise KeyboardInterrupt

    with pytest.raises(KeyboardInterrupt):
        run_seed(cfg, 0, observer=stop)
    rows = list(csv.reader((tmp_path / "run" / "seed_0.csv").open()))
    assert [r[0] for r in rows[1:]] == ["100", "200"]
    assert all(len(r) == len(METRICS_HEADER) for r in rows)


def test_seed_failure_writes_manifest(tmp_path, monkeypatch):
    real = harness.train

    def flaky(config, env, total_steps, seed, agent=None):
        if seed == 1:
            raise RuntimeError("boom")
        return real(config, env, total_steps, seed, agent)

    monkeypatch.setattr(harness, "train", flaky)
    with pytest.raises(RunFailure):
        run_experiment(tiny_config(tmp_path))
    out = tmp_path / "run"
    errors = json.loads((out / "errors.json").read_text())
    assert [e["seed"] for e in errors] == [1] and "boom" in errors[0]["error"]
    assert len(read_metrics(out / "seed_0.csv")) == 4  # the healthy seed's output is kept


def test_wall_clock_option(tmp_path):
    res = run_seed(tiny_config(tmp_path, seeds=(0,), wall_clock=True, total_steps=200), 0)
    assert all(float(r["wall_ms"]) >= 0 for r in read_metrics(res.metrics_path))

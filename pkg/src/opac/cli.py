"""Command-line entry point: train, eval, tabular, gradcheck.

Exit codes: 0 success, 1 run failure, 2 invalid configuration.
A ``--config`` file holds flat ``key = value`` lines whose keys mirror the
long flag names (dashes or underscores); command-line flags win.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in str(text).replace(" ", "").split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# (flag, type, help); AgentConfig fields are the flag with dashes -> underscores
AGENT_FLAGS = [
    ("gamma", float, "discount factor"),
    ("tau", float, "target retention coefficient"),
    ("batch-size", int, "minibatch size"),
    ("policy-delay", int, "critic steps per actor/target/alpha step"),
    ("target-entropy", float, "entropy target H0 (default: -action dim)"),
    ("initial-alpha", float, "initial temperature"),
    ("actor-lr", float, "actor learning rate"),
    ("critic-lr", float, "critic learning rate"),
    ("alpha-lr", float, "temperature learning rate"),
    ("start-steps", int, "uniform-random warmup steps"),
    ("update-every", int, "environment steps between update bursts"),
    ("buffer-capacity", int, "replay capacity"),
    ("hidden", _ints, "hidden layer widths, e.g. 256,256"),
    ("smoothing-sigma", float, "target smoothing std (unit action coordinates)"),
    ("smoothing-clip", float, "target smoothing clip"),
    ("explore-noise", float, "TD3 exploration noise std"),
]

RUN_FLAGS = [
    ("env", str, "environment name"),
    ("algo", str, "opac, sac or td3"),
    ("strategy", str, "mean2 or median3"),
    ("steps", int, "total environment steps"),
    ("seeds", _ints, "comma-separated seeds"),
    ("out", str, "output directory"),
    ("eval-interval", int, "environment steps between evaluations"),
    ("eval-episodes", int, "episodes per evaluation"),
    ("workers", int, "parallel seed processes"),
    ("smoothing-window", int, "moving-average window for plot data"),
    ("wall-clock", _bool, "record elapsed wall time in metrics"),
]

TRAIN_DEFAULTS = {"env": "pendulum", "algo": "opac", "strategy": "median3", "steps": 1_000_000,
                  "out": "runs/opac"}


def _add_flags(parser, flags):
    for name, typ, help_ in flags:
        # defaults stay None so the config file can fill gaps
        parser.add_argument(f"--{name}", type=typ, default=None, help=help_)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opac", description="Opportunistic actor-critic experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="multi-seed training run")
    t.add_argument("--config", type=Path, help="flat key = value file")
    _add_flags(t, RUN_FLAGS)
    _add_flags(t, AGENT_FLAGS)

    e = sub.add_parser("eval", help="evaluate a saved checkpoint")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--env", default="pendulum")
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--seed", type=int, default=0)

    q = sub.add_parser("tabular", help="clipped triple Q-learning against value iteration")
    q.add_argument("--strategy", default="median3")
    q.add_argument("--states", type=int, default=6)
    q.add_argument("--actions", type=int, default=3)
    q.add_argument("--steps", type=int, default=200_000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--gamma", type=float, default=0.9)
    q.add_argument("--record-every", type=int, default=1000)
    q.add_argument("--csv", type=Path, help="write the error trajectory here")

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--configs", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    return p


def read_config_file(path: Path) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def merge_train_args(args: argparse.Namespace) -> dict:
    """Defaults < config file < flags; values from the file go through the flag types."""
    types = {n.replace("-", "_"): typ for n, typ, _ in RUN_FLAGS + AGENT_FLAGS}
    merged = dict(TRAIN_DEFAULTS)
    if args.config is not None:
        for key, value in read_config_file(args.config).items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                merged[key] = types[key](value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from None
    for key in types:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def run_config_from(merged: dict):
    from .harness import RunConfig

    agent_keys = {n.replace("-", "_") for n, _, _ in AGENT_FLAGS}
    agent = {k: v for k, v in merged.items() if k in agent_keys}
    run = {k: v for k, v in merged.items() if k not in agent_keys}
    kwargs = {
        "env": run["env"], "algo": run["algo"], "strategy": run["strategy"],
        "total_steps": run["steps"], "out": run["out"], "agent": agent,
    }
    for key in ("seeds", "eval_interval", "eval_episodes", "workers", "smoothing_window", "wall_clock"):
        if key in run:
            kwargs[key] = run[key]
    try:
        cfg = RunConfig(**kwargs)
        from .envs import make_env

        make_env(cfg.env)
        cfg.agent_config().resolved()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def cmd_train(args) -> int:
    from .harness import RunFailure, run_experiment, summary_line

    cfg = run_config_from(merge_train_args(args))
    try:
        result = run_experiment(cfg)
    except RunFailure as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(summary_line(result))
    print(f"outputs in {cfg.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .agent import actor_from_checkpoint
    from .envs import make_env
    from .harness import evaluate

    if args.episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    try:
        env = make_env(args.env)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        actor, alpha, step = actor_from_checkpoint(args.checkpoint.read_bytes())
    except (OSError, ValueError) as exc:
        print(f"cannot load checkpoint: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if actor.spec.input_dim != env.spec.obs_dim:
        raise ConfigError(f"checkpoint expects observations of size {actor.spec.input_dim}")
    mean, std = evaluate(actor, env, args.episodes, args.seed)
    print(f"step {step} alpha {alpha:.4g}: return {mean:.2f} +- {std:.2f} over {args.episodes} episodes")
    return EXIT_OK


def cmd_tabular(args) -> int:
    from .envs import random_mdp
    from .tabular import run_convergence_experiment, value_iteration, write_convergence_csv

    try:
        mdp = random_mdp(args.seed, args.states, args.actions, gamma=args.gamma)
        res = run_convergence_experiment(mdp, args.strategy, steps=args.steps, seed=args.seed,
                                         record_every=args.record_every)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    q_norm = float(np.max(np.abs(res.q_star)))
    print(f"strategy {res.strategy.value}: final ||QA - Q*|| = {res.final_error:.4f} "
          f"(||Q*|| = {q_norm:.4f}, ratio {res.final_error / q_norm:.4f})")
    if args.csv is not None:
        write_convergence_csv(args.csv, [res])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(args.configs, args.seed)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} configurations passed")
    return EXIT_OK if failed == 0 else EXIT_FAILURE


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "tabular": cmd_tabular, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad usage already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points: train / eval / ablate / analyze.

Exit codes: 0 success, 2 configuration error, 3 data error (bad checkpoint,
missing recordings, dimension mismatch), 4 numerical failure during training.
Output root resolves from --out, then the METODS_OUT environment variable,
then ./runs.  Every run directory receives the resolved config echo and a
small JSON manifest describing what produced it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, metatrain
from .agent import init_agent
from .checkpoint import CheckpointError, load_checkpoint, restore_opt_state
from .config import ENV_DIMS, config_hash, echo_config, load_config, ConfigError
from .envs import random_policy_rollout
from .metatrain import TrainingAbort, derive_seed, eval_policy, summarize_episodes
from .numcore import NonFiniteGradientError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

ABLATION_VARIANTS = ("full", "s1", "alpha_off", "write_linear", "write_mlp")


def _out_root(arg_out: str | None, cfg_out: str) -> Path:
    if arg_out:
        return Path(arg_out)
    if cfg_out:
        return Path(cfg_out)
    env = os.environ.get("METODS_OUT")
    if env:
        return Path(env)
    return Path("runs")


def _run_id(rc) -> str:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return f"{stamp}-{config_hash(rc)[:8]}"


def _write_manifest(run_dir: Path, command: str, rc, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "experiment": rc.experiment,
        "seed": rc.seed,
        "config_hash": config_hash(rc),
        "argv": sys.argv[1:],
    }
    if extra:
        manifest.update(extra)
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _prepare_run_dir(root: Path, rc, command: str, extra: dict | None = None) -> Path:
    run_dir = root / _run_id(rc)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(echo_config(rc))
    _write_manifest(run_dir, command, rc, extra)
    return run_dir


def _variant_agent_config(base, variant: str):
    if variant == "full":
        return base
    if variant == "s1":
        return replace(base, depth=1)
    if variant == "alpha_off":
        return replace(base, alpha_mode="ones")
    if variant == "write_linear":
        return replace(base, write_rule="linear_projected")
    if variant == "write_mlp":
        return replace(base, write_rule="mlp_projected")
    raise ConfigError(f"unknown ablation variant {variant!r}")


def cmd_train(args) -> int:
    rc = load_config(args.config, args.override, args.seed, None)
    root = _out_root(args.out, rc.out)
    run_dir = _prepare_run_dir(root, rc, "train")
    params = init_agent(rc.agent, rc.seed)
    opt_state = None
    start = {"update": 0, "steps": 0, "episodes": 0}
    if args.checkpoint:
        data = load_checkpoint(args.checkpoint)
        if data.params.config != rc.agent:
            raise CheckpointError(
                "checkpoint agent configuration does not match the requested "
                f"config ({data.params.config} vs {rc.agent})")
        params = data.params
        opt_state = restore_opt_state(data)
        start = {"update": data.counters.get("update", 0),
                 "steps": data.counters.get("env_steps", 0),
                 "episodes": data.counters.get("episodes", 0)}
    result = metatrain.train(
        params, rc.env_factory(), rc.train, run_dir, opt_state=opt_state,
        start_update=start["update"], start_steps=start["steps"],
        start_episodes=start["episodes"], config_hash=config_hash(rc))
    print(f"run_dir: {run_dir}")
    print(f"updates: {result.updates}  env_steps: {result.env_steps}")
    last = result.last_eval or {}
    print(f"final eval: mean_reward={last.get('mean_reward', float('nan')):.3f} "
          f"success_rate={last.get('success_rate', float('nan')):.3f}")
    return EXIT_OK


def _experiment_for_checkpoint(config) -> str:
    for name, (obs_dim, n_actions) in ENV_DIMS.items():
        if config.obs_dim == obs_dim and config.n_actions == n_actions:
            return name
    raise CheckpointError(
        f"checkpoint dimensions (obs={config.obs_dim}, actions={config.n_actions}) "
        "match no known task")


def _episode_rows(trajs) -> list[dict]:
    rows = []
    for i, traj in enumerate(trajs):
        s = traj.summary
        rows.append({
            "episode": i,
            "task_seed": traj.task_seed,
            "steps": traj.length,
            "reward": f"{s['return']:.6f}",
            "success": int(s["success"]),
            "first_reward_step": s["first_reward_step"],
        })
    return rows


def _write_episode_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["episode", "task_seed", "steps", "reward",
                            "success", "first_reward_step"])
        writer.writeheader()
        writer.writerows(rows)


def cmd_eval(args) -> int:
    overrides = list(args.override)
    if args.random_baseline:
        rc = load_config(args.config, overrides, args.seed, None)
        if args.maze_size:
            rc.env.maze_size = args.maze_size
        root = _out_root(args.out, rc.out)
        run_dir = _prepare_run_dir(root, rc, "eval", {"random_baseline": True})
        factory = rc.env_factory()
        trajs = [random_policy_rollout(factory(derive_seed(rc.seed, 0xBA5E, i, 0)),
                                       derive_seed(rc.seed, 0xBA5E, i, 1))
                 for i in range(args.episodes)]
        summary = summarize_episodes(trajs)
        _write_episode_csv(run_dir / "eval_episodes.csv", _episode_rows(trajs))
        _print_eval_summary("random", args.episodes, summary)
        (run_dir / "eval_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        return EXIT_OK

    if not args.checkpoint:
        raise ConfigError("eval requires --checkpoint (or --random-baseline)")
    data = load_checkpoint(args.checkpoint)
    experiment = _experiment_for_checkpoint(data.params.config)
    overrides.append(f"run.experiment={experiment}")
    rc = load_config(args.config, overrides, args.seed, None)
    if rc.agent != data.params.config:
        rc.agent = data.params.config  # the checkpoint defines the architecture
    if args.maze_size:
        rc.env.maze_size = args.maze_size
    root = _out_root(args.out, rc.out)
    run_dir = _prepare_run_dir(root, rc, "eval", {
        "checkpoint": str(args.checkpoint),
        "maze_size": rc.env.maze_size if experiment == "maze" else None,
    })
    params = data.params
    record = args.record_count if args.record_weights else 0
    factory = rc.env_factory(maze_size=args.maze_size or None)
    summary, trajs = eval_policy(params, factory, args.episodes,
                                 derive_seed(rc.seed, 0xE7A1),
                                 record_episodes=record)
    _write_episode_csv(run_dir / "eval_episodes.csv", _episode_rows(trajs))
    (run_dir / "eval_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if record:
        rec_dir = run_dir / "recordings"
        rec_dir.mkdir(exist_ok=True)
        for i, traj in enumerate(trajs[:record]):
            analysis.save_recording(rec_dir / f"episode_{i:03d}.npz", traj,
                                    label=f"{experiment}-{traj.task_seed}")
        print(f"recordings: {rec_dir}")
    _print_eval_summary(experiment, args.episodes, summary)
    return EXIT_OK


def _print_eval_summary(tag: str, episodes: int, summary: dict) -> None:
    print(f"[{tag}] episodes={episodes} "
          f"mean_reward={summary['mean_reward']:.3f} "
          f"std_reward={summary['std_reward']:.3f} "
          f"success_rate={summary['success_rate']:.3f} "
          f"mean_first_reward={summary['mean_first_reward']:.1f}")


def cmd_ablate(args) -> int:
    rc = load_config(args.config, args.override, args.seed, None)
    seeds = rc.ablation_seeds or [rc.seed + i for i in range(3)]
    root = _out_root(args.out, rc.out)
    sweep_dir = _prepare_run_dir(root, rc, "ablate", {
        "variants": list(ABLATION_VARIANTS), "seeds": seeds})
    rows = []
    for variant in ABLATION_VARIANTS:
        agent_cfg = _variant_agent_config(rc.agent, variant)
        for seed in seeds:
            sub = sweep_dir / f"{variant}-s{seed}"
            sub.mkdir(exist_ok=True)
            params = init_agent(agent_cfg, seed)
            train_cfg = replace(rc.train, seed=seed)
            result = metatrain.train(params, rc.env_factory(), train_cfg, sub,
                                     config_hash=config_hash(rc))
            # paired final evaluation: every variant sees the same task seeds
            summary, _ = eval_policy(result.params, rc.env_factory(),
                                     rc.train.eval_episodes,
                                     derive_seed(rc.seed, 0xAB1E))
            rows.append({
                "variant": variant,
                "seed": seed,
                "mean_reward": f"{summary['mean_reward']:.6f}",
                "std_reward": f"{summary['std_reward']:.6f}",
                "success_rate": f"{summary['success_rate']:.6f}",
                "run_dir": sub.name,
            })
            print(f"[{variant} seed={seed}] mean_reward={rows[-1]['mean_reward']} "
                  f"success_rate={rows[-1]['success_rate']}")
    with open(sweep_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "seed", "mean_reward",
                                                "std_reward", "success_rate",
                                                "run_dir"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"sweep_dir: {sweep_dir}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    run_dir = Path(args.run)
    if not run_dir.exists():
        raise analysis.AnalysisDataError(f"run directory not found: {run_dir}")
    out_dir = Path(args.out) if args.out else run_dir / "analysis"
    written = analysis.analyze_run(run_dir, out_dir,
                                   k_components=args.components,
                                   n_selectivity=args.neurons)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metods",
        description="Meta-learned plastic-weight agents: train, evaluate, "
                    "ablate, and analyze.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_config=True):
        if with_config:
            p.add_argument("--config", type=Path, default=None,
                           help="INI config file")
            p.add_argument("--override", action="append", default=[],
                           metavar="SECTION.KEY=VALUE",
                           help="override a config value (repeatable)")
            p.add_argument("--seed", type=int, default=None,
                           help="override run.seed")
        p.add_argument("--out", type=str, default=None,
                       help="output root (default: run.out, $METODS_OUT, ./runs)")

    p_train = sub.add_parser("train", help="meta-train an agent")
    common(p_train)
    p_train.add_argument("--checkpoint", type=Path, default=None,
                         help="resume from a checkpoint")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint or random policy")
    common(p_eval)
    p_eval.add_argument("--checkpoint", type=Path, default=None)
    p_eval.add_argument("--episodes", type=int, default=500)
    p_eval.add_argument("--maze-size", type=int, default=0,
                        help="evaluate on a different board size")
    p_eval.add_argument("--random-baseline", action="store_true",
                        help="evaluate the uniform random policy instead")
    p_eval.add_argument("--record-weights", action="store_true",
                        help="save weight/activation recordings for analysis")
    p_eval.add_argument("--record-count", type=int, default=8,
                        help="how many episodes to record")
    p_eval.set_defaults(func=cmd_eval)

    p_abl = sub.add_parser("ablate", help="train rule-variant sweeps on shared seeds")
    common(p_abl)
    p_abl.set_defaults(func=cmd_ablate)

    p_ana = sub.add_parser("analyze", help="compute PCA/energy/variation reports")
    p_ana.add_argument("--run", type=Path, required=True,
                       help="run directory containing recordings/")
    p_ana.add_argument("--out", type=str, default=None)
    p_ana.add_argument("--components", type=int, default=2)
    p_ana.add_argument("--neurons", type=int, default=8)
    p_ana.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, analysis.AnalysisDataError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingAbort, NonFiniteGradientError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

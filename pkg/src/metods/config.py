"""Run configuration: flat INI-style sections with a strict schema.

A config file has up to four sections — [run], [agent], [env], [train] — and
every key must appear in the schema below; unknown sections or keys are
rejected with the offending name.  Values resolve in this order: built-in
defaults, experiment preset (``run.experiment`` is the only required key),
file values, ``--override section.key=value`` pairs, then the --seed/--out
convenience flags.  The fully resolved config can be echoed back out and
reloaded to an identical configuration, and its hash names the run.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .agent import AgentConfig
from .metatrain import TrainConfig


class ConfigError(ValueError):
    """Invalid, unknown, or missing configuration field."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default); None default means "filled by experiment preset"
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "experiment": (str, None),
        "seed": (int, 0),
        "out": (str, ""),
        "workers": (int, 0),            # 0 = all cores; execution order is
                                        # fixed so results never depend on it
        "ablation_seeds": (str, ""),
    },
    "agent": {
        "n": (int, None),
        "depth": (int, 2),
        "write_rule": (str, "hebbian"),
        "w0_mode": (str, None),
        "w0_std": (float, 1e-3),
        "alpha_mode": (str, "learned"),
        "alpha_std": (float, 1e-3),
        "coeff_std": (float, 1e-2),
        "embed_hidden": (int, 32),
        "readout_hidden": (int, 32),
        "input_pad": (int, 0),
    },
    "env": {
        "maze_size": (int, 8),
        "horizon": (int, 0),            # 0 = task default (250 line / 100 maze)
    },
    "train": {
        "learning_rate": (float, 5e-4),
        "meta_batch_size": (int, None),
        "discount": (float, None),
        "gae_lambda": (float, None),
        "value_coeff": (float, 0.4),
        "entropy_coeff": (float, None),
        "total_steps": (int, None),
        "eval_every": (int, 50),
        "eval_episodes": (int, 160),
        "advantage_norm": (_bool, True),
        "grad_clip": (float, 0.5),
        "checkpoint_every": (int, 200),
        "stop_success": (float, 0.0),
        "stop_patience": (int, 2),
    },
}

PRESETS: dict[str, dict[str, dict]] = {
    "harlow": {
        "agent": {"n": 20, "w0_mode": "sampled"},
        "train": {"meta_batch_size": 50, "discount": 0.9, "gae_lambda": 1.0,
                  "entropy_coeff": 3e-2, "total_steps": 3_000_000},
    },
    "maze": {
        "agent": {"n": 200, "w0_mode": "learned"},
        "train": {"meta_batch_size": 20, "discount": 0.99, "gae_lambda": 0.95,
                  "entropy_coeff": 1e-2, "total_steps": 2_000_000},
    },
}

ENV_DIMS = {"harlow": (8, 2), "maze": (9, 4)}   # (obs_dim, n_actions)


@dataclass
class EnvConfig:
    maze_size: int = 8
    horizon: int = 0


@dataclass
class RunConfig:
    experiment: str
    seed: int
    out: str
    workers: int
    ablation_seeds: list = field(default_factory=list)
    agent: AgentConfig = None
    env: EnvConfig = None
    train: TrainConfig = None

    def env_factory(self, maze_size: int | None = None):
        """Seed -> fresh environment; optional size override for
        generalization evaluations."""
        from .envs import HarlowEnv, generate_maze

        if self.experiment == "harlow":
            if self.env.horizon > 0:
                horizon = self.env.horizon
                return lambda seed: HarlowEnv(seed, horizon=horizon)
            return lambda seed: HarlowEnv(seed)
        size = maze_size if maze_size is not None else self.env.maze_size
        horizon = self.env.horizon
        if horizon > 0:
            return lambda seed: generate_maze(seed, size, horizon=horizon)
        return lambda seed: generate_maze(seed, size)


def _resolved_values(path: Path | str | None, overrides=(), seed: int | None = None,
                     out: str | None = None) -> dict[str, dict[str, str]]:
    """Raw string values per section after defaults/preset/file/overrides."""
    file_vals: dict[str, dict[str, str]] = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        read = parser.read(str(path))
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            file_vals[section] = {}
            for key, value in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                file_vals[section][key] = value

    exp = file_vals.get("run", {}).get("experiment")
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override must be section.key=value: {ov!r}")
        lhs, _ = ov.split("=", 1)
        if lhs.strip() == "run.experiment":
            exp = ov.split("=", 1)[1].strip()
    if exp is None:
        raise ConfigError("missing required key run.experiment")
    if exp not in PRESETS:
        raise ConfigError(f"run.experiment must be one of {sorted(PRESETS)}, "
                          f"got {exp!r}")

    values: dict[str, dict[str, str]] = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (_, default) in keys.items():
            preset = PRESETS[exp].get(section, {}).get(key, default)
            if preset is None and not (section == "run" and key == "experiment"):
                raise ConfigError(f"no default for {section}.{key}")
            values[section][key] = "" if preset is None else str(preset)
    values["run"]["experiment"] = exp
    for section, kv in file_vals.items():
        values[section].update(kv)

    for ov in overrides:
        lhs, rhs = ov.split("=", 1)
        lhs = lhs.strip()
        if "." not in lhs:
            raise ConfigError(f"override key must be section.key, got {lhs!r}")
        section, key = lhs.split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        values[section][key] = rhs.strip()
    if seed is not None:
        values["run"]["seed"] = str(seed)
    if out is not None:
        values["run"]["out"] = out
    return values


def _parse(values: dict[str, dict[str, str]]) -> dict[str, dict]:
    parsed: dict[str, dict] = {}
    for section, keys in SCHEMA.items():
        parsed[section] = {}
        for key, (parse, _) in keys.items():
            raw = values[section][key]
            try:
                parsed[section][key] = parse(raw)
            except ValueError as err:
                raise ConfigError(
                    f"bad value for {section}.{key}: {raw!r} ({err})") from None
    return parsed


def load_config(path: Path | str | None = None, overrides=(),
                seed: int | None = None, out: str | None = None) -> RunConfig:
    values = _resolved_values(path, overrides, seed, out)
    p = _parse(values)
    exp = p["run"]["experiment"]
    obs_dim, n_actions = ENV_DIMS[exp]
    agent = AgentConfig(
        n=p["agent"]["n"], obs_dim=obs_dim, n_actions=n_actions,
        depth=p["agent"]["depth"], embed_hidden=p["agent"]["embed_hidden"],
        readout_hidden=p["agent"]["readout_hidden"],
        write_rule=p["agent"]["write_rule"], w0_mode=p["agent"]["w0_mode"],
        w0_std=p["agent"]["w0_std"], alpha_mode=p["agent"]["alpha_mode"],
        alpha_std=p["agent"]["alpha_std"], coeff_std=p["agent"]["coeff_std"],
        input_pad=p["agent"]["input_pad"])
    train = TrainConfig(seed=p["run"]["seed"], workers=max(1, p["run"]["workers"])
                        if p["run"]["workers"] else (os.cpu_count() or 1),
                        **{f.name: p["train"][f.name] for f in fields(TrainConfig)
                           if f.name in p["train"]})
    ab = [int(s) for s in p["run"]["ablation_seeds"].split(",") if s.strip()] \
        if p["run"]["ablation_seeds"].strip() else []
    rc = RunConfig(experiment=exp, seed=p["run"]["seed"], out=p["run"]["out"],
                   workers=train.workers, ablation_seeds=ab, agent=agent,
                   env=EnvConfig(maze_size=p["env"]["maze_size"],
                                 horizon=p["env"]["horizon"]),
                   train=train)
    try:
        rc.agent.validate()
        rc.train.validate()
    except ValueError as err:
        raise ConfigError(str(err)) from None
    if rc.env.maze_size < 4:
        raise ConfigError("env.maze_size must be >= 4")
    return rc


def echo_config(rc: RunConfig) -> str:
    """Canonical resolved text; reloading it yields an identical RunConfig."""
    agent_keys = {
        "n": rc.agent.n, "depth": rc.agent.depth,
        "write_rule": rc.agent.write_rule, "w0_mode": rc.agent.w0_mode,
        "w0_std": rc.agent.w0_std, "alpha_mode": rc.agent.alpha_mode,
        "alpha_std": rc.agent.alpha_std, "coeff_std": rc.agent.coeff_std,
        "embed_hidden": rc.agent.embed_hidden,
        "readout_hidden": rc.agent.readout_hidden,
        "input_pad": rc.agent.input_pad,
    }
    train_keys = {f.name: getattr(rc.train, f.name) for f in fields(TrainConfig)
                  if f.name in SCHEMA["train"]}
    run_keys = {
        "experiment": rc.experiment, "seed": rc.seed, "out": rc.out,
        "workers": rc.workers,
        "ablation_seeds": ",".join(str(s) for s in rc.ablation_seeds),
    }
    env_keys = {"maze_size": rc.env.maze_size, "horizon": rc.env.horizon}
    buf = io.StringIO()
    for section, kv in (("run", run_keys), ("agent", agent_keys),
                        ("env", env_keys), ("train", train_keys)):
        buf.write(f"[{section}]\n")
        for key in sorted(kv):
            value = kv[key]
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            buf.write(f"{key} = {value}\n")
        buf.write("\n")
    return buf.getvalue()


def config_hash(rc: RunConfig) -> str:
    return hashlib.sha256(echo_config(rc).encode("utf-8")).hexdigest()

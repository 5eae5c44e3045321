"""Configuration resolution and the command-line entry points."""

from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from metods.checkpoint import load_checkpoint
from metods.cli import (
    ABLATION_VARIANTS,
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_OK,
    _out_root,
    _variant_agent_config,
    main,
)
from metods.config import (
    ConfigError,
    config_hash,
    echo_config,
    load_config,
)
from metods.envs import HarlowEnv, MazeEnv


def write_ini(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------


def test_harlow_preset_defaults():
    rc = load_config(overrides=["run.experiment=harlow"])
    assert rc.experiment == "harlow"
    assert rc.agent.n == 20
    assert rc.agent.w0_mode == "sampled"
    assert (rc.agent.obs_dim, rc.agent.n_actions) == (8, 2)
    assert rc.train.meta_batch_size == 50
    assert rc.train.discount == 0.9
    assert rc.train.gae_lambda == 1.0
    assert rc.train.entropy_coeff == 3e-2
    assert rc.train.total_steps == 3_000_000
    assert rc.train.learning_rate == 5e-4


def test_maze_preset_defaults():
    rc = load_config(overrides=["run.experiment=maze"])
    assert rc.agent.n == 200
    assert rc.agent.w0_mode == "learned"
    assert (rc.agent.obs_dim, rc.agent.n_actions) == (9, 4)
    assert rc.train.discount == 0.99
    assert rc.train.gae_lambda == 0.95
    assert rc.env.maze_size == 8


def test_file_values_override_preset(tmp_path):
    path = write_ini(tmp_path, """\
[run]
experiment = harlow
seed = 5
[agent]
n = 6
depth = 1
[train]
meta_batch_size = 4
advantage_norm = off
""")
    rc = load_config(path)
    assert rc.seed == 5
    assert rc.agent.n == 6
    assert rc.agent.depth == 1
    assert rc.train.meta_batch_size == 4
    assert rc.train.advantage_norm is False
    assert rc.train.discount == 0.9  # untouched preset value


def test_precedence_override_beats_file_and_seed_flag_wins(tmp_path):
    path = write_ini(tmp_path, "[run]\nexperiment = harlow\nseed = 5\n"
                               "[agent]\nn = 6\n")
    rc = load_config(path, overrides=["agent.n=12", "run.seed=7"], seed=9)
    assert rc.agent.n == 12
    assert rc.seed == 9
    assert rc.train.seed == 9


def test_override_can_set_the_experiment(tmp_path):
    path = write_ini(tmp_path, "[run]\nexperiment = harlow\n")
    rc = load_config(path, overrides=["run.experiment=maze"])
    assert rc.experiment == "maze"
    assert rc.agent.n == 200


def test_echo_round_trip_is_identical(tmp_path):
    rc = load_config(overrides=["run.experiment=maze", "agent.n=16",
                                "train.stop_success=0.6",
                                "run.ablation_seeds=3,5,8"])
    text = echo_config(rc)
    path = write_ini(tmp_path, text, name="echo.ini")
    rc2 = load_config(path)
    assert echo_config(rc2) == text
    assert config_hash(rc2) == config_hash(rc)
    assert rc2.agent == rc.agent
    assert rc2.train == rc.train
    assert rc2.env == rc.env
    assert rc2.ablation_seeds == [3, 5, 8]


def test_config_hash_tracks_content():
    a = load_config(overrides=["run.experiment=harlow"])
    b = load_config(overrides=["run.experiment=harlow"], seed=1)
    assert config_hash(a) == config_hash(load_config(
        overrides=["run.experiment=harlow"]))
    assert config_hash(a) != config_hash(b)
    assert len(config_hash(a)) == 64


def test_boolean_parsing_accepts_common_spellings():
    for raw, want in (("yes", True), ("ON", True), ("0", False), ("no", False)):
        rc = load_config(overrides=["run.experiment=harlow",
                                    f"train.advantage_norm={raw}"])
        assert rc.train.advantage_norm is want


@pytest.mark.parametrize("setup, message", [
    (dict(), "missing required key run.experiment"),
    (dict(overrides=["run.experiment=banana"]), "run.experiment must be one"),
    (dict(overrides=["run.experiment=harlow", "agent.n=abc"]),
     "bad value for agent.n"),
    (dict(overrides=["run.experiment=harlow", "train.advantage_norm=maybe"]),
     "bad value for train.advantage_norm"),
    (dict(overrides=["run.experiment=harlow", "agent.bogus=1"]),
     "unknown config key agent.bogus"),
    (dict(overrides=["run.experiment=harlow", "nodot"]),
     "override must be section.key=value"),
    (dict(overrides=["run.experiment=harlow", "depth=3"]),
     "override key must be section.key"),
    (dict(overrides=["run.experiment=harlow", "agent.depth=0"]),
     "depth"),
    (dict(overrides=["run.experiment=maze", "env.maze_size=3"]),
     "maze_size must be >= 4"),
])
def test_config_error_messages(setup, message):
    with pytest.raises(ConfigError, match=message):
        load_config(**setup)


def test_unknown_file_sections_and_keys(tmp_path):
    with pytest.raises(ConfigError, match=r"unknown config section \[bogus\]"):
        load_config(write_ini(tmp_path, "[bogus]\nx = 1\n"))
    with pytest.raises(ConfigError, match="unknown config key train.banana"):
        load_config(write_ini(tmp_path,
                              "[run]\nexperiment = harlow\n"
                              "[train]\nbanana = 1\n", name="b.ini"))
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.ini")


def test_env_factories_produce_seeded_tasks():
    harlow = load_config(overrides=["run.experiment=harlow"])
    env = harlow.env_factory()(123)
    assert isinstance(env, HarlowEnv)
    assert env.seed == 123

    maze = load_config(overrides=["run.experiment=maze", "env.maze_size=6"])
    env = maze.env_factory()(5)
    assert isinstance(env, MazeEnv)
    assert env.wall.shape == (6, 6)
    big = maze.env_factory(maze_size=10)(5)
    assert big.wall.shape == (10, 10)


def test_env_factory_honors_horizon_override():
    rc = load_config(overrides=["run.experiment=maze", "env.horizon=30"])
    assert rc.env_factory()(2).horizon == 30
    rc = load_config(overrides=["run.experiment=harlow", "env.horizon=12"])
    assert rc.env_factory()(2).horizon == 12


def test_ablation_variant_table():
    base = load_config(overrides=["run.experiment=maze"]).agent
    assert _variant_agent_config(base, "full") == base
    assert _variant_agent_config(base, "s1").depth == 1
    assert _variant_agent_config(base, "alpha_off").alpha_mode == "ones"
    assert _variant_agent_config(base, "write_linear").write_rule == \
        "linear_projected"
    assert _variant_agent_config(base, "write_mlp").write_rule == \
        "mlp_projected"
    with pytest.raises(ConfigError, match="unknown ablation variant"):
        _variant_agent_config(base, "bogus")
    assert ABLATION_VARIANTS == ("full", "s1", "alpha_off", "write_linear",
                                 "write_mlp")


def test_out_root_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("METODS_OUT", str(tmp_path / "env"))
    assert str(_out_root("arg", "cfg")) == "arg"
    assert str(_out_root(None, "cfg")) == "cfg"
    assert _out_root(None, "") == tmp_path / "env"
    monkeypatch.delenv("METODS_OUT")
    assert str(_out_root(None, "")) == "runs"


# ---------------------------------------------------------------------------
# Command-line behaviour
# ---------------------------------------------------------------------------

SMOKE_OVERRIDES = [
    "--override", "run.experiment=maze",
    "--override", "agent.n=8",
    "--override", "agent.embed_hidden=8",
    "--override", "agent.readout_hidden=8",
    "--override", "train.meta_batch_size=2",
    "--override", "train.total_steps=400",
    "--override", "train.eval_every=1",
    "--override", "train.eval_episodes=2",
]


@pytest.fixture(scope="module")
def cli_train_run(tmp_path_factory):
    """One tiny CLI training run shared by the post-training tests."""
    root = tmp_path_factory.mktemp("cli-train")
    code = main(["train", "--seed", "0", "--out", str(root)] + SMOKE_OVERRIDES)
    assert code == EXIT_OK
    [run_dir] = [p for p in root.iterdir() if p.is_dir()]
    return run_dir


def test_cli_requires_a_subcommand(capsys):
    with pytest.raises(SystemExit):
        main([])
    assert "command" in capsys.readouterr().err


def test_cli_train_smoke(cli_train_run, capsys):
    run_dir = cli_train_run
    assert (run_dir / "config.ini").exists()
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["experiment"] == "maze"
    assert manifest["config_hash"] == config_hash(load_config(run_dir / "config.ini"))

    metrics = read_rows(run_dir / "metrics.csv")
    assert len(metrics) == 2  # 2 episodes x 100 steps per update, 400 total
    assert int(metrics[-1]["step"]) == 400
    assert len(read_rows(run_dir / "eval.csv")) >= 1

    data = load_checkpoint(run_dir / "checkpoint_final.bin")
    assert data.counters["update"] == 2
    assert data.counters["env_steps"] == 400
    assert data.params.config.n == 8


def test_cli_train_resume_continues_the_counters(cli_train_run, tmp_path):
    overrides = SMOKE_OVERRIDES[:-6] + [
        "--override", "train.total_steps=800",
        "--override", "train.eval_every=0",
        "--override", "train.eval_episodes=2",
    ]
    code = main(["train", "--seed", "0", "--out", str(tmp_path),
                 "--checkpoint", str(cli_train_run / "checkpoint_final.bin")]
                + overrides)
    assert code == EXIT_OK
    run_dir = next(p for p in tmp_path.iterdir() if p.is_dir())
    data = load_checkpoint(run_dir / "checkpoint_final.bin")
    # picks up at update 2 / step 400 and trains on to the 800-step budget
    assert data.counters["update"] == 4
    assert data.counters["env_steps"] == 800
    metrics = read_rows(run_dir / "metrics.csv")
    assert [int(r["update"]) for r in metrics] == [3, 4]
    assert int(metrics[-1]["step"]) == 800


def test_cli_train_rejects_mismatched_resume_checkpoint(cli_train_run, tmp_path,
                                                        capsys):
    code = main(["train", "--seed", "0", "--out", str(tmp_path),
                 "--checkpoint", str(cli_train_run / "checkpoint_final.bin")]
                + SMOKE_OVERRIDES + ["--override", "agent.n=7"])
    assert code == EXIT_DATA
    assert "does not match" in capsys.readouterr().err


def test_cli_eval_checkpoint_records_and_analyzes(cli_train_run, tmp_path,
                                                  capsys):
    code = main(["eval", "--checkpoint",
                 str(cli_train_run / "checkpoint_final.bin"),
                 "--episodes", "3", "--seed", "1", "--out", str(tmp_path),
                 "--record-weights", "--record-count", "2"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "[maze]" in out and "episodes=3" in out

    [run_dir] = [p for p in tmp_path.iterdir() if p.is_dir()]
    rows = read_rows(run_dir / "eval_episodes.csv")
    assert len(rows) == 3
    assert all(int(r["steps"]) == 100 for r in rows)
    summary = json.loads((run_dir / "eval_summary.json").read_text())
    assert {"mean_reward", "std_reward", "success_rate",
            "mean_first_reward"} <= set(summary)
    recordings = sorted((run_dir / "recordings").glob("episode_*.npz"))
    assert len(recordings) == 2

    code = main(["analyze", "--run", str(run_dir), "--neurons", "3"])
    assert code == EXIT_OK
    written = capsys.readouterr().out
    files = sorted((run_dir / "analysis").glob("selectivity_*.csv"))
    assert len(files) == 3  # maze recordings carry positions
    assert all(str(p) in written for p in files)


def test_cli_eval_requires_a_source(capsys):
    assert main(["eval", "--episodes", "2"]) == EXIT_CONFIG
    assert "--random-baseline" in capsys.readouterr().err


def test_cli_eval_rejects_garbage_checkpoint(tmp_path, capsys):
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"definitely not a checkpoint")
    code = main(["eval", "--checkpoint", str(junk), "--out", str(tmp_path)])
    assert code == EXIT_DATA
    assert "bad magic" in capsys.readouterr().err


def test_cli_random_baseline(tmp_path, capsys):
    code = main(["eval", "--random-baseline", "--episodes", "30",
                 "--seed", "0", "--out", str(tmp_path),
                 "--override", "run.experiment=maze"])
    assert code == EXIT_OK
    assert "[random]" in capsys.readouterr().out
    [run_dir] = [p for p in tmp_path.iterdir() if p.is_dir()]
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["random_baseline"] is True
    rows = read_rows(run_dir / "eval_episodes.csv")
    assert len(rows) == 30
    assert all(int(r["steps"]) == 100 for r in rows)
    summary = json.loads((run_dir / "eval_summary.json").read_text())
    assert 0.0 <= summary["success_rate"] <= 0.5


def test_cli_config_error_exit_code(tmp_path, capsys):
    code = main(["train", "--config", str(tmp_path / "missing.ini")])
    assert code == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_cli_analyze_missing_run_dir(tmp_path, capsys):
    code = main(["analyze", "--run", str(tmp_path / "nope")])
    assert code == EXIT_DATA
    assert "not found" in capsys.readouterr().err


def test_cli_out_root_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("METODS_OUT", str(tmp_path / "from-env"))
    code = main(["eval", "--random-baseline", "--episodes", "2", "--seed", "3",
                 "--override", "run.experiment=maze"])
    assert code == EXIT_OK
    capsys.readouterr()
    assert (tmp_path / "from-env").is_dir()


def test_cli_ablate_smoke(tmp_path, capsys):
    code = main(["ablate", "--seed", "0", "--out", str(tmp_path),
                 "--override", "run.experiment=maze",
                 "--override", "agent.n=6",
                 "--override", "agent.embed_hidden=6",
                 "--override", "agent.readout_hidden=6",
                 "--override", "train.meta_batch_size=1",
                 "--override", "train.total_steps=100",
                 "--override", "train.eval_every=50",
                 "--override", "train.eval_episodes=2",
                 "--override", "run.ablation_seeds=0"])
    assert code == EXIT_OK
    capsys.readouterr()
    [sweep_dir] = [p for p in tmp_path.iterdir() if p.is_dir()]
    rows = read_rows(sweep_dir / "ablation.csv")
    assert [r["variant"] for r in rows] == list(ABLATION_VARIANTS)
    assert all(r["seed"] == "0" for r in rows)
    for row in rows:
        sub = sweep_dir / row["run_dir"]
        assert (sub / "metrics.csv").exists()
        assert (sub / "checkpoint_final.bin").exists()
        float(row["mean_reward"])


def test_console_script_is_installed():
    proc = subprocess.run(["metods", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("train", "eval", "ablate", "analyze"):
        assert sub in proc.stdout
    assert sys.executable  # sanity: running under the same interpreter family

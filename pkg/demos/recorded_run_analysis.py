"""
From recorded episodes to analysis tables
=========================================

Evaluation can keep per-step snapshots of the plastic weights and
activations.  The analysis tools turn a directory of such recordings into
plain CSV tables: a PCA of the weight trajectories, per-synapse variation
statistics, an energy landscape around the visited activations, and (for
grid tasks) spatial selectivity maps.

This script builds a tiny recorded run for each task family with an
untrained agent, runs the full analysis, and prints what came out.  The
same tables appear under ``analysis/`` of a real run after

    metods eval --checkpoint <ckpt> --record-weights ...
    metods analyze <run_dir>
"""

import tempfile
from pathlib import Path

from metods.agent import AgentConfig, init_agent
from metods.analysis import analyze_run, save_recording
from metods.envs import HarlowEnv, generate_maze
from metods.metatrain import eval_policy


def record_run(params, env_factory, episodes, label):
    """Evaluate with snapshots on and lay the files out like the CLI does."""
    run_dir = Path(tempfile.mkdtemp(prefix="metods-demo-"))
    rec_dir = run_dir / "recordings"
    rec_dir.mkdir()
    _, trajs = eval_policy(params, env_factory, episodes, seed=42,
                           record_episodes=episodes)
    for traj in trajs:
        save_recording(rec_dir / f"episode_{traj.episode_index:03d}.npz",
                       traj, label=f"{label}-{traj.task_seed}")
    return run_dir


def show(run_dir):
    for csv in sorted(run_dir.glob("*.csv")):
        lines = csv.read_text().splitlines()
        print(f"  {csv.name}: {len(lines) - 1} rows")
        print(f"    {lines[0]}")
        print(f"    {lines[1]}")


# ---------------------------------------------------------------------
# association task: weight-space analyses
# ---------------------------------------------------------------------
# Episodes from the 1-d association task carry no positions, so the
# analysis focuses on the weight matrix itself.
config = AgentConfig(n=20, obs_dim=8, n_actions=2)
params = init_agent(config, seed=5)

run_dir = record_run(params, HarlowEnv, episodes=6, label="assoc")
written = analyze_run(run_dir)
print(f"association run -> {len(written)} files in {run_dir}")
show(run_dir)

# pca.csv traces every episode through the two principal weight axes;
# energy_grid.csv samples the quadratic energy on that plane.  The
# variation report flags which synapses moved most between rewards.
report = (run_dir / "variation_report.txt").read_text().splitlines()
print("  variation_report.txt:")
for line in report[:4]:
    print(f"    {line}")

# ---------------------------------------------------------------------
# maze task: spatial selectivity
# ---------------------------------------------------------------------
# Maze episodes record the agent's cell at every step, so the analysis
# correlates each neuron's activation with the visited locations instead.
config = AgentConfig(n=20, obs_dim=9, n_actions=4)
params = init_agent(config, seed=5)

run_dir = record_run(params, lambda seed: generate_maze(seed, size=8),
                     episodes=6, label="maze")
written = analyze_run(run_dir, n_selectivity=3)
print(f"\nmaze run -> {len(written)} files in {run_dir}")
show(run_dir)
print("  (one selectivity_<i>.csv per neuron, most selective first;")
print("   blank mean_activation marks never-visited cells)")

# Render any of these with the companion plotting package, e.g.
#   metods-plots render --kind selectivity --in selectivity_0.csv --out maps.png

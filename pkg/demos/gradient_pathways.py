"""
Two routes to the same gradient
===============================

Training differentiates through every self-modification the plastic layer
performed during an episode.  The package offers two ways to do that:

* replay the episode on a tape and run reverse-mode backprop, which keeps
  every intermediate weight matrix alive at once, or
* an adjoint sweep that walks the weight trajectory backwards from a few
  checkpointed matrices, recomputing short segments on the fly.

They must agree to machine precision for any retention schedule.  This
script rolls one maze episode with an untrained agent and checks that.
"""

import time

import numpy as np

from metods.adjoint import adjoint_gradient, make_schedule
from metods.agent import AgentConfig, init_agent
from metods.envs import generate_maze
from metods.metatrain import TrainConfig, batch_gradient, rollout_episode
from metods.numcore import rng_from

# ---------------------------------------------------------------------
# one recorded episode
# ---------------------------------------------------------------------
config = AgentConfig(n=12, obs_dim=9, n_actions=4, depth=2,
                     embed_hidden=16, readout_hidden=16)
params = init_agent(config, seed=1)

env = generate_maze(seed=3, size=6, horizon=48)
traj = rollout_episode(params, env, rng_from([0, 1]), task_seed=3)
T = traj.length
print(f"episode: {T} steps, return {traj.episode_return():+.2f}")

# advantage normalization pools over a batch, so switch it off to make the
# single-episode losses of the two pathways identical
train_cfg = TrainConfig(seed=0, advantage_norm=False)

# ---------------------------------------------------------------------
# reference: full reverse-mode pass over the taped replay
# ---------------------------------------------------------------------
t0 = time.perf_counter()
full = batch_gradient(params, [traj], train_cfg)
t_full = time.perf_counter() - t0
print(f"\nfull tape      : loss {full.loss:+.6f}, "
      f"grad norm {full.grad_norm:.6f}  ({t_full * 1e3:.0f} ms)")

# ---------------------------------------------------------------------
# adjoint sweep under increasingly tight memory budgets
# ---------------------------------------------------------------------
# The budget counts how many weight matrices may be held at once.  T+1
# means "keep everything" (plain backprop through time); 2 is the floor.
for budget in (T + 1, int(round(np.sqrt(T))), 2):
    schedule = make_schedule(T, budget)
    t0 = time.perf_counter()
    est = adjoint_gradient(params, traj, train_cfg, schedule)
    dt = time.perf_counter() - t0
    worst = max(
        np.max(np.abs(est.grads[name] - full.grads[name]))
        / (np.max(np.abs(full.grads[name])) + 1e-30)
        for name in full.grads
    )
    held = len(schedule.checkpoints) + schedule.max_segment
    print(f"budget {budget:3d} (peak {held:2d} matrices live): "
          f"max rel deviation {worst:.2e}  ({dt * 1e3:.0f} ms)")

print("\nthe recomputation schedule changes memory and wall time only;")
print("the gradients are identical to floating-point precision.")

"""Seeded task environments.

Both environments follow one small protocol:

* construction (or ``reset``) fully seeds the episode,
* ``observation`` is the current float64 observation vector,
* ``step_index(a)`` advances one timestep with an action index in
  ``range(n_actions)`` and returns a :class:`StepResult`,
* ``done`` / ``truncated`` / ``steps`` describe episode progress,
* ``episode_summary()`` reports per-episode metrics once done.

Native action sets (``{-1, +1}`` for the line task, up/down/left/right for the
maze) stay available on each concrete class via ``step``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numcore import rng_from

__all__ = [
    "StepResult",
    "HarlowEnv",
    "MazeEnv",
    "MazeGenerationError",
    "generate_maze",
    "random_policy_rollout",
]


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


def random_policy_rollout(env, seed: int):
    """Roll one episode with uniform-random actions; the baseline agent.

    Returns a :class:`metods.metatrain.Trajectory` whose log-probs are the
    uniform ones and whose value estimates are zero.
    """
    from ..metatrain import Trajectory

    rng = rng_from([seed, 0x5EED])
    n = env.n_actions
    logp = float(np.log(1.0 / n))
    obs = [env.observation.copy()]
    actions, rewards, log_probs, values = [], [], [], []
    while not env.done:
        a = int(rng.integers(n))
        res = env.step_index(a)
        actions.append(a)
        rewards.append(res.reward)
        log_probs.append(logp)
        values.append(0.0)
        obs.append(res.observation.copy())
    return Trajectory(
        task_seed=seed,
        observations=obs,
        actions=actions,
        rewards=rewards,
        log_probs=log_probs,
        values=values,
        truncated=env.truncated,
        bootstrap_value=0.0,
        summary=env.episode_summary(),
    )


from .harlow import HarlowEnv  # noqa: E402
from .maze import MazeEnv, MazeGenerationError, generate_maze  # noqa: E402

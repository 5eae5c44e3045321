"""One-dimensional value-association task.

A 17-cell line with a fixation cell at the center (index 8) and two value
cells three positions to either side (indices 5 and 11).  An episode draws two
distinct item ids in [0, 10] and secretly maps one to reward +1, the other to
-1.  The episode is five trials: during a trial the two items occupy the value
cells (sides permuted per trial); stepping onto one collects its reward and
ends the trial.  Between trials the agent must return to the fixation cell,
which pays +0.2 once and starts the next trial.  Actions move the agent one
cell left (-1) or right (+1), clamped at the line ends; the episode ends after
the fifth trial or 250 steps.

The observation is the 8 cells at offsets +-1..+-4 around the agent (the
agent's own cell excluded).  During a trial the value cells carry their item
id normalized to [0, 1]; during the between-trial phase the fixation cell
carries the marker -1.0; everything else reads 0.  Ids are therefore visible
from the starting position (offsets +-3 lie inside the field), which is what
makes one-shot association possible.
"""

from __future__ import annotations

import numpy as np

from ..numcore import rng_from
from . import StepResult

LINE_LENGTH = 17
FIXATION_CELL = 8
VALUE_CELLS = (5, 11)
FIELD_OFFSETS = (-4, -3, -2, -1, 1, 2, 3, 4)
N_IDS = 11              # item ids 0..10
N_TRIALS = 5
HORIZON = 250
FIXATION_REWARD = 0.2

PHASE_TRIAL = "trial"
PHASE_FIXATION = "fixation"


class HarlowEnv:
    """Seeded five-trial association episode."""

    n_actions = 2
    action_values = (-1, +1)
    obs_dim = len(FIELD_OFFSETS)

    def __init__(self, seed: int, horizon: int = HORIZON):
        self.seed = int(seed)
        self.horizon = int(horizon)
        rng = rng_from([self.seed, 0x4A12])
        ids = rng.choice(N_IDS, size=2, replace=False)
        plus = int(rng.integers(2))
        self.value_ids = (int(ids[0]), int(ids[1]))
        self.reward_map = {
            self.value_ids[plus]: 1.0,
            self.value_ids[1 - plus]: -1.0,
        }
        # one side-permutation bit per trial, drawn up front so the episode
        # is a pure function of the seed and the action sequence
        self.permutations = tuple(int(b) for b in rng.integers(0, 2, size=N_TRIALS))
        self.agent_pos = FIXATION_CELL
        self.phase = PHASE_TRIAL
        self.completed_trials = 0
        self.steps = 0
        self.done = False
        self.truncated = False
        self._trial_correct: list[bool] = []
        self._fixation_rewards = 0
        self._return = 0.0
        self._first_value_step: int | None = None
        self._obs = self._encode()

    # -- layout ---------------------------------------------------------

    @property
    def trial_index(self) -> int:
        """Current (phase=trial) or upcoming (phase=fixation) trial, 0..4."""
        return min(self.completed_trials, N_TRIALS - 1)

    def _sides(self) -> dict[int, int]:
        """cell -> item id for the current trial's layout."""
        b = self.permutations[self.trial_index]
        return {VALUE_CELLS[0]: self.value_ids[b],
                VALUE_CELLS[1]: self.value_ids[1 - b]}

    def _encode(self) -> np.ndarray:
        x = np.zeros(len(FIELD_OFFSETS))
        sides = self._sides() if self.phase == PHASE_TRIAL else {}
        for k, off in enumerate(FIELD_OFFSETS):
            cell = self.agent_pos + off
            if not 0 <= cell < LINE_LENGTH:
                continue
            if self.phase == PHASE_TRIAL and cell in sides:
                x[k] = sides[cell] / (N_IDS - 1)
            elif self.phase == PHASE_FIXATION and cell == FIXATION_CELL:
                x[k] = -1.0
        return x

    @property
    def observation(self) -> np.ndarray:
        return self._obs

    # -- dynamics ---------------------------------------------------------

    def step(self, action: int) -> StepResult:
        """Advance with a native action in {-1, +1}."""
        if self.done:
            raise RuntimeError("step called on a finished episode")
        if action not in (-1, 1):
            raise ValueError(f"action must be -1 or +1, got {action!r}")
        self.agent_pos = int(np.clip(self.agent_pos + action, 0, LINE_LENGTH - 1))
        self.steps += 1
        reward = 0.0
        info: dict = {"trial": self.trial_index, "phase": self.phase}

        if self.phase == PHASE_TRIAL and self.agent_pos in VALUE_CELLS:
            item = self._sides()[self.agent_pos]
            reward = self.reward_map[item]
            self._trial_correct.append(reward > 0)
            if self._first_value_step is None:
                self._first_value_step = self.steps
            self.completed_trials += 1
            info.update(trial_end=True, chosen_id=item, correct=reward > 0)
            if self.completed_trials == N_TRIALS:
                self.done = True
            else:
                self.phase = PHASE_FIXATION
        elif self.phase == PHASE_FIXATION and self.agent_pos == FIXATION_CELL:
            reward = FIXATION_REWARD
            self._fixation_rewards += 1
            self.phase = PHASE_TRIAL
            info.update(fixation_acquired=True)

        if not self.done and self.steps >= self.horizon:
            self.done = True
            self.truncated = True
        self._return += reward
        self._obs = self._encode()
        return StepResult(self._obs, reward, self.done, info)

    def step_index(self, action_index: int) -> StepResult:
        return self.step(self.action_values[action_index])

    def episode_summary(self) -> dict:
        correct = list(self._trial_correct)
        later = correct[1:]  # trials 2..5, the one-shot part
        return {
            "return": self._return,
            "completed_trials": self.completed_trials,
            "trial_correct": correct,
            "correct_2_5": sum(later),
            "count_2_5": len(later),
            "success": bool(later) and all(later),
            "fixation_rewards": self._fixation_rewards,
            "first_reward_step": (self._first_value_step
                                  if self._first_value_step is not None
                                  else self.horizon),
        }

    # -- serialization ------------------------------------------------------

    def serialize(self) -> str:
        perms = "".join(str(b) for b in self.permutations)
        plus = self.value_ids[0] if self.reward_map[self.value_ids[0]] > 0 \
            else self.value_ids[1]
        return (f"harlow/1 seed={self.seed} ids={self.value_ids[0]},{self.value_ids[1]} "
                f"plus={plus} perms={perms} pos={self.agent_pos} phase={self.phase} "
                f"completed={self.completed_trials} steps={self.steps} "
                f"done={int(self.done)}")

    @classmethod
    def deserialize(cls, line: str) -> "HarlowEnv":
        head, *fields = line.strip().split()
        if head != "harlow/1":
            raise ValueError(f"not a harlow record: {line!r}")
        kv = dict(f.split("=", 1) for f in fields)
        env = cls(int(kv["seed"]))
        expect_ids = tuple(int(x) for x in kv["ids"].split(","))
        if env.value_ids != expect_ids or kv["perms"] != \
                "".join(str(b) for b in env.permutations):
            raise ValueError("record does not match its seed's draw")
        env.agent_pos = int(kv["pos"])
        env.phase = kv["phase"]
        env.completed_trials = int(kv["completed"])
        env.steps = int(kv["steps"])
        env.done = bool(int(kv["done"]))
        env.truncated = env.done and env.completed_trials < N_TRIALS
        env._obs = env._encode()
        return env

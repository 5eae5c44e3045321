"""Shared fixtures and oracles for the test suite.

The heavy lifters here are the finite-difference harness (the ground truth
every analytic gradient is judged against) and a scripted toy environment
small enough to replay exhaustively.
"""

from __future__ import annotations

import numpy as np

from metods.agent import (
    AgentConfig,
    AgentParams,
    SynapticState,
    agent_step,
    encode_input,
    init_agent,
    trace_tensors,
)
from metods.envs import StepResult
from metods.numcore import RAW, Tape, rng_from

# ---------------------------------------------------------------------------
# Agent construction
# ---------------------------------------------------------------------------


def make_agent(n=4, obs_dim=3, n_actions=2, depth=1, write_rule="hebbian",
               seed=0, embed_hidden=6, readout_hidden=6, **kw) -> AgentParams:
    """A deliberately small agent; keyword overrides reach AgentConfig."""
    config = AgentConfig(n=n, obs_dim=obs_dim, n_actions=n_actions,
                         depth=depth, write_rule=write_rule,
                         embed_hidden=embed_hidden,
                         readout_hidden=readout_hidden, **kw)
    return init_agent(config, seed)


# ---------------------------------------------------------------------------
# Flat parameter vectors (for finite differences)
# ---------------------------------------------------------------------------


def flat_trainables(params: AgentParams) -> np.ndarray:
    return np.concatenate([np.asarray(params.tensors[k], dtype=np.float64).ravel()
                           for k in params.trainable_names()])


def with_trainables(params: AgentParams, vec: np.ndarray) -> AgentParams:
    """A copy of ``params`` with the trainable tensors replaced from ``vec``."""
    out = params.copy()
    pos = 0
    for name in out.trainable_names():
        arr = out.tensors[name]
        size = arr.size
        out.tensors[name] = np.asarray(vec[pos:pos + size],
                                       dtype=np.float64).reshape(arr.shape)
        pos += size
    if pos != vec.size:
        raise ValueError(f"vector has {vec.size} entries, expected {pos}")
    return out


def grads_vector(params: AgentParams, grads: dict) -> np.ndarray:
    return np.concatenate([np.asarray(grads[k], dtype=np.float64).ravel()
                           for k in params.trainable_names()])


def central_difference(f, x0: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Two-sided finite differences, one coordinate at a time."""
    g = np.empty(x0.size)
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += step
        xm = x0.copy()
        xm[i] -= step
        g[i] = (f(xp) - f(xm)) / (2.0 * step)
    return g


def relative_error(got: np.ndarray, want: np.ndarray) -> float:
    return float(np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-12))


# ---------------------------------------------------------------------------
# Synthetic episodes and the episode objective
# ---------------------------------------------------------------------------


def random_episode(config: AgentConfig, T: int, seed: int) -> dict:
    """A frozen episode: observations, actions, rewards and the detached
    advantage/return constants.  Everything is drawn once so the objective
    below is a pure function of the parameters."""
    rng = rng_from([seed, 0xE915])
    return {
        "observations": [rng.normal(size=config.obs_dim) for _ in range(T + 1)],
        "actions": [int(rng.integers(config.n_actions)) for _ in range(T)],
        "rewards": [float(rng.normal()) for _ in range(T)],
        "advantages": rng.normal(size=T),
        "returns": rng.normal(size=T),
    }


def episode_objective(params: AgentParams, episode: dict,
                      value_coeff: float = 0.4, entropy_coeff: float = 0.03,
                      tape: Tape | None = None, w0: np.ndarray | None = None):
    """Replay a frozen episode and reduce it to the per-step-mean objective

        -A_t * log pi(a_t)  +  value_coeff * (G_t - v_t)^2
        -  entropy_coeff * H_t

    With a ``tape``, trainable tensors enter as tape leaves and the loss node
    is returned; untraced the float value is returned.  The operation
    sequence matches the trainer's replay exactly.
    """
    cfg = params.config
    if tape is None:
        ops: object = RAW
        tensors: dict = dict(params.tensors)
    else:
        ops = tape
        tensors = trace_tensors(tape, params)
    rule = params.rule_view(tensors)
    if w0 is not None:
        state = SynapticState(np.asarray(w0, dtype=np.float64), 0)
    else:
        state = SynapticState(tensors["w0"], 0)

    T = len(episode["actions"])
    pol, sq, ent = [], [], []
    prev_a: int | None = None
    prev_r = 0.0
    for t in range(T):
        x = encode_input(episode["observations"][t], prev_a, prev_r, cfg)
        out = agent_step(tensors, rule, state, x, ops)
        a = episode["actions"][t]
        lp = ops.logprob_categorical(out.logits, a)
        pol.append(ops.scale(float(episode["advantages"][t]), lp))
        diff = ops.sub(out.value, np.asarray(float(episode["returns"][t])))
        sq.append(ops.mul(diff, diff))
        ent.append(ops.entropy_categorical(out.logits))
        state = out.state
        prev_a, prev_r = a, episode["rewards"][t]

    loss = ops.add(
        ops.add(ops.scale(-1.0 / T, ops.addn(pol)),
                ops.scale(value_coeff / T, ops.addn(sq))),
        ops.scale(-entropy_coeff / T, ops.addn(ent)))
    if tape is None:
        return float(loss)
    return loss


def episode_gradient_check(params: AgentParams, T: int, seed: int,
                           step: float = 1e-6,
                           w0: np.ndarray | None = None) -> float:
    """Relative error between the taped episode gradient and central finite
    differences over every trainable coordinate."""
    episode = random_episode(params.config, T, seed)
    if w0 is None and params.config.w0_mode == "sampled":
        w0 = 1e-3 * rng_from([seed, 0xB0B]).normal(size=(params.config.n,) * 2)

    tape = Tape()
    loss = episode_objective(params, episode, tape=tape, w0=w0)
    grads = tape.backward(loss)
    leaves = {}
    for node in tape.leaves:
        leaves[node.op.removeprefix("leaf:")] = grads[node]
    analytic = grads_vector(params, leaves)

    def f(vec):
        return episode_objective(with_trainables(params, vec), episode, w0=w0)

    numeric = central_difference(f, flat_trainables(params), step)
    return relative_error(analytic, numeric)


# ---------------------------------------------------------------------------
# Scripted toy environment
# ---------------------------------------------------------------------------


class ToyEnv:
    """A fixed-horizon environment with pre-drawn observations and rewards.

    Per-step reward depends on the chosen action, so policies differ in
    return; everything is a deterministic function of the seed.
    """

    obs_dim = 3
    n_actions = 2

    def __init__(self, seed: int, horizon: int = 5, natural_end: bool = False):
        self.seed = int(seed)
        self.horizon = int(horizon)
        self.natural_end = natural_end
        rng = rng_from([seed, 0x70E])
        self._obs = rng.normal(size=(self.horizon + 1, self.obs_dim))
        self._rewards = rng.normal(size=(self.horizon, self.n_actions))
        self.steps = 0
        self.done = False
        self.truncated = False

    @property
    def observation(self) -> np.ndarray:
        return self._obs[self.steps].copy()

    def step_index(self, a: int) -> StepResult:
        if self.done:
            raise RuntimeError("episode is over")
        r = float(self._rewards[self.steps, int(a)])
        self.steps += 1
        if self.steps >= self.horizon:
            self.done = True
            self.truncated = not self.natural_end
        return StepResult(self._obs[self.steps].copy(), r, self.done)

    def episode_summary(self) -> dict:
        return {"return": float("nan"), "success": False,
                "first_reward_step": self.horizon}

"""Episode-loss gradients via the discrete adjoint recursion.

Where straight backpropagation through time keeps every step of the episode
on one tape, this module sweeps backwards with an adjoint state lam_t =
dL/dW_t, rebuilding a one-step graph per timestep:

    lam_T     = 0
    lam_{t-1} = dc_t/dW_{t-1} + lam_t . J_t      (J_t the Jacobian of the
                                                  one-step weight update)
    dL/dtheta = sum_t  dc_t/dtheta + lam_t . dW_t/dtheta

with c_t the per-step loss contribution (advantage-weighted log-prob, value
error, entropy).  Both Jacobian products are evaluated as vector-Jacobian
products by seeding the step graph's weight output with lam_t, so no N^2 x
N^2 matrix is ever formed, and the adjoint includes the full product-rule
coupling between cost, weights and parameters.

Only a bounded number of weight matrices is held at once: the forward pass
stores sqrt(T)-spaced checkpoints (configurable budget) and each backward
segment recomputes its states from the preceding checkpoint.  An instrumented
store counts live matrices and asserts the bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .agent import AgentParams, SynapticState, agent_step, encode_input, trace_tensors
from .metatrain import GradientEstimate, ReplayMismatch, Trajectory, TrainConfig, compute_gae
from .numcore import RAW, Array, Tape
from .plastic import recursive_update


@dataclass
class CheckpointSchedule:
    """Forward-state retention plan: which W_t indices stay resident."""

    horizon: int                 # T; states 0..T-1 feed the backward sweep
    checkpoints: tuple           # sorted indices, always starting at 0

    def validate(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.checkpoints or self.checkpoints[0] != 0:
            raise ValueError("schedule must checkpoint state 0")
        if list(self.checkpoints) != sorted(set(self.checkpoints)):
            raise ValueError("checkpoints must be sorted and unique")
        if self.checkpoints[-1] > self.horizon - 1:
            raise ValueError("checkpoint index beyond last used state")

    @property
    def segments(self) -> list[tuple[int, int]]:
        """(start, end) state ranges, end exclusive, covering 0..T-1."""
        cps = list(self.checkpoints) + [self.horizon]
        return [(cps[i], cps[i + 1]) for i in range(len(cps) - 1)]

    @property
    def max_segment(self) -> int:
        return max(end - start for start, end in self.segments)


def make_schedule(T: int, memory_budget: int | None = None) -> CheckpointSchedule:
    """sqrt(T)-spaced checkpoints by default, never more than the budget
    allows; a budget of T+1 or more stores every state (no recomputation)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if memory_budget is not None and memory_budget < 2:
        raise ValueError("memory budget must allow at least 2 stored states")
    if memory_budget is not None and memory_budget >= T + 1:
        return CheckpointSchedule(T, tuple(range(T)))
    stride = max(1, round(math.sqrt(T)))
    if memory_budget is not None:
        stride = max(stride, math.ceil(T / memory_budget))
    return CheckpointSchedule(T, tuple(range(0, T, stride)))


class WStore:
    """Weight-matrix store with a live/peak counter; every W_t the sweep
    holds goes through here so the memory claim is asserted, not assumed."""

    def __init__(self):
        self._data: dict[int, Array] = {}
        self.peak = 0

    def put(self, idx: int, w: Array) -> None:
        if idx not in self._data:
            self._data[idx] = w
            self.peak = max(self.peak, len(self._data))

    def get(self, idx: int) -> Array:
        return self._data[idx]

    def has(self, idx: int) -> bool:
        return idx in self._data

    def drop(self, idx: int) -> None:
        self._data.pop(idx, None)

    @property
    def live(self) -> int:
        return len(self._data)


def _inputs(traj: Trajectory, params: AgentParams) -> list[Array]:
    cfg = params.config
    xs = []
    prev_a: int | None = None
    prev_r = 0.0
    for t in range(traj.length):
        xs.append(encode_input(traj.observations[t], prev_a, prev_r, cfg))
        prev_a, prev_r = traj.actions[t], traj.rewards[t]
    return xs


def _start_w(params: AgentParams, traj: Trajectory) -> Array:
    if params.config.w0_mode in ("learned", "fixed"):
        return params.tensors["w0"]
    if traj.w0 is None:
        raise ValueError("sampled-w0 trajectory lacks its stored w0")
    return traj.w0


def _forward_w(params: AgentParams, w: Array, x: Array) -> Array:
    """Untraced one-step weight update (readout skipped; not needed here)."""
    t = params.tensors
    h = np.tanh(t["embed.w1"] @ x + t["embed.b1"])
    v0 = t["embed.w2"] @ h + t["embed.b2"]
    _, w_next = recursive_update(w, v0, params.rule_view(), RAW)
    return w_next


def adjoint_gradient(params: AgentParams, traj: Trajectory, config: TrainConfig,
                     schedule: CheckpointSchedule | None = None,
                     advantages: Array | None = None,
                     returns: Array | None = None) -> GradientEstimate:
    """Gradient of the per-episode loss (same normalization as the traced
    replay: per-step mean) computed by the adjoint sweep under the given
    retention schedule."""
    T = traj.length
    if schedule is None:
        schedule = make_schedule(T)
    schedule.validate()
    if schedule.horizon != T:
        raise ValueError(
            f"schedule horizon {schedule.horizon} != trajectory length {T}")
    if advantages is None or returns is None:
        advantages, returns = compute_gae(traj.rewards, traj.values,
                                          config.discount, config.gae_lambda,
                                          traj.bootstrap_value)
    advantages = np.asarray(advantages, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    xs = _inputs(traj, params)
    cp = set(schedule.checkpoints)
    store = WStore()

    # forward: materialize checkpointed states only
    w = np.asarray(_start_w(params, traj), dtype=np.float64)
    store.put(0, w)
    for t in range(1, T):                     # state index t = W_t
        w = _forward_w(params, store.get(t - 1) if t - 1 in cp else w, xs[t - 1])
        if t in cp:
            store.put(t, w)

    trainable = params.trainable_names()
    grads = {name: np.zeros_like(params.tensors[name]) for name in trainable}
    lam: Array | None = None                  # lam_T = 0, represented as None
    loss_sum = pol_sum = val_sum = ent_sum = 0.0

    for seg_start, seg_end in reversed(schedule.segments):
        for t in range(seg_start + 1, seg_end):   # recompute interior states
            if not store.has(t):
                store.put(t, _forward_w(params, store.get(t - 1), xs[t - 1]))
        for t in range(seg_end, seg_start, -1):   # steps t use state t-1
            tape = Tape()
            nodes = trace_tensors(tape, params)
            w_in = tape.leaf(store.get(t - 1), op="w_in")
            out = agent_step(nodes, params.rule_view(nodes),
                             SynapticState(w_in, t - 1), xs[t - 1], tape)
            a = traj.actions[t - 1]
            lp = tape.logprob_categorical(out.logits, a)
            if float(lp.data) != traj.log_probs[t - 1]:
                raise ReplayMismatch(
                    f"adjoint replay diverged at step {t - 1}")
            ent = tape.entropy_categorical(out.logits)
            diff = tape.sub(out.value, np.asarray(float(returns[t - 1])))
            sq = tape.mul(diff, diff)
            cost = tape.add(
                tape.add(tape.scale(-float(advantages[t - 1]) / T, lp),
                         tape.scale(config.value_coeff / T, sq)),
                tape.scale(-config.entropy_coeff / T, ent))
            seeds = [(cost, 1.0)]
            if lam is not None:
                seeds.append((out.state.w, lam))
            leaf_grads = tape.backward(seeds=seeds)
            for name in trainable:
                grads[name] += leaf_grads[nodes[name]]
            lam = leaf_grads[w_in]
            loss_sum += float(cost.data)
            pol_sum += -float(advantages[t - 1]) * float(lp.data) / T
            val_sum += float(sq.data) / T
            ent_sum += float(ent.data) / T
            if t - 1 not in cp:
                store.drop(t - 1)
        store.drop(seg_start)

    # episode-start weights: the final adjoint is their gradient
    if params.config.w0_mode == "learned" and lam is not None:
        grads["w0"] += lam

    bound = len(schedule.checkpoints) + schedule.max_segment
    if store.peak > bound:
        raise AssertionError(
            f"stored {store.peak} weight matrices; schedule bound is {bound}")

    gnorm = math.sqrt(sum(float(np.vdot(g, g)) for _, g in sorted(grads.items())))
    return GradientEstimate(grads=grads, loss=loss_sum, policy_loss=pol_sum,
                            value_loss=val_sum, entropy=ent_sum,
                            grad_norm=gnorm, episodes=1)

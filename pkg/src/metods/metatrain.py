"""Meta-training: meta-batch collection, GAE, A2C loss on tape, Adam.

Gradients are computed in two passes per episode.  Pass one rolls the episode
untraced (plain numpy) while sampling actions and recording observations,
actions, rewards, value estimates and log-probs.  Pass two replays the episode
on a fresh tape, rebuilding the identical operation sequence with parameter
leaf nodes and running one backward sweep through the full unrolled weight
dynamics.  Replayed log-probs are checked bitwise against the rollout, and
each episode's tape is freed after its backward pass, so peak memory is one
episode's graph rather than a whole meta-batch's.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import (AgentParams, SynapticState, agent_step, encode_input,
                    initial_state, sample_action, trace_tensors)
from .numcore import RAW, Array, Tape, log_softmax, normal_init, rng_from

log = logging.getLogger("metods.metatrain")

METRICS_HEADER = ("step", "update", "mean_reward", "success_rate",
                  "first_reward_step", "policy_loss", "value_loss", "entropy",
                  "grad_norm", "wall_time")
EVAL_HEADER = ("update", "step", "episodes", "mean_reward", "std_reward",
               "success_rate", "mean_first_reward")


class RolloutAbort(RuntimeError):
    """A rollout produced non-finite activations/logits."""


class TrainingAbort(RuntimeError):
    """Too few usable rollouts (or unrecoverable numerics) to continue."""


class ReplayMismatch(AssertionError):
    """Traced replay diverged from the recorded rollout (internal bug guard)."""


def derive_seed(*path: int) -> int:
    """Well-mixed 63-bit task seed from an integer path."""
    state = np.random.SeedSequence([int(p) for p in path]).generate_state(1, dtype=np.uint64)
    return int(state[0] >> np.uint64(1))


@dataclass
class Trajectory:
    """One episode's record, sufficient to replay it as a pure function of
    the parameters."""

    task_seed: int
    observations: list            # length T+1 (includes the final observation)
    actions: list
    rewards: list
    log_probs: list
    values: list
    truncated: bool               # horizon cut (bootstrap) vs natural end
    bootstrap_value: float
    summary: dict = field(default_factory=dict)
    w0: Array | None = None       # episode-start weights if sampled per episode
    episode_index: int = 0
    w_snapshots: list | None = None   # optional: W after each step, plus W0
    v_snapshots: list | None = None   # optional: plastic activation per step
    positions: list | None = None     # optional: agent cell at observation time

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def dones(self) -> list:
        return [False] * (self.length - 1) + [True]

    def episode_return(self) -> float:
        return float(sum(self.rewards))

    def validate(self) -> None:
        T = self.length
        if not (len(self.rewards) == len(self.log_probs) == len(self.values) == T):
            raise ValueError("per-step fields disagree on length")
        if len(self.observations) != T + 1:
            raise ValueError("need T+1 observations")
        if not all(math.isfinite(p) for p in self.log_probs):
            raise ValueError("non-finite log-prob")


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    meta_batch_size: int = 50
    discount: float = 0.9
    gae_lambda: float = 1.0
    value_coeff: float = 0.4
    entropy_coeff: float = 3e-2
    total_steps: int = 1_000_000       # env-step budget
    eval_every: int = 50               # updates between held-out evaluations
    eval_episodes: int = 160
    seed: int = 0
    advantage_norm: bool = True
    grad_clip: float = 0.5
    workers: int = 1                   # reduction order is fixed; results do
                                       # not depend on this
    checkpoint_every: int = 200        # updates; 0 disables periodic saves
    stop_success: float = 0.0          # early-stop threshold on eval success
    stop_patience: int = 2             # consecutive qualifying evals required

    def validate(self) -> None:
        if not (0.0 <= self.discount <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("discount and gae_lambda must lie in [0, 1]")
        if self.meta_batch_size < 1:
            raise ValueError("meta_batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class GradientEstimate:
    grads: dict                   # name -> tensor, shapes mirroring the params
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    grad_norm: float              # global norm before clipping
    episodes: int


# ---------------------------------------------------------------------------
# Rollouts (untraced pass)
# ---------------------------------------------------------------------------


def rollout_episode(params: AgentParams, env, sample_rng, w0: Array | None = None,
                    record_weights: bool = False, episode_index: int = 0,
                    task_seed: int = 0) -> Trajectory:
    """Run one full episode untraced, sampling from the softmax policy."""
    cfg = params.config
    rule = params.rule_view()
    if w0 is None and cfg.w0_mode == "sampled":
        state = initial_state(params, rng=sample_rng)
    else:
        state = initial_state(params, w0=w0)
    start_w = state.w
    obs = env.observation
    prev_a: int | None = None
    prev_r = 0.0
    observations = [np.asarray(obs, dtype=np.float64).copy()]
    actions: list[int] = []
    rewards: list[float] = []
    log_probs: list[float] = []
    values: list[float] = []
    w_snaps = [np.array(state.w, copy=True)] if record_weights else None
    v_snaps: list | None = [] if record_weights else None
    positions: list | None = [] if record_weights and hasattr(env, "agent") else None

    while not env.done:
        x = encode_input(obs, prev_a, prev_r, cfg)
        out = agent_step(params.tensors, rule, state, x, RAW)
        if not (np.all(np.isfinite(out.logits)) and np.isfinite(out.value)):
            raise RolloutAbort(
                f"non-finite network output at step {env.steps} "
                f"(episode {episode_index})")
        if positions is not None:
            positions.append(tuple(env.agent))
        a = sample_action(out.logits, sample_rng)
        res = env.step_index(a)
        actions.append(a)
        rewards.append(float(res.reward))
        log_probs.append(float(log_softmax(out.logits)[a]))
        values.append(float(out.value))
        observations.append(np.asarray(res.observation, dtype=np.float64).copy())
        if record_weights:
            w_snaps.append(np.array(out.state.w, copy=True))
            v_snaps.append(np.array(out.activation, copy=True))
        state = out.state
        prev_a, prev_r, obs = a, float(res.reward), res.observation

    bootstrap = 0.0
    if env.truncated:
        x = encode_input(obs, prev_a, prev_r, cfg)
        tail = agent_step(params.tensors, rule, state, x, RAW)
        bootstrap = float(tail.value)

    traj = Trajectory(
        task_seed=task_seed,
        observations=observations,
        actions=actions,
        rewards=rewards,
        log_probs=log_probs,
        values=values,
        truncated=env.truncated,
        bootstrap_value=bootstrap,
        summary=env.episode_summary(),
        w0=np.array(start_w, copy=True) if cfg.w0_mode == "sampled" else None,
        episode_index=episode_index,
        w_snapshots=w_snaps,
        v_snapshots=v_snaps,
        positions=positions,
    )
    traj.validate()
    return traj


def collect_meta_batch(params: AgentParams, env_factory, m: int, seed: int,
                       base_episode: int = 0,
                       record_weights: bool = False) -> list[Trajectory]:
    """M independent task episodes.  Task draw, action sampling and (for the
    sampled mode) episode-start weights each use their own substream of
    ``(seed, episode_index)``, so the batch is reproducible and identical for
    any worker count."""
    out: list[Trajectory] = []
    dropped = 0
    for j in range(m):
        ep = base_episode + j
        env = env_factory(derive_seed(seed, ep, 0))
        sample_rng = rng_from([seed, ep, 1])
        w0 = None
        if params.config.w0_mode == "sampled":
            n = params.config.n
            w0 = normal_init((n, n), params.config.w0_std, rng_from([seed, ep, 2]))
        try:
            out.append(rollout_episode(params, env, sample_rng, w0=w0,
                                       record_weights=record_weights,
                                       episode_index=ep,
                                       task_seed=env.seed))
        except RolloutAbort as err:
            dropped += 1
            log.warning("dropped rollout %d: %s", ep, err)
    if dropped and len(out) < max(1, m // 2):
        raise TrainingAbort(
            f"only {len(out)}/{m} rollouts survived non-finite activations")
    return out


# ---------------------------------------------------------------------------
# Advantages
# ---------------------------------------------------------------------------


def compute_gae(rewards, values, gamma: float, lam: float,
                bootstrap: float = 0.0) -> tuple[Array, Array]:
    """Generalized advantage estimation.

    delta_t = r_t + gamma * v_{t+1} - v_t  (v_T = bootstrap)
    A_t     = delta_t + gamma * lam * A_{t+1}
    returns = A + values
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ValueError("rewards and values must have equal length")
    T = len(rewards)
    adv = np.empty(T)
    running = 0.0
    next_value = float(bootstrap)
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(advantages: list[Array], eps: float = 1e-8) -> list[Array]:
    """Batch-wide standardization, preserving per-step ordering within the
    pooled batch (and hence the argmax)."""
    pooled = np.concatenate(advantages)
    mu = pooled.mean()
    sd = pooled.std()
    return [(a - mu) / (sd + eps) for a in advantages]


# ---------------------------------------------------------------------------
# Loss on tape (traced pass)
# ---------------------------------------------------------------------------


def episode_loss(tape: Tape, nodes: dict, params: AgentParams, traj: Trajectory,
                 advantages: Array, returns: Array,
                 config: TrainConfig) -> tuple:
    """Replay one episode on ``tape`` and return
    ``(loss_node, policy_loss, value_loss, entropy)``.

    The loss is the per-step mean of
    ``-log_prob * A + value_coeff * (return - value)^2
      - entropy_coeff * entropy``
    with advantages/returns entering as constants (detached).
    """
    cfg = params.config
    rule = params.rule_view(nodes)
    if "w0" in nodes:                      # learned (node) or fixed (array)
        w = nodes["w0"]
    else:
        w = traj.w0
        if w is None:
            raise ValueError("sampled-w0 trajectory lacks its stored w0")
    state = SynapticState(w, 0)

    T = traj.length
    pol_terms, ent_nodes, sq_nodes = [], [], []
    prev_a: int | None = None
    prev_r = 0.0
    for t in range(T):
        x = encode_input(traj.observations[t], prev_a, prev_r, cfg)
        out = agent_step(nodes, rule, state, x, tape)
        a = traj.actions[t]
        lp = tape.logprob_categorical(out.logits, a)
        if float(lp.data) != traj.log_probs[t]:
            raise ReplayMismatch(
                f"log-prob mismatch at step {t}: {float(lp.data)!r} vs "
                f"{traj.log_probs[t]!r}")
        pol_terms.append(tape.scale(float(advantages[t]), lp))
        ent_nodes.append(tape.entropy_categorical(out.logits))
        diff = tape.sub(out.value, np.asarray(float(returns[t])))
        sq_nodes.append(tape.mul(diff, diff))
        state = out.state
        prev_a, prev_r = a, traj.rewards[t]

    policy = tape.scale(-1.0 / T, tape.addn(pol_terms))
    value = tape.scale(config.value_coeff / T, tape.addn(sq_nodes))
    entropy = tape.scale(-config.entropy_coeff / T, tape.addn(ent_nodes))
    loss = tape.add(tape.add(policy, value), entropy)
    value_raw = float(np.mean([n.data for n in sq_nodes]))
    entropy_raw = float(np.mean([n.data for n in ent_nodes]))
    return loss, float(policy.data), value_raw, entropy_raw


def a2c_loss(params: AgentParams, trajectories: list[Trajectory],
             advantages: list[Array], returns: list[Array],
             config: TrainConfig) -> tuple:
    """Whole-batch loss on a single tape (mean over episodes of per-episode
    step means).  Returns ``(tape, loss_node, nodes)``.  Prefer
    :func:`batch_gradient` for training; it accumulates episode-at-a-time and
    frees each episode's graph."""
    tape = Tape()
    nodes = trace_tensors(tape, params)
    losses = []
    for traj, adv, ret in zip(trajectories, advantages, returns):
        loss, *_ = episode_loss(tape, nodes, params, traj, adv, ret, config)
        losses.append(loss)
    total = tape.scale(1.0 / len(losses), tape.addn(losses))
    return tape, total, nodes


def batch_gradient(params: AgentParams, trajectories: list[Trajectory],
                   config: TrainConfig) -> GradientEstimate:
    """Advantages, per-episode traced replays, averaged gradients."""
    if not trajectories:
        raise TrainingAbort("empty meta-batch")
    advantages, returns = [], []
    for traj in trajectories:
        adv, ret = compute_gae(traj.rewards, traj.values, config.discount,
                               config.gae_lambda, traj.bootstrap_value)
        advantages.append(adv)
        returns.append(ret)
    if config.advantage_norm:
        advantages = normalize_advantages(advantages)

    m = len(trajectories)
    trainable = params.trainable_names()
    grads = {name: np.zeros_like(params.tensors[name]) for name in trainable}
    loss_sum = pol_sum = val_sum = ent_sum = 0.0
    for traj, adv, ret in zip(trajectories, advantages, returns):
        tape = Tape()
        nodes = trace_tensors(tape, params)
        loss, pol, val, ent = episode_loss(tape, nodes, params, traj, adv,
                                           ret, config)
        if not np.isfinite(loss.data):
            raise TrainingAbort(f"non-finite loss in episode {traj.episode_index}")
        leaf_grads = tape.backward(loss)
        for name in trainable:
            node = nodes[name]
            grads[name] += leaf_grads[node] / m
        loss_sum += float(loss.data)
        pol_sum += pol
        val_sum += val
        ent_sum += ent
        del tape, nodes  # free the episode graph before the next replay

    gnorm = math.sqrt(sum(float(np.vdot(g, g)) for _, g in sorted(grads.items())))
    return GradientEstimate(grads=grads, loss=loss_sum / m, policy_loss=pol_sum / m,
                            value_loss=val_sum / m, entropy=ent_sum / m,
                            grad_norm=gnorm, episodes=m)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params: AgentParams) -> "AdamState":
        names = params.trainable_names()
        return cls(m={n: np.zeros_like(params.tensors[n]) for n in names},
                   v={n: np.zeros_like(params.tensors[n]) for n in names},
                   t=0)


def optimizer_step(params: AgentParams, estimate: GradientEstimate,
                   config: TrainConfig, state: AdamState,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> AgentParams:
    """In-place Adam update with global gradient-norm clipping applied before
    the moment updates."""
    names = sorted(estimate.grads)
    gnorm = math.sqrt(sum(float(np.vdot(estimate.grads[n], estimate.grads[n]))
                          for n in names))
    clip = 1.0
    if config.grad_clip > 0 and gnorm > config.grad_clip:
        clip = config.grad_clip / gnorm
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name in names:
        g = estimate.grads[name] * clip
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        mhat = state.m[name] / c1
        vhat = state.v[name] / c2
        params.tensors[name] -= config.learning_rate * mhat / (np.sqrt(vhat) + eps)
    return params


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def summarize_episodes(trajs: list[Trajectory]) -> dict:
    """Aggregate episode summaries into one metrics row.

    ``success_rate`` pools trial-level correctness when the episode summaries
    provide it (association task: correct choices on trials 2..5), otherwise
    it is the fraction of episodes with at least one success flag.
    """
    returns = np.array([t.episode_return() for t in trajs])
    summaries = [t.summary for t in trajs]
    if summaries and "count_2_5" in summaries[0]:
        num = sum(s["correct_2_5"] for s in summaries)
        den = sum(s["count_2_5"] for s in summaries)
        success = num / den if den else 0.0
    else:
        success = float(np.mean([bool(s.get("success")) for s in summaries]))
    firsts = [s.get("first_reward_step") for s in summaries]
    firsts = [f for f in firsts if f is not None]
    return {
        "episodes": len(trajs),
        "mean_reward": float(returns.mean()),
        "std_reward": float(returns.std()),
        "success_rate": float(success),
        "mean_first_reward": float(np.mean(firsts)) if firsts else float("nan"),
    }


def eval_policy(params: AgentParams, env_factory, episodes: int, seed: int,
                record_episodes: int = 0) -> tuple[dict, list[Trajectory]]:
    """Held-out evaluation with sampled actions on fresh task seeds.  The
    first ``record_episodes`` episodes keep weight/activation snapshots."""
    trajs: list[Trajectory] = []
    for i in range(episodes):
        env = env_factory(derive_seed(seed, 0xE7A1, i))
        sample_rng = rng_from([seed, 0xE7A2, i])
        w0 = None
        if params.config.w0_mode == "sampled":
            n = params.config.n
            w0 = normal_init((n, n), params.config.w0_std,
                             rng_from([seed, 0xE7A3, i]))
        trajs.append(rollout_episode(params, env, sample_rng, w0=w0,
                                     record_weights=i < record_episodes,
                                     episode_index=i, task_seed=env.seed))
    return summarize_episodes(trajs), trajs


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: AgentParams
    opt_state: AdamState
    updates: int
    env_steps: int
    episodes: int
    stopped_early: bool
    last_eval: dict | None


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


class _CsvLog:
    def __init__(self, path: Path, header: tuple[str, ...], resume: bool):
        self.path = path
        exists = path.exists() and resume
        self.fh = open(path, "a" if exists else "w", newline="")
        self.writer = csv.writer(self.fh)
        if not exists:
            self.writer.writerow(header)
            self.fh.flush()

    def row(self, values) -> None:
        self.writer.writerow([_fmt(v) for v in values])
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def train(params: AgentParams, env_factory, config: TrainConfig,
          out_dir: Path | str | None = None, *,
          opt_state: AdamState | None = None, start_update: int = 0,
          start_steps: int = 0, start_episodes: int = 0,
          config_hash: str = "", max_updates: int | None = None) -> TrainResult:
    """A2C meta-training until the env-step budget (or early stop) is hit.

    Writes ``metrics.csv`` (one row per update, documented header) and
    ``eval.csv`` plus periodic/final checkpoints under ``out_dir`` when given.
    Resuming passes the restored optimizer state and counters; the metric logs
    are then appended to.
    """
    config.validate()
    out = Path(out_dir) if out_dir is not None else None
    metrics = evals = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        resume = start_update > 0
        metrics = _CsvLog(out / "metrics.csv", METRICS_HEADER, resume)
        evals = _CsvLog(out / "eval.csv", EVAL_HEADER, resume)

    opt = opt_state if opt_state is not None else AdamState.for_params(params)
    update = start_update
    env_steps = start_steps
    episodes = start_episodes
    stopped = False
    streak = 0
    last_eval: dict | None = None
    t0 = time.perf_counter()

    def save(tag: str) -> None:
        if out is None:
            return
        from .checkpoint import save_checkpoint
        save_checkpoint(out / f"checkpoint_{tag}.bin", params, opt_state=opt,
                        counters={"update": update, "env_steps": env_steps,
                                  "episodes": episodes},
                        config_hash=config_hash)

    while env_steps < config.total_steps:
        if max_updates is not None and update - start_update >= max_updates:
            break
        batch = collect_meta_batch(params, env_factory, config.meta_batch_size,
                                   config.seed, base_episode=episodes)
        episodes += config.meta_batch_size
        env_steps += sum(t.length for t in batch)
        try:
            est = batch_gradient(params, batch, config)
        except TrainingAbort as err:
            # non-finite loss: skip this update, keep the previous parameters
            log.warning("update %d aborted: %s", update + 1, err)
            update += 1
            if metrics:
                metrics.row([env_steps, update, float("nan"), float("nan"),
                             float("nan"), float("nan"), float("nan"),
                             float("nan"), float("nan"),
                             time.perf_counter() - t0])
            continue
        optimizer_step(params, est, config, opt)
        update += 1

        mean_r = float(np.mean([t.episode_return() for t in batch]))
        if "count_2_5" in batch[0].summary:
            num = sum(t.summary["correct_2_5"] for t in batch)
            den = sum(t.summary["count_2_5"] for t in batch)
            succ = num / den if den else 0.0
        else:
            succ = float(np.mean([bool(t.summary.get("success")) for t in batch]))
        first = float(np.mean([t.summary.get("first_reward_step", np.nan)
                               for t in batch]))
        if metrics:
            metrics.row([env_steps, update, mean_r, succ, first,
                         est.policy_loss, est.value_loss, est.entropy,
                         est.grad_norm, time.perf_counter() - t0])

        if config.eval_every > 0 and update % config.eval_every == 0:
            last_eval, _ = eval_policy(params, env_factory,
                                       config.eval_episodes,
                                       derive_seed(config.seed, 0xE7, update))
            if evals:
                evals.row([update, env_steps, last_eval["episodes"],
                           last_eval["mean_reward"], last_eval["std_reward"],
                           last_eval["success_rate"],
                           last_eval["mean_first_reward"]])
            log.info("update %d steps %d eval: reward %.3f success %.3f",
                     update, env_steps, last_eval["mean_reward"],
                     last_eval["success_rate"])
            if config.stop_success > 0 and \
                    last_eval["success_rate"] >= config.stop_success:
                streak += 1
                if streak >= config.stop_patience:
                    stopped = True
                    break
            else:
                streak = 0

        if config.checkpoint_every > 0 and out is not None \
                and update % config.checkpoint_every == 0:
            save("latest")

    save("final")
    if metrics:
        metrics.close()
    if evals:
        evals.close()
    return TrainResult(params=params, opt_state=opt, updates=update,
                       env_steps=env_steps, episodes=episodes,
                       stopped_early=stopped, last_eval=last_eval)

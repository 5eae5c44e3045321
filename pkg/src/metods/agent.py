"""Agent around the plastic layer: input embedding, recursive weight update,
policy/value readout, and parameter initialization.

Parameters are kept in a flat name -> float64 array mapping so the optimizer,
checkpoints and the tracing machinery can treat them uniformly.  The network
itself is small and fixed-shape:

    x --[w1, b1, tanh, w2, b2]--> v0 --recursive plastic update--> vS
    vS --[w1, b1, tanh]--> h --[w2, b2]--> logits
                             --[wv, bv]--> value (scalar)

The per-timestep input ``x`` is the observation, a one-hot of the previous
action, and the previous reward, optionally zero-padded to match an externally
fixed input width.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .numcore import RAW, Array, Tape, normal_init, orthogonal_init, rng_from
from .plastic import WRITE_RULES, PlasticRule, coeff_count, recursive_update

W0_MODES = ("learned", "sampled", "fixed")
ALPHA_MODES = ("learned", "ones")


@dataclass(frozen=True)
class AgentConfig:
    n: int                          # plastic layer width
    obs_dim: int
    n_actions: int
    depth: int = 2                  # plastic recursion depth
    embed_hidden: int = 32
    readout_hidden: int = 32
    write_rule: str = "hebbian"
    w0_mode: str = "sampled"        # initial-weight policy per episode
    w0_std: float = 1e-3            # std for sampled mode / learned-init draw
    alpha_mode: str = "learned"
    alpha_std: float = 1e-3
    coeff_std: float = 1e-2         # kappa/beta init std
    input_pad: int = 0              # zero padding to reach a fixed input width

    @property
    def input_dim(self) -> int:
        return self.obs_dim + self.n_actions + 1 + self.input_pad

    def validate(self) -> None:
        if self.n < 1 or self.obs_dim < 1 or self.n_actions < 2:
            raise ValueError("n, obs_dim >= 1 and n_actions >= 2 required")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.write_rule not in WRITE_RULES:
            raise ValueError(f"write_rule must be one of {WRITE_RULES}")
        if self.w0_mode not in W0_MODES:
            raise ValueError(f"w0_mode must be one of {W0_MODES}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}")
        if self.input_pad < 0:
            raise ValueError("input_pad must be >= 0")


@dataclass
class AgentParams:
    """All learnable (and frozen) tensors of one agent."""

    config: AgentConfig
    tensors: dict[str, Array] = field(default_factory=dict)

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def trainable_names(self) -> list[str]:
        out = []
        for name in self.names():
            if name == "w0" and self.config.w0_mode != "learned":
                continue
            if name == "plastic.alpha" and self.config.alpha_mode != "learned":
                continue
            out.append(name)
        return out

    def copy(self) -> "AgentParams":
        return AgentParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def rule_view(self, tensors=None) -> PlasticRule:
        """Plastic-rule tensors, optionally substituted (e.g. by tape nodes)."""
        t = self.tensors if tensors is None else tensors
        return PlasticRule(
            depth=self.config.depth,
            rule=self.config.write_rule,
            alpha=t["plastic.alpha"],
            kappa=t["plastic.kappa"],
            beta=t["plastic.beta"],
            p1=t.get("plastic.p1"),
            p2=t.get("plastic.p2"),
        )


def init_agent(config: AgentConfig, seed: int) -> AgentParams:
    """Draw a fresh parameter set.  Weight matrices are orthogonal, biases
    zero; plastic tensors start near zero so early behaviour is dominated by
    the feedforward pathway."""
    config.validate()
    rng = rng_from([seed, 0xA9E27])
    n, i, o = config.n, config.input_dim, config.n_actions
    he, hr = config.embed_hidden, config.readout_hidden
    t: dict[str, Array] = {}
    t["embed.w1"] = orthogonal_init(he, i, rng)
    t["embed.b1"] = np.zeros(he)
    t["embed.w2"] = orthogonal_init(n, he, rng)
    t["embed.b2"] = np.zeros(n)
    t["readout.w1"] = orthogonal_init(hr, n, rng)
    t["readout.b1"] = np.zeros(hr)
    t["readout.w2"] = orthogonal_init(o, hr, rng)
    t["readout.b2"] = np.zeros(o)
    t["readout.wv"] = orthogonal_init(1, hr, rng)[0]
    t["readout.bv"] = np.zeros(())
    if config.alpha_mode == "learned":
        t["plastic.alpha"] = normal_init((n, n), config.alpha_std, rng)
    else:
        t["plastic.alpha"] = np.ones((n, n))
    k = coeff_count(config.depth)
    t["plastic.kappa"] = normal_init(k, config.coeff_std, rng)
    t["plastic.beta"] = normal_init(k, config.coeff_std, rng)
    if config.write_rule in ("linear_projected", "mlp_projected"):
        t["plastic.p1"] = orthogonal_init(n, n, rng)
    if config.write_rule == "mlp_projected":
        t["plastic.p2"] = orthogonal_init(n, n, rng)
    if config.w0_mode in ("learned", "fixed"):
        t["w0"] = normal_init((n, n), config.w0_std, rng)
    return AgentParams(config, t)


@dataclass
class SynapticState:
    w: object          # (n, n) array, or tape node when traced
    t: int = 0


def initial_state(params: AgentParams, rng: np.random.Generator | None = None,
                  w0: Array | None = None) -> SynapticState:
    """Episode-start weights: the learned/fixed tensor, an explicit override
    (replays), or a fresh Gaussian draw for the sampled mode."""
    cfg = params.config
    if w0 is not None:
        return SynapticState(np.asarray(w0, dtype=np.float64), 0)
    if cfg.w0_mode in ("learned", "fixed"):
        return SynapticState(params.tensors["w0"], 0)
    if rng is None:
        raise ValueError("sampled w0 mode needs an RNG (or an explicit w0)")
    return SynapticState(normal_init((cfg.n, cfg.n), cfg.w0_std, rng), 0)


def encode_input(obs: Array, prev_action: int | None, prev_reward: float,
                 config: AgentConfig) -> Array:
    x = np.zeros(config.input_dim)
    d = config.obs_dim
    x[:d] = obs
    if prev_action is not None:
        x[d + int(prev_action)] = 1.0
    x[d + config.n_actions] = prev_reward
    return x


class StepOutput(NamedTuple):
    logits: object
    value: object       # 0-d
    state: SynapticState
    activation: object  # vS, the post-update plastic activation


def agent_step(tensors: dict, rule: PlasticRule, state: SynapticState, x,
               ops=RAW) -> StepOutput:
    """One timestep: embed the input, update the plastic weights, read out
    policy logits and a state-value estimate.

    ``tensors``/``rule`` may hold plain arrays or nodes of ``ops``'s tape;
    both paths execute the identical operation sequence.
    """
    h = ops.tanh(ops.add(ops.matvec(tensors["embed.w1"], x), tensors["embed.b1"]))
    v0 = ops.add(ops.matvec(tensors["embed.w2"], h), tensors["embed.b2"])
    v_s, w_s = recursive_update(state.w, v0, rule, ops)
    hg = ops.tanh(ops.add(ops.matvec(tensors["readout.w1"], v_s), tensors["readout.b1"]))
    logits = ops.add(ops.matvec(tensors["readout.w2"], hg), tensors["readout.b2"])
    value = ops.add(ops.dot(tensors["readout.wv"], hg), tensors["readout.bv"])
    return StepOutput(logits, value, SynapticState(w_s, state.t + 1), v_s)


def trace_tensors(tape: Tape, params: AgentParams) -> dict:
    """Leaf nodes for every trainable tensor (registration order sorted by
    name), plain arrays for frozen ones."""
    trainable = set(params.trainable_names())
    out: dict = {}
    for name in params.names():
        arr = params.tensors[name]
        out[name] = tape.leaf(arr, op=f"leaf:{name}") if name in trainable else arr
    return out


def sample_action(logits: Array, rng: np.random.Generator) -> int:
    """Draw from the softmax policy."""
    from .numcore import softmax

    return int(rng.choice(logits.shape[0], p=softmax(logits)))

"""Meta-learned synaptic plasticity for fast reinforcement learning.

A single square layer of plastic weights is rewritten at every interaction
step by a learned recursive rule built from two primitives — a nonlinear
read of the current weights and an outer-product write.  Everything around
that layer (embedding, readout, rule coefficients) is ordinary slow weights
trained with an actor-critic objective across tasks.
"""

from .agent import AgentConfig, AgentParams, init_agent
from .metatrain import TrainConfig, train, eval_policy
from .plastic import PlasticRule, recursive_update, read, write

__version__ = "0.1.0"

__all__ = [
    "AgentConfig", "AgentParams", "init_agent",
    "TrainConfig", "train", "eval_policy",
    "PlasticRule", "recursive_update", "read", "write",
    "__version__",
]

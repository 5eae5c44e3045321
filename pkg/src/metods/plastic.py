"""Single-layer plastic weights with a learned recursive read/write update.

The layer's state is a dense matrix ``W`` over its ``n`` neurons.  One update
round interleaves

* a read  ``phi(W, v) = tanh(W @ v)`` and
* a write ``psi(v)   = alpha * outer(v, rhs(v))``

for ``depth`` recursion steps, mixing every intermediate activation and weight
matrix back in through learned coefficient tables ``kappa`` and ``beta``:

    v[s] = sum_{l<s} kappa[s,l] * v[l]  +  kappa[s,s] * phi(W[s-1], v[s-1])
    W[s] = sum_{l<s} beta[s,l]  * W[l]  +  beta[s,s]  * psi(v[s-1])

``rhs(v)`` selects the write variant: the plain activation (``hebbian``), a
linear projection of it (``linear_projected``), or a small tanh MLP of it
(``mlp_projected``).

All functions take an ``ops`` backend (:data:`metods.numcore.RAW` or a
:class:`metods.numcore.Tape`), so the same code runs untraced rollouts and
traced, differentiable replays with bitwise-identical values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .numcore import RAW, Array

WRITE_RULES = ("hebbian", "linear_projected", "mlp_projected")


def coeff_count(depth: int) -> int:
    """Length of the flat kappa/beta vectors for a given recursion depth."""
    return depth * (depth + 3) // 2


def coeff_index(s: int, l: int) -> int:
    """Position of coefficient (s, l), s in 1..depth, l in 0..s, in the flat
    vector.  Row s occupies a contiguous block of s+1 entries."""
    if not 1 <= s or not 0 <= l <= s:
        raise IndexError(f"coefficient ({s}, {l}) outside the recursion table")
    return (s - 1) * (s + 2) // 2 + l


@dataclass
class PlasticRule:
    """Tensors and shape of one plastic update.  Fields may hold plain arrays
    (untraced) or tape nodes (traced); shapes refer to the array case."""

    depth: int
    rule: str                  # one of WRITE_RULES
    alpha: Any                 # (n, n) elementwise write gain
    kappa: Any                 # (coeff_count(depth),) activation mixing
    beta: Any                  # (coeff_count(depth),) weight mixing
    p1: Any = None             # (n, n) projection, linear/mlp rules
    p2: Any = None             # (n, n) second mlp layer

    def validate(self, n: int) -> None:
        if self.depth < 1:
            raise ValueError("recursion depth must be >= 1")
        if self.rule not in WRITE_RULES:
            raise ValueError(f"unknown write rule {self.rule!r}")
        want = (coeff_count(self.depth),)
        for name, tensor, shape in (
            ("alpha", self.alpha, (n, n)),
            ("kappa", self.kappa, want),
            ("beta", self.beta, want),
        ):
            if np.shape(tensor) != shape:
                raise ValueError(f"{name} has shape {np.shape(tensor)}, want {shape}")
        if self.rule != "hebbian" and np.shape(self.p1) != (n, n):
            raise ValueError("projection p1 must be (n, n)")
        if self.rule == "mlp_projected" and np.shape(self.p2) != (n, n):
            raise ValueError("projection p2 must be (n, n)")


def read(w, v, ops=RAW):
    """phi: retrieve an activation pattern from the weights."""
    return ops.tanh(ops.matvec(w, v))


def write(v, pr: PlasticRule, ops=RAW):
    """psi: outer-product weight proposal, gated elementwise by alpha."""
    if pr.rule == "hebbian":
        rhs = v
    elif pr.rule == "linear_projected":
        rhs = ops.matvec(pr.p1, v)
    elif pr.rule == "mlp_projected":
        rhs = ops.tanh(ops.matvec(pr.p2, ops.tanh(ops.matvec(pr.p1, v))))
    else:
        raise ValueError(f"unknown write rule {pr.rule!r}")
    return ops.mul(pr.alpha, ops.outer(v, rhs))


def recursive_update(w, v, pr: PlasticRule, ops=RAW):
    """Run the depth-``pr.depth`` read/write recursion from (w, v).

    Returns ``(v_out, w_out)``, the final activation and weight matrix.  With
    depth 1, kappa = (0, 1) and beta = (1, eta) this is exactly one Hebbian
    step: v' = tanh(W v), W' = W + eta * alpha * outer(v, v).
    """
    vs = [v]
    ws = [w]
    for s in range(1, pr.depth + 1):
        r = read(ws[s - 1], vs[s - 1], ops)
        delta = write(vs[s - 1], pr, ops)
        idx = [coeff_index(s, l) for l in range(s + 1)]
        vs.append(ops.lincomb(pr.kappa, idx, vs[:s] + [r]))
        ws.append(ops.lincomb(pr.beta, idx, ws[:s] + [delta]))
    return vs[-1], ws[-1]


def hebbian_coefficients(eta: float, dtype=np.float64) -> tuple[Array, Array]:
    """kappa/beta vectors that reduce a depth-1 update to the classical
    Hebbian rule with learning rate eta."""
    return (np.array([0.0, 1.0], dtype=dtype),
            np.array([1.0, float(eta)], dtype=dtype))

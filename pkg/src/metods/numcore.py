"""Dense float64 numerics: seeded RNG streams, initializers, and a tape-based
reverse-mode differentiation engine.

The engine records every traced operation on a :class:`Tape` and replays the
recording backwards with hand-written vector-Jacobian products.  Values live in
plain numpy arrays; a traced computation and its untraced twin (running the
same operations through :data:`RAW`) produce bitwise-identical forward values,
which the rollout/replay split in the training code relies on.

Conventions
-----------
* every tensor is a float64 ndarray; scalars are 0-d arrays,
* operations accept either a :class:`Node` or a plain array/float constant;
  constants take no part in differentiation,
* gradients are never mutated in place once exposed, so aliasing between the
  gradient buffers of sibling nodes is harmless.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

Array = np.ndarray


class NonFiniteGradientError(ArithmeticError):
    """A backward pass produced a NaN/Inf gradient; names the offending node."""


# ---------------------------------------------------------------------------
# Seeding.  All randomness in the package flows through PCG64 generators
# derived from a SeedSequence path, so substreams for tasks / episodes / inits
# are independent and reproducible regardless of evaluation order.
# ---------------------------------------------------------------------------


def rng_from(path: int | Sequence[int]) -> np.random.Generator:
    """Return a PCG64 generator for an integer seed or a path of integers.

    ``rng_from([master, 3, 1])`` and ``rng_from([master, 4, 1])`` are
    statistically independent streams; the same path always yields the same
    stream.
    """
    if isinstance(path, (int, np.integer)):
        path = [int(path)]
    else:
        path = [int(p) for p in path]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(path)))


def normal_init(shape: int | tuple[int, ...], std: float, rng: np.random.Generator,
                mean: float = 0.0) -> Array:
    """Gaussian tensor with the given elementwise mean/std."""
    return np.asarray(mean + std * rng.standard_normal(shape), dtype=np.float64)


def orthogonal_init(rows: int, cols: int, rng: np.random.Generator,
                    gain: float = 1.0) -> Array:
    """Orthogonal (rows x cols) matrix via QR of a Gaussian draw.

    The sign of each column of Q is fixed from the diagonal of R so the
    distribution is Haar-uniform rather than biased by LAPACK's sign
    convention.  For non-square shapes the result has orthonormal rows
    (rows < cols) or columns (rows > cols).
    """
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.asarray(gain * q[:rows, :cols], dtype=np.float64)


# ---------------------------------------------------------------------------
# Shared forward helpers.  Both backends call these so that traced and
# untraced executions agree bit for bit.
# ---------------------------------------------------------------------------


def log_softmax(logits: Array) -> Array:
    shifted = logits - logits.max()
    return shifted - math.log(np.exp(shifted).sum())


def softmax(logits: Array) -> Array:
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def _lincomb_value(coeffs: Array, indices: Sequence[int],
                   terms: Sequence[Array]) -> Array:
    acc = np.multiply(coeffs[indices[0]], terms[0])
    for k in range(1, len(terms)):
        acc += coeffs[indices[k]] * terms[k]
    return acc


def _entropy_value(logits: Array) -> tuple[Array, Array, Array]:
    logp = log_softmax(logits)
    p = np.exp(logp)
    return np.asarray(-(p * logp).sum()), p, logp


# ---------------------------------------------------------------------------
# Untraced backend: same operation vocabulary, plain ndarrays in and out.
# ---------------------------------------------------------------------------


class _RawOps:
    """Numpy twin of :class:`Tape`; every method mirrors a tape op."""

    @staticmethod
    def matvec(w, v):
        return w @ v

    @staticmethod
    def outer(u, v):
        return np.outer(u, v)

    @staticmethod
    def mul(a, b):
        return a * b

    @staticmethod
    def add(a, b):
        return a + b

    @staticmethod
    def sub(a, b):
        return a - b

    @staticmethod
    def addn(terms):
        acc = terms[0].copy() if isinstance(terms[0], np.ndarray) else terms[0]
        for t in terms[1:]:
            acc = acc + t
        return acc

    @staticmethod
    def scale(c, x):
        return c * x

    @staticmethod
    def tanh(x):
        return np.tanh(x)

    @staticmethod
    def dot(u, v):
        return np.asarray(u @ v)

    @staticmethod
    def sum(x):
        return np.asarray(x.sum())

    @staticmethod
    def mean(x):
        return np.asarray(x.mean())

    @staticmethod
    def pick(x, i):
        return np.asarray(x[i])

    @staticmethod
    def lincomb(coeffs, indices, terms):
        return _lincomb_value(coeffs, indices, terms)

    @staticmethod
    def logprob_categorical(logits, index):
        return np.asarray(log_softmax(logits)[index])

    @staticmethod
    def entropy_categorical(logits):
        return _entropy_value(logits)[0]


RAW = _RawOps()


# ---------------------------------------------------------------------------
# Traced backend.
# ---------------------------------------------------------------------------


class Node:
    """A value recorded on a tape.  ``idx`` is creation order."""

    __slots__ = ("data", "grad", "idx", "op")

    def __init__(self, data: Array, idx: int, op: str):
        self.data = data
        self.grad: Array | None = None
        self.idx = idx
        self.op = op

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Node#{self.idx}<{self.op}>{self.data.shape}"


def _val(x):
    return x.data if isinstance(x, Node) else x


class Tape:
    """Records operations in creation order; ``backward`` replays them in
    reverse, which is a valid topological order because every operand of a
    node is created before the node itself."""

    def __init__(self):
        self._nodes: list[Node] = []
        self._vjps: list = []
        self._leaves: list[Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    # -- construction -------------------------------------------------------

    def _push(self, data: Array, vjp, op: str) -> Node:
        node = Node(data, len(self._nodes), op)
        self._nodes.append(node)
        self._vjps.append(vjp)
        return node

    def leaf(self, data: Array, op: str = "leaf") -> Node:
        """Register a differentiable input (parameter or seeded state)."""
        node = self._push(np.asarray(data, dtype=np.float64), None, op)
        self._leaves.append(node)
        return node

    @property
    def leaves(self) -> list[Node]:
        return list(self._leaves)

    # -- operations ---------------------------------------------------------

    def matvec(self, w, v) -> Node:
        wv, vv = _val(w), _val(v)
        out = wv @ vv

        def vjp(g):
            if isinstance(w, Node):
                _acc(w, np.outer(g, vv))
            if isinstance(v, Node):
                _acc(v, wv.T @ g)

        return self._push(out, vjp, "matvec")

    def outer(self, u, v) -> Node:
        uv, vv = _val(u), _val(v)

        def vjp(g):
            if isinstance(u, Node):
                _acc(u, g @ vv)
            if isinstance(v, Node):
                _acc(v, g.T @ uv)

        return self._push(np.outer(uv, vv), vjp, "outer")

    def mul(self, a, b) -> Node:
        av, bv = _val(a), _val(b)

        def vjp(g):
            if isinstance(a, Node):
                _acc(a, g * bv)
            if isinstance(b, Node):
                _acc(b, g * av)

        return self._push(av * bv, vjp, "mul")

    def add(self, a, b) -> Node:
        def vjp(g):
            if isinstance(a, Node):
                _acc(a, g)
            if isinstance(b, Node):
                _acc(b, g)

        return self._push(_val(a) + _val(b), vjp, "add")

    def sub(self, a, b) -> Node:
        def vjp(g):
            if isinstance(a, Node):
                _acc(a, g)
            if isinstance(b, Node):
                _acc(b, -g)

        return self._push(_val(a) - _val(b), vjp, "sub")

    def addn(self, terms: Sequence) -> Node:
        vals = [_val(t) for t in terms]
        acc = vals[0].copy() if isinstance(vals[0], np.ndarray) else vals[0]
        for t in vals[1:]:
            acc = acc + t

        def vjp(g):
            for t in terms:
                if isinstance(t, Node):
                    _acc(t, g)

        return self._push(np.asarray(acc), vjp, "addn")

    def scale(self, c, x) -> Node:
        cv, xv = _val(c), _val(x)

        def vjp(g):
            if isinstance(c, Node):
                _acc(c, np.asarray(np.vdot(g, xv)))
            if isinstance(x, Node):
                _acc(x, cv * g)

        return self._push(cv * xv, vjp, "scale")

    def tanh(self, x) -> Node:
        out = np.tanh(_val(x))

        def vjp(g):
            if isinstance(x, Node):
                _acc(x, g * (1.0 - out * out))

        return self._push(out, vjp, "tanh")

    def dot(self, u, v) -> Node:
        uv, vv = _val(u), _val(v)

        def vjp(g):
            if isinstance(u, Node):
                _acc(u, g * vv)
            if isinstance(v, Node):
                _acc(v, g * uv)

        return self._push(np.asarray(uv @ vv), vjp, "dot")

    def sum(self, x) -> Node:
        xv = _val(x)

        def vjp(g):
            if isinstance(x, Node):
                _acc(x, np.full_like(xv, g))

        return self._push(np.asarray(xv.sum()), vjp, "sum")

    def mean(self, x) -> Node:
        xv = _val(x)

        def vjp(g):
            if isinstance(x, Node):
                _acc(x, np.full_like(xv, g / xv.size))

        return self._push(np.asarray(xv.mean()), vjp, "mean")

    def pick(self, x, i: int) -> Node:
        xv = _val(x)

        def vjp(g):
            if isinstance(x, Node):
                buf = np.zeros_like(xv)
                buf[i] = g
                _acc(x, buf)

        return self._push(np.asarray(xv[i]), vjp, "pick")

    def lincomb(self, coeffs, indices: Sequence[int], terms: Sequence) -> Node:
        """``sum_k coeffs[indices[k]] * terms[k]`` as a single node.

        ``coeffs`` is a flat vector (node or constant); terms may mix nodes
        and constants of one common shape.  Accumulation order is fixed
        (k = 0, 1, ...) in both backends.
        """
        cv = _val(coeffs)
        vals = [_val(t) for t in terms]
        indices = list(indices)
        out = _lincomb_value(cv, indices, vals)

        def vjp(g):
            if isinstance(coeffs, Node):
                gc = np.zeros_like(cv)
                for k, idx in enumerate(indices):
                    gc[idx] += np.vdot(g, vals[k])
                _acc(coeffs, gc)
            for k, t in enumerate(terms):
                if isinstance(t, Node):
                    _acc(t, cv[indices[k]] * g)

        return self._push(out, vjp, "lincomb")

    def logprob_categorical(self, logits, index: int) -> Node:
        lv = _val(logits)
        logp = log_softmax(lv)

        def vjp(g):
            if isinstance(logits, Node):
                grad = np.exp(logp) * (-g)
                grad[index] += g
                _acc(logits, grad)

        return self._push(np.asarray(logp[index]), vjp, "logprob")

    def entropy_categorical(self, logits) -> Node:
        lv = _val(logits)
        h, p, logp = _entropy_value(lv)

        def vjp(g):
            if isinstance(logits, Node):
                _acc(logits, g * (-p * (logp + h)))

        return self._push(h, vjp, "entropy")

    # -- reverse pass --------------------------------------------------------

    def backward(self, loss: Node | None = None,
                 seeds: Iterable[tuple[Node, Array | float]] = (),
                 check_finite: bool = True) -> dict[Node, Array]:
        """Propagate gradients from ``loss`` (seeded with 1.0) and/or explicit
        ``(node, gradient)`` seeds back to every reachable node.

        Returns a gradient per registered leaf; leaves the sweep never
        reached get zeros.  Raises :class:`NonFiniteGradientError` naming the
        first node whose accumulated gradient contains NaN/Inf.
        """
        start = -1
        if loss is not None:
            if loss.data.shape != ():
                raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
            loss.grad = np.asarray(1.0)
            start = loss.idx
        for node, g in seeds:
            seed = np.asarray(g, dtype=np.float64)
            if seed.shape != node.data.shape:
                raise ValueError(
                    f"seed shape {seed.shape} != node shape {node.data.shape}")
            node.grad = seed if node.grad is None else node.grad + seed
            start = max(start, node.idx)
        if start < 0:
            raise ValueError("backward needs a loss node or explicit seeds")

        nodes, vjps = self._nodes, self._vjps
        for i in range(start, -1, -1):
            node = nodes[i]
            g = node.grad
            if g is None:
                continue
            if check_finite and not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(
                    f"non-finite gradient at node #{node.idx} op={node.op}")
            vjp = vjps[i]
            if vjp is not None:
                vjp(g)

        out: dict[Node, Array] = {}
        for leaf in self._leaves:
            out[leaf] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        for node in nodes:
            node.grad = None
        return out


def _acc(node: Node, g: Array) -> None:
    # rebinding (never +=) keeps shared gradient buffers immutable
    node.grad = g if node.grad is None else node.grad + g

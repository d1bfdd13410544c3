"""Reverse-mode automatic differentiation on float64 numpy arrays, plus SGD.

A :class:`Graph` is a define-by-run tape: every operation on a :class:`Node`
appends a record holding the forward value, the parent nodes and a
vector-Jacobian product closure.  ``Graph.backward`` walks the tape in
reverse and accumulates adjoints.

    >>> g = Graph()
    >>> w = g.leaf(np.array(3.0))
    >>> g.backward(w * w)[0]
    array(6.)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64


class ContractError(ValueError):
    """A caller broke an operation's precondition."""


class GraphStateError(RuntimeError):
    """The graph cannot serve the request in its current state."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Node:
    __slots__ = ("graph", "index", "value", "parents", "vjp", "requires_grad", "name")

    def __init__(self, graph, index, value, parents, vjp, requires_grad, name=None):
        self.graph = graph
        self.index = index
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<Node{label} #{self.index} shape={self.shape}>"

    def _lift(self, other) -> "Node":
        if isinstance(other, Node):
            if other.graph is not self.graph:
                raise ContractError("cannot combine nodes from different graphs")
            return other
        return self.graph.constant(other)

    def __add__(self, other):
        return add(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(self._lift(other)))

    def __rsub__(self, other):
        return add(self._lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Node):
            raise ContractError("division by a node is not supported")
        return mul(self, self.graph.constant(1.0 / np.asarray(other, dtype=DTYPE)))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, self._lift(other))

    def __getitem__(self, key):
        return getitem(self, key)


class Graph:
    """Tape of nodes in evaluation order.

    ``values`` and ``adjoints`` are indexed by node position; adjoints exist
    only after a call to :meth:`backward`.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.adjoints: list[np.ndarray | None] = []
        self._cleared = False

    @property
    def values(self) -> list[np.ndarray]:
        return [n.value for n in self.nodes]

    def _record(self, value, parents=(), vjp=None, requires_grad=None, name=None) -> Node:
        if self._cleared:
            raise GraphStateError("graph was cleared; build a new one")
        value = np.asarray(value, dtype=DTYPE)
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        node = Node(self, len(self.nodes), value, tuple(parents), vjp, requires_grad, name)
        self.nodes.append(node)
        return node

    def leaf(self, value, name: str | None = None) -> Node:
        """Differentiable input or parameter."""
        return self._record(np.array(value, dtype=DTYPE), requires_grad=True, name=name)

    def constant(self, value, name: str | None = None) -> Node:
        return self._record(np.array(value, dtype=DTYPE), requires_grad=False, name=name)

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes if n.requires_grad and not n.parents]

    def clear(self) -> None:
        """Drop the tape; later use of this graph raises GraphStateError."""
        self.nodes = []
        self.adjoints = []
        self._cleared = True

    def backward(self, root: Node, wrt: Sequence[Node] | None = None) -> list[np.ndarray]:
        """Gradients of scalar ``root`` with respect to ``wrt`` (default: all leaves).

        Leaves that ``root`` does not depend on get all-zero gradients.
        """
        if self._cleared or root.graph is not self or root.index >= len(self.nodes) \
                or self.nodes[root.index] is not root:
            raise GraphStateError("root was not evaluated on this graph")
        if root.value.size != 1:
            raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
        if wrt is None:
            wrt = self.leaves()
        adj: list[np.ndarray | None] = [None] * len(self.nodes)
        adj[root.index] = np.ones_like(root.value)
        for node in reversed(self.nodes[: root.index + 1]):
            g = adj[node.index]
            if g is None or not node.parents:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if adj[parent.index] is None:
                    adj[parent.index] = np.array(pg, dtype=DTYPE)
                else:
                    adj[parent.index] = adj[parent.index] + pg
        self.adjoints = adj
        out = []
        for w in wrt:
            if w.graph is not self:
                raise ContractError("gradient requested for a node of another graph")
            a = adj[w.index]
            out.append(np.zeros_like(w.value) if a is None else a.reshape(w.shape))
        return out


# ---------------------------------------------------------------------------
# elementary operations


def add(a: Node, b: Node) -> Node:
    sa, sb = a.shape, b.shape
    return a.graph._record(
        a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def neg(a: Node) -> Node:
    return a.graph._record(-a.value, (a,), lambda g: (-g,))


def mul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    return a.graph._record(
        av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def matmul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2:
        raise ContractError(f"matmul expects 2-D operands, got {av.shape} and {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ContractError(f"matmul shape mismatch {av.shape} @ {bv.shape}")
    return a.graph._record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return a.graph._record(out, (a,), lambda g: (g * out,))


def log(a: Node) -> Node:
    av = a.value
    return a.graph._record(np.log(av), (a,), lambda g: (g / av,))


def relu(a: Node) -> Node:
    mask = a.value > 0
    return a.graph._record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def absolute(a: Node) -> Node:
    s = np.sign(a.value)
    return a.graph._record(np.abs(a.value), (a,), lambda g: (g * s,))


def square(a: Node) -> Node:
    av = a.value
    return a.graph._record(av * av, (a,), lambda g: (2.0 * g * av,))


def sum(a: Node, axis=None, keepdims: bool = False) -> Node:  # noqa: A001
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return a.graph._record(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a: Node, axis=None) -> Node:
    count = a.value.size if axis is None else a.value.shape[axis]
    return sum(a, axis=axis) / count


def reshape(a: Node, shape) -> Node:
    old = a.shape
    return a.graph._record(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a: Node, key) -> Node:
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, key, g)
        return (out,)

    return a.graph._record(a.value[key], (a,), vjp)


def take_labels(a: Node, labels: np.ndarray) -> Node:
    """Entries ``a[i, labels[i]]`` of an N×C node."""
    labels = np.asarray(labels, dtype=np.intp)
    rows = np.arange(a.shape[0])
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape, dtype=DTYPE)
        out[rows, labels] = g
        return (out,)

    return a.graph._record(a.value[rows, labels], (a,), vjp)


def log_softmax(a: Node, axis: int = -1) -> Node:
    z = a.value - a.value.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    soft = np.exp(out)
    return a.graph._record(
        out, (a,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),)
    )


def softmax_array(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def conv2d(x: Node, weight: Node, bias: Node) -> Node:
    """3×3 (or k×k, odd k) stride-1 convolution with same padding.

    x: (N, C, H, W); weight: (F, C, k, k); bias: (F,).
    """
    xv, wv = x.value, weight.value
    if xv.ndim != 4 or wv.ndim != 4 or xv.shape[1] != wv.shape[1]:
        raise ContractError(f"conv2d shape mismatch {xv.shape} * {wv.shape}")
    n, c, h, w = xv.shape
    f, _, k, _ = wv.shape
    p = k // 2
    padded = np.pad(xv, ((0, 0), (0, 0), (p, p), (p, p)))
    # patches: (N, H, W, C, k, k)
    patches = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(2, 3))
    patches = patches.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)
    wmat = wv.reshape(f, c * k * k).T
    out = (patches @ wmat + bias.value).reshape(n, h, w, f).transpose(0, 3, 1, 2)

    def vjp(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * h * w, f)
        gw = (patches.T @ gm).T.reshape(wv.shape)
        gb = gm.sum(axis=0)
        gp = (gm @ wmat.T).reshape(n, h, w, c, k, k)
        gpad = np.zeros_like(padded)
        for i in range(k):
            for j in range(k):
                gpad[:, :, i:i + h, j:j + w] += gp[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return gpad[:, :, p:p + h, p:p + w], gw, gb

    return x.graph._record(out, (x, weight, bias), vjp)


def max_pool2d(x: Node) -> Node:
    """2×2 max pooling, stride 2; H and W must be even."""
    xv = x.value
    n, c, h, w = xv.shape
    if h % 2 or w % 2:
        raise ContractError(f"max_pool2d needs even spatial extents, got {h}x{w}")
    blocks = xv.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gb = np.zeros(blocks.shape, dtype=DTYPE)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gb.reshape(n, c, h, w),)

    return x.graph._record(out, (x,), vjp)


# ---------------------------------------------------------------------------
# gradient checking


def finite_difference_check(
    fn: Callable[..., Node], inputs: Sequence[np.ndarray], step: float = 1e-3
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn(graph, *leaves)`` must build and return a scalar node.  The error per
    entry is ``|analytic - numeric| / max(1, |analytic|)``.  Non-differentiable
    points simply yield a large number; nothing is raised.
    """
    if step <= 0:
        raise ContractError("step must be positive")
    inputs = [np.array(v, dtype=DTYPE) for v in inputs]
    g = Graph()
    leaves = [g.leaf(v) for v in inputs]
    analytic = g.backward(fn(g, *leaves), leaves)

    def evaluate(vals):
        h = Graph()
        return float(fn(h, *[h.constant(v) for v in vals]).value)

    worst = 0.0
    for k, base in enumerate(inputs):
        for idx in np.ndindex(base.shape):
            vals = list(inputs)
            plus, minus = base.copy(), base.copy()
            plus[idx] += step
            minus[idx] -= step
            vals[k] = plus
            fp = evaluate(vals)
            vals[k] = minus
            fm = evaluate(vals)
            numeric = (fp - fm) / (2 * step)
            a = analytic[k][idx]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ContractError("learning_rate must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ContractError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ContractError("weight_decay must be nonnegative")


def sgd_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState
) -> dict[str, np.ndarray]:
    """One SGD update with heavy-ball momentum and L2 weight decay.

    ``v <- momentum * v + grad + weight_decay * param``;
    ``param <- param - lr * v``.  Velocity buffers start at zero.
    Returns a new parameter dict; ``params`` is left untouched.
    """
    if params.keys() != grads.keys():
        raise ContractError("parameter and gradient names differ")
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        v = state.momentum * v + g + state.weight_decay * p
        state.velocity[name] = v
        out[name] = p - state.learning_rate * v
    return out

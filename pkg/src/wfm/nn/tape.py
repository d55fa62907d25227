"""Minimal reverse-mode differentiation over numpy arrays.

Forward passes build a graph of :class:`Node` objects; ``backward``
walks it once in reverse topological order.  The primitive set is
exactly what the models need: matmul, broadcasting add/mul, relu,
layernorm, softmax, logsumexp, concat, reshape, transpose and sums.
Reductions use a fixed order, so results are bit-stable across runs.
"""

from __future__ import annotations

import numpy as np


class TapeError(RuntimeError):
    pass


class Node:
    __slots__ = ("value", "parents", "name")

    def __init__(self, value, parents=(), name=None):
        self.value = np.asarray(value, dtype=float)
        self.parents = parents  # tuple of (Node, vjp callable)
        self.name = name

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Registry of leaf (parameter) nodes for one loss evaluation."""

    def __init__(self):
        self.leaves: dict[str, Node] = {}
        self.used = False

    def leaf(self, name: str, value) -> Node:
        if name in self.leaves:
            return self.leaves[name]
        node = Node(value, name=name)
        self.leaves[name] = node
        return node


def constant(value) -> Node:
    return Node(value)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(grad, shape):
    """Sum grad down to the given shape (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    return Node(
        a.value + b.value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ),
    )


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    return Node(
        a.value - b.value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(-g, b.value.shape)),
        ),
    )


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    return Node(
        a.value * b.value,
        parents=(
            (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
        ),
    )


def scale(a, s: float) -> Node:
    a = _as_node(a)
    return Node(a.value * s, parents=((a, lambda g: g * s),))


def matmul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    out = np.matmul(a.value, b.value)

    def vjp_a(g):
        ga = np.matmul(g, np.swapaxes(b.value, -1, -2))
        return _unbroadcast(ga, a.value.shape)

    def vjp_b(g):
        gb = np.matmul(np.swapaxes(a.value, -1, -2), g)
        return _unbroadcast(gb, b.value.shape)

    return Node(out, parents=((a, vjp_a), (b, vjp_b)))


def relu(a) -> Node:
    a = _as_node(a)
    mask = a.value > 0
    return Node(np.where(mask, a.value, 0.0), parents=((a, lambda g: g * mask),))


def layernorm(x, gain, bias, eps: float = 1e-5) -> Node:
    """Normalize over the last axis, then affine with gain and bias."""
    x, gain, bias = _as_node(x), _as_node(gain), _as_node(bias)
    mu = x.value.mean(axis=-1, keepdims=True)
    var = x.value.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    z = (x.value - mu) * inv
    out = z * gain.value + bias.value

    def vjp_x(g):
        gz = g * gain.value
        n = x.value.shape[-1]
        term = gz - gz.mean(axis=-1, keepdims=True) - z * (gz * z).mean(
            axis=-1, keepdims=True
        )
        del n
        return term * inv

    def vjp_gain(g):
        return _unbroadcast(g * z, gain.value.shape)

    def vjp_bias(g):
        return _unbroadcast(g, bias.value.shape)

    return Node(out, parents=((x, vjp_x), (gain, vjp_gain), (bias, vjp_bias)))


def softmax(a) -> Node:
    a = _as_node(a)
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return y * (g - (g * y).sum(axis=-1, keepdims=True))

    return Node(y, parents=((a, vjp),))


def logsumexp(a) -> Node:
    """Log-sum-exp over the last axis."""
    a = _as_node(a)
    amax = a.value.max(axis=-1, keepdims=True)
    e = np.exp(a.value - amax)
    s = e.sum(axis=-1, keepdims=True)
    out = np.squeeze(np.log(s) + amax, axis=-1)

    def vjp(g):
        return np.expand_dims(g, -1) * (e / s)

    return Node(out, parents=((a, vjp),))


def concat(nodes, axis: int = -1) -> Node:
    nodes = [_as_node(n) for n in nodes]
    values = [n.value for n in nodes]
    out = np.concatenate(values, axis=axis)
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(idx):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[idx], offsets[idx + 1])
            return g[tuple(sl)]

        return vjp

    return Node(out, parents=tuple((n, make_vjp(i)) for i, n in enumerate(nodes)))


def reshape(a, shape) -> Node:
    a = _as_node(a)
    old = a.value.shape
    return Node(a.value.reshape(shape), parents=((a, lambda g: g.reshape(old)),))


def transpose(a, axes) -> Node:
    a = _as_node(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Node(
        np.transpose(a.value, axes),
        parents=((a, lambda g: np.transpose(g, inverse)),),
    )


def ssum(a) -> Node:
    """Sum of all entries (scalar output)."""
    a = _as_node(a)
    return Node(
        np.asarray(a.value.sum()),
        parents=((a, lambda g: np.broadcast_to(g, a.value.shape).copy()),),
    )


def backward(tape: Tape, root: Node) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar root w.r.t. the tape's leaves.

    The tape is single-use: a second backward through the same tape
    raises.
    """
    if tape.used:
        raise TapeError("tape has already been consumed by a backward pass")
    if root.value.size != 1:
        raise TapeError(f"backward requires a scalar root, got shape {root.shape}")
    tape.used = True

    # reverse topological order via iterative post-order DFS
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
        if node.name is not None:
            grads[id(node)] = g  # keep leaf gradients addressable

    out = {}
    for name, leaf in tape.leaves.items():
        g = grads.get(id(leaf))
        out[name] = np.zeros_like(leaf.value) if g is None else g
    return out

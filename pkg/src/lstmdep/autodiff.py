"""Small reverse-mode automatic differentiation over vectors and matrices.

A :class:`Graph` records every operation eagerly: the forward value is
computed when the node is built, and a closure remembers how to push the
output gradient back to the parents.  Parameters live in a
:class:`ParameterStore` and are referenced by name, so one store can back
many short-lived graphs (one per sentence or per mini-batch).
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Node:
    __slots__ = ("id", "op", "parents", "value", "grad", "_backward", "name", "argmax", "_outer")

    def __init__(self, id, op, parents, value, backward=None, name=None):
        self.id = id
        self.op = op
        self.parents = parents
        self.value = value
        self.grad = None
        self._backward = backward
        self.name = name
        self.argmax = None
        self._outer = None  # deferred (g, x) pairs of matvec weight gradients

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.value.shape})"


def _accum(node: Node, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        node.grad += g


def _flush_outer(node: Node) -> None:
    # one matmul instead of many outer products
    gs, xs = zip(*node._outer)
    node._outer = None
    _accum(node, np.stack(gs).T @ np.stack(xs))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=DTYPE)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > 2:
        raise ShapeError(f"tensors have rank <= 2, got shape {arr.shape}")
    return arr


class Graph:
    """Expression graph bound to a mapping of named parameter arrays."""

    def __init__(self, params: Mapping[str, np.ndarray] | None = None):
        self.params = params if params is not None else {}
        self.nodes: list[Node] = []
        self._param_nodes: dict[str, Node] = {}

    def _make(self, op, parents, value, backward=None, name=None) -> Node:
        node = Node(len(self.nodes), op, parents, value, backward, name)
        self.nodes.append(node)
        return node

    def op_counts(self) -> Counter:
        return Counter(n.op for n in self.nodes)

    # -- leaves -------------------------------------------------------------

    def constant(self, value) -> Node:
        return self._make("constant", (), _as_array(value))

    def parameter(self, name: str) -> Node:
        node = self._param_nodes.get(name)
        if node is None:
            try:
                value = self.params[name]
            except KeyError:
                raise KeyError(f"unknown parameter {name!r}") from None
            node = self._make("parameter", (), value, name=name)
            self._param_nodes[name] = node
        return node

    # -- elementwise ----------------------------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        try:
            value = a.value + b.value
        except ValueError:
            raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None
        if value.shape != a.shape and value.shape != b.shape:
            raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")

        def backward(g):
            _accum(a, _unbroadcast(g, a.shape))
            _accum(b, _unbroadcast(g, b.shape))

        return self._make("add", (a, b), value, backward)

    def add_all(self, nodes: Sequence[Node]) -> Node:
        """n-ary sum of equal-shape nodes."""
        if not nodes:
            raise ValueError("add_all needs at least one node")
        shape = nodes[0].shape
        for n in nodes:
            if n.shape != shape:
                raise ShapeError(f"add_all: incompatible shapes {shape} and {n.shape}")
        value = np.sum([n.value for n in nodes], axis=0)

        def backward(g):
            for n in nodes:
                _accum(n, g)

        return self._make("add", tuple(nodes), value, backward)

    def sub(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")

        def backward(g):
            _accum(a, g)
            _accum(b, -g)

        return self._make("sub", (a, b), a.value - b.value, backward)

    def mul(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

        def backward(g):
            _accum(a, g * b.value)
            _accum(b, g * a.value)

        return self._make("mul", (a, b), a.value * b.value, backward)

    def scalar_add(self, a: Node, c: float) -> Node:
        def backward(g):
            _accum(a, g)

        return self._make("scalar_add", (a,), a.value + c, backward)

    def scalar_mul(self, a: Node, c: float) -> Node:
        def backward(g):
            _accum(a, g * c)

        return self._make("scalar_mul", (a,), a.value * c, backward)

    def tanh(self, a: Node) -> Node:
        value = np.tanh(a.value)

        def backward(g):
            _accum(a, g * (1.0 - value * value))

        return self._make("tanh", (a,), value, backward)

    def sigmoid(self, a: Node) -> Node:
        # split by sign so exp never overflows
        x = a.value
        e = np.exp(-np.abs(x))
        value = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

        def backward(g):
            _accum(a, g * value * (1.0 - value))

        return self._make("sigmoid", (a,), value, backward)

    # -- linear algebra -------------------------------------------------------

    def matvec(self, m: Node, x: Node) -> Node:
        if m.value.ndim != 2 or x.value.ndim != 1 or m.shape[1] != x.shape[0]:
            raise ShapeError(f"matvec: cannot multiply {m.shape} by {x.shape}")

        def backward(g):
            if m._outer is None:
                m._outer = []
            m._outer.append((g, x.value))
            _accum(x, m.value.T @ g)

        return self._make("matvec", (m, x), m.value @ x.value, backward)

    def concat(self, nodes: Sequence[Node]) -> Node:
        for n in nodes:
            if n.value.ndim != 1:
                raise ShapeError(f"concat: expected vectors, got shape {n.shape}")
        sizes = [n.shape[0] for n in nodes]
        value = np.concatenate([n.value for n in nodes])

        def backward(g):
            start = 0
            for n, size in zip(nodes, sizes):
                _accum(n, g[start:start + size])
                start += size

        return self._make("concat", tuple(nodes), value, backward)

    def slice(self, a: Node, start: int, stop: int) -> Node:
        if a.value.ndim != 1 or not 0 <= start < stop <= a.shape[0]:
            raise ShapeError(f"slice [{start}:{stop}] out of range for shape {a.shape}")

        def backward(g):
            if a.grad is None:
                a.grad = np.zeros(a.shape)
            a.grad[start:stop] += g

        return self._make("slice", (a,), a.value[start:stop], backward)

    def columns(self, m: Node, start: int, stop: int) -> Node:
        if m.value.ndim != 2 or not 0 <= start < stop <= m.shape[1]:
            raise ShapeError(f"columns [{start}:{stop}] out of range for shape {m.shape}")

        def backward(g):
            if m.grad is None:
                m.grad = np.zeros(m.shape)
            m.grad[:, start:stop] += g

        return self._make("columns", (m,), m.value[:, start:stop], backward)

    def stack(self, rows: Sequence[Node]) -> Node:
        """Stack equal-width vectors into a matrix, one per row."""
        width = rows[0].shape
        for r in rows:
            if r.value.ndim != 1 or r.shape != width:
                raise ShapeError(f"stack: incompatible shapes {width} and {r.shape}")
        value = np.stack([r.value for r in rows])

        def backward(g):
            for i, r in enumerate(rows):
                _accum(r, g[i])

        return self._make("stack", tuple(rows), value, backward)

    def outer_add(self, a: Node, b: Node) -> Node:
        """Row (i*len(b) + j) of the result is a[i] + b[j]."""
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[1]:
            raise ShapeError(f"outer_add: incompatible shapes {a.shape} and {b.shape}")
        p, q, h = a.shape[0], b.shape[0], a.shape[1]
        value = (a.value[:, None, :] + b.value[None, :, :]).reshape(p * q, h)

        def backward(g):
            g3 = g.reshape(p, q, h)
            _accum(a, g3.sum(axis=1))
            _accum(b, g3.sum(axis=0))

        return self._make("outer_add", (a, b), value, backward)

    # -- indexing and reductions --------------------------------------------------

    def pick(self, a: Node, index: int) -> Node:
        """Element of a vector, or row of a matrix."""
        if not 0 <= index < a.shape[0]:
            raise ShapeError(f"pick: index {index} out of range for shape {a.shape}")
        value = a.value[index]
        if a.value.ndim == 1:
            value = value.reshape(1)

        def backward(g):
            if a.grad is None:
                a.grad = np.zeros(a.shape)
            if a.value.ndim == 1:
                a.grad[index] += g[0]
            else:
                a.grad[index] += g

        return self._make("pick", (a,), value.copy(), backward)

    def gather_sum(self, a: Node, indices: Sequence[int]) -> Node:
        """Sum of the vector elements at ``indices`` (repeats count twice)."""
        if a.value.ndim != 1:
            raise ShapeError(f"gather_sum: expected a vector, got shape {a.shape}")
        idx = np.asarray(indices, dtype=np.int64)

        def backward(g):
            if a.grad is None:
                a.grad = np.zeros(a.shape)
            np.add.at(a.grad, idx, g[0])

        return self._make("gather_sum", (a,), np.array([a.value[idx].sum()]), backward)

    def max(self, a: Node, indices: Sequence[int] | None = None) -> Node:
        """Maximum over a vector (optionally a subset of its indices).

        The gradient goes to the single winning element; ties resolve to the
        lowest index.
        """
        if a.value.ndim != 1:
            raise ShapeError(f"max: expected a vector, got shape {a.shape}")
        if indices is None:
            best = int(np.argmax(a.value))
        else:
            indices = sorted(indices)
            if not indices:
                raise ValueError("max over an empty index set")
            best = max(indices, key=lambda i: (a.value[i], -i))

        def backward(g):
            if a.grad is None:
                a.grad = np.zeros(a.shape)
            a.grad[best] += g[0]

        node = self._make("max", (a,), np.array([a.value[best]]), backward)
        node.argmax = best
        return node

    def sum(self, a: Node) -> Node:
        def backward(g):
            _accum(a, np.full(a.shape, g[0]))

        return self._make("sum", (a,), np.array([a.value.sum()]), backward)

    def hinge(self, a: Node) -> Node:
        """max(0, a) for a scalar node."""
        return self.max(self.concat([self.constant(0.0), a]))

    # -- backward -------------------------------------------------------------

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss for every parameter the store knows about.

        Parameters the loss does not depend on get an all-zero gradient.
        """
        if loss.shape != (1,):
            raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
        for node in self.nodes:
            node.grad = None
            node._outer = None
        loss.grad = np.ones(1)
        # every consumer of a node has a larger id, so its gradient is complete
        # (deferred weight terms included) by the time the loop reaches it
        for node in reversed(self.nodes[: loss.id + 1]):
            if node._outer is not None:
                _flush_outer(node)
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        grads = {}
        for name, value in self.params.items():
            node = self._param_nodes.get(name)
            if node is not None and node.grad is not None:
                grads[name] = node.grad
            else:
                grads[name] = np.zeros_like(value)
        return grads


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


class ParameterStore:
    """Named parameter arrays plus Adam moment estimates."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.values: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def __contains__(self, name):
        return name in self.values

    def __getitem__(self, name):
        return self.values[name]

    def add(self, name: str, value) -> np.ndarray:
        if name in self.values:
            raise KeyError(f"parameter {name!r} already exists")
        arr = _as_array(value).copy()
        self.values[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return arr

    def add_matrix(self, name, rows, cols, rng):
        return self.add(name, glorot(rng, rows, cols))

    def add_bias(self, name, size):
        return self.add(name, np.zeros(size))

    def add_embedding(self, name, rows, cols, rng):
        return self.add(name, rng.uniform(-0.1, 0.1, size=(rows, cols)))

    def graph(self) -> Graph:
        return Graph(self.values)

    def snapshot(self) -> dict[str, np.ndarray]:
        """Read-only copy of the current values, safe to share across threads."""
        frozen = {}
        for name, value in self.values.items():
            copy = value.copy()
            copy.flags.writeable = False
            frozen[name] = copy
        return frozen

    def adam_step(self, grads: Mapping[str, np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for name, g in grads.items():
            if name not in self.values:
                raise KeyError(f"gradient for unknown parameter {name!r}")
            if g.shape != self.values[name].shape:
                raise ShapeError(
                    f"gradient for {name!r} has shape {g.shape}, parameter has {self.values[name].shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {name!r}; update refused")
        self.step += 1
        t = self.step
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        step_size = lr / c1
        scale = 1.0 / math.sqrt(c2)
        for name, g in grads.items():
            m, v, p = self.m[name], self.v[name], self.values[name]
            # m <- b1 m + (1 - b1) g ;  v <- b2 v + (1 - b2) g^2
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            tmp = np.square(g)
            tmp *= 1.0 - self.beta2
            v += tmp
            # p <- p - lr * mhat / (sqrt(vhat) + eps)
            np.sqrt(v, out=tmp)
            tmp *= scale
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= step_size
            p -= tmp

    def total_size(self) -> int:
        return sum(v.size for v in self.values.values())


def numeric_gradient(f: Callable[[], float], array: np.ndarray, step=1e-6,
                     indices: Iterable | None = None) -> np.ndarray:
    """Central finite differences of ``f`` w.r.t. entries of ``array`` (in place)."""
    grad = np.zeros_like(array)
    it = indices if indices is not None else np.ndindex(array.shape)
    for idx in it:
        old = array[idx]
        array[idx] = old + step
        up = f()
        array[idx] = old - step
        down = f()
        array[idx] = old
        grad[idx] = (up - down) / (2 * step)
    return grad

"""Minimal reverse-mode differentiation over dense float64 arrays.

Graphs are built symbolically from named leaves (:func:`var`) and a small
set of op constructors, then evaluated on a :class:`Tape`::

    x = var("x")
    y = reduce_sum(mul(x, x))
    tape = Tape()
    tape.forward(y, {"x": np.array([3.0])})
    tape.backward()["x"]        # -> array([6.])

A graph can be evaluated on any number of tapes; tapes are single-threaded
and hold no state shared with other tapes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "ShapeError",
    "TapeError",
    "Tensor",
    "Node",
    "Tape",
    "var",
    "const",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "reduce_sum",
    "concat",
    "activation",
    "activation_deriv",
    "forward",
    "backward",
    "finite_diff_gradient",
    "ACTIVATIONS",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for an op."""


class TapeError(RuntimeError):
    """Tape used out of order (e.g. backward before forward)."""


@dataclass(frozen=True)
class Tensor:
    """Dense row-major float64 array with explicit shape."""

    shape: tuple
    data: np.ndarray

    def __post_init__(self):
        if int(np.prod(self.shape, dtype=np.int64)) != self.data.size:
            raise ShapeError(f"shape {self.shape} does not match {self.data.size} entries")

    @classmethod
    def of(cls, value) -> "Tensor":
        arr = np.ascontiguousarray(value, dtype=np.float64)
        return cls(tuple(arr.shape), arr.ravel())

    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))


# --------------------------------------------------------------------------
# activations: value, derivative, second derivative

def _relu(t, _):
    return np.maximum(t, 0.0)


def _relu_d(t, _):
    # subgradient at 0 fixed to 0
    return (t > 0).astype(np.float64)


def _leaky(t, s):
    return np.where(t > 0, t, s * t)


def _leaky_d(t, s):
    return np.where(t > 0, 1.0, s)


def _softplus(t, beta):
    u = beta * t
    return (np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))) / beta


def _sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def _softplus_d(t, beta):
    return _sigmoid(beta * t)


def _softplus_dd(t, beta):
    s = _sigmoid(beta * t)
    return beta * s * (1.0 - s)


def _zero(t, _):
    return np.zeros_like(t)


# name -> (value, first derivative, second derivative)
ACTIVATIONS: dict[str, tuple[Callable, Callable, Callable]] = {
    "relu": (_relu, _relu_d, _zero),
    "leaky_relu": (_leaky, _leaky_d, _zero),
    "softplus": (_softplus, _softplus_d, _softplus_dd),
}


# --------------------------------------------------------------------------
# graph nodes

_ids = itertools.count()


@dataclass(eq=False)
class Node:
    """One vertex of a computation graph.

    ``kind`` is one of ``leaf``, ``const``, ``matmul``, ``add``, ``mul``,
    ``scale``, ``reduce_sum``, ``concat``, ``act``, ``act_d``.
    """

    kind: str
    inputs: tuple = ()
    attrs: dict = field(default_factory=dict)
    name: str | None = None
    uid: int = field(default_factory=lambda: next(_ids))

    def __repr__(self):
        label = self.name if self.name else self.kind
        return f"Node({label}#{self.uid})"

    # sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def var(name: str) -> Node:
    return Node("leaf", name=name)


def const(value) -> Node:
    return Node("const", attrs={"value": np.asarray(value, dtype=np.float64)})


def matmul(a: Node, b: Node) -> Node:
    """``a @ b`` for 1-D or 2-D operands."""
    return Node("matmul", (a, b))


def add(a: Node, b: Node) -> Node:
    """Elementwise sum; ``b`` may be a trailing-shape vector broadcast over rows."""
    return Node("add", (a, b))


def sub(a: Node, b: Node) -> Node:
    return add(a, scale(b, -1.0))


def mul(a: Node, b: Node) -> Node:
    """Elementwise product of equal shapes."""
    return Node("mul", (a, b))


def scale(a: Node, c: float) -> Node:
    return Node("scale", (a,), {"c": float(c)})


def reduce_sum(a: Node, axis: int | None = None) -> Node:
    return Node("reduce_sum", (a,), {"axis": axis})


def concat(nodes, axis: int = -1) -> Node:
    return Node("concat", tuple(nodes), {"axis": axis})


def activation(a: Node, kind: str, param: float = 0.0) -> Node:
    if kind not in ACTIVATIONS:
        raise ValueError(f"unknown activation {kind!r}")
    return Node("act", (a,), {"kind": kind, "param": float(param)})


def activation_deriv(a: Node, kind: str, param: float = 0.0) -> Node:
    """Elementwise derivative of an activation, itself differentiable."""
    if kind not in ACTIVATIONS:
        raise ValueError(f"unknown activation {kind!r}")
    return Node("act_d", (a,), {"kind": kind, "param": float(param)})


# --------------------------------------------------------------------------
# evaluation

_TOPO_CACHE: dict[int, tuple[Node, list[Node]]] = {}


def _topo(root: Node) -> list[Node]:
    hit = _TOPO_CACHE.get(root.uid)
    if hit is not None and hit[0] is root:
        return hit[1]
    order = _topo_build(root)
    if len(_TOPO_CACHE) > 512:
        _TOPO_CACHE.clear()
    _TOPO_CACHE[root.uid] = (root, order)
    return order


def _topo_build(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.uid in seen:
            continue
        seen.add(node.uid)
        stack.append((node, True))
        for child in reversed(node.inputs):
            if child.uid not in seen:
                stack.append((child, False))
    return order


def _leaves(root: Node) -> list[Node]:
    return [n for n in _topo(root) if n.kind == "leaf"]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tape:
    """Records one forward evaluation of a graph for a later backward pass."""

    def __init__(self):
        self._values: dict[int, np.ndarray] | None = None
        self._order: list[Node] = []
        self._root: Node | None = None
        self._names: list[str] = []

    def forward(self, root: Node, inputs: Mapping[str, object]) -> Tensor:
        order = _topo(root)
        values: dict[int, np.ndarray] = {}
        names = []
        for node in order:
            if node.kind == "leaf":
                if node.name not in inputs:
                    raise KeyError(f"input {node.name!r} is not bound")
                values[node.uid] = np.asarray(inputs[node.name], dtype=np.float64)
                names.append(node.name)
            elif node.kind == "const":
                values[node.uid] = node.attrs["value"]
            else:
                args = [values[c.uid] for c in node.inputs]
                values[node.uid] = self._eval(node, args)
        self._values, self._order, self._root = values, order, root
        self._names = names
        return Tensor.of(values[root.uid])

    @staticmethod
    def _eval(node: Node, args):
        k = node.kind
        if k == "matmul":
            a, b = args
            if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
                raise ShapeError(f"matmul: shapes {a.shape} and {b.shape}")
            return a @ b
        if k == "add":
            a, b = args
            if a.shape != b.shape and not (b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape):
                raise ShapeError(f"add: shapes {a.shape} and {b.shape}")
            return a + b
        if k == "mul":
            a, b = args
            if a.shape != b.shape:
                raise ShapeError(f"mul: shapes {a.shape} and {b.shape}")
            return a * b
        if k == "scale":
            return node.attrs["c"] * args[0]
        if k == "reduce_sum":
            return np.asarray(args[0].sum(axis=node.attrs["axis"]))
        if k == "concat":
            try:
                return np.concatenate(args, axis=node.attrs["axis"])
            except ValueError as exc:
                raise ShapeError(f"concat: shapes {[a.shape for a in args]}") from exc
        if k == "act":
            f = ACTIVATIONS[node.attrs["kind"]][0]
            return f(args[0], node.attrs["param"])
        if k == "act_d":
            f = ACTIVATIONS[node.attrs["kind"]][1]
            return f(args[0], node.attrs["param"])
        raise ValueError(f"unknown op kind {k!r}")

    def value(self, node: Node) -> np.ndarray:
        """Value of an intermediate node recorded by the last forward pass."""
        if self._values is None:
            raise TapeError("forward has not been run on this tape")
        return self._values[node.uid]

    def backward(self, seed=None) -> dict[str, np.ndarray]:
        """Gradients of ``<seed, root>`` with respect to every named leaf.

        ``seed`` defaults to ones (i.e. the gradient of ``sum(root)``).
        Leaves that do not influence the root get zero arrays.
        """
        if self._values is None:
            raise TapeError("backward called before forward")
        values = self._values
        root = self._root
        out_val = values[root.uid]
        if seed is None:
            seed = np.ones_like(out_val)
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != out_val.shape:
            raise ShapeError(f"seed shape {seed.shape} != output shape {out_val.shape}")
        grads: dict[int, np.ndarray] = {root.uid: seed}
        for node in reversed(self._order):
            g = grads.pop(node.uid, None)
            if g is None or node.kind in ("leaf", "const"):
                if g is not None:
                    grads[node.uid] = g
                continue
            args = [values[c.uid] for c in node.inputs]
            for child, cg in zip(node.inputs, self._vjp(node, args, values[node.uid], g)):
                if cg is None or child.kind == "const":
                    continue
                if child.uid in grads:
                    grads[child.uid] = grads[child.uid] + cg
                else:
                    grads[child.uid] = cg
        result: dict[str, np.ndarray] = {}
        for node in self._order:
            if node.kind != "leaf":
                continue
            g = grads.get(node.uid)
            if g is None:
                g = np.zeros_like(values[node.uid])
            result[node.name] = result[node.name] + g if node.name in result else g
        return result

    @staticmethod
    def _vjp(node: Node, args, out, g):
        k = node.kind
        if k == "matmul":
            a, b = args
            if a.ndim == 2 and b.ndim == 2:
                return g @ b.T, a.T @ g
            if a.ndim == 2 and b.ndim == 1:
                return np.outer(g, b), a.T @ g
            if a.ndim == 1 and b.ndim == 2:
                return b @ g, np.outer(a, g)
            return g * b, g * a
        if k == "add":
            a, b = args
            return g, _unbroadcast(g, b.shape)
        if k == "mul":
            a, b = args
            return g * b, g * a
        if k == "scale":
            return (node.attrs["c"] * g,)
        if k == "reduce_sum":
            a = args[0]
            axis = node.attrs["axis"]
            if axis is None:
                return (np.broadcast_to(g, a.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)
        if k == "concat":
            axis = node.attrs["axis"]
            sizes = np.cumsum([a.shape[axis] for a in args])[:-1]
            return tuple(np.split(g, sizes, axis=axis))
        if k == "act":
            d = ACTIVATIONS[node.attrs["kind"]][1]
            return (g * d(args[0], node.attrs["param"]),)
        if k == "act_d":
            dd = ACTIVATIONS[node.attrs["kind"]][2]
            return (g * dd(args[0], node.attrs["param"]),)
        raise ValueError(f"unknown op kind {k!r}")


def forward(root: Node, inputs: Mapping[str, object], tape: Tape | None = None) -> tuple[Tensor, Tape]:
    tape = tape or Tape()
    return tape.forward(root, inputs), tape


def backward(tape: Tape, seed=None) -> dict[str, np.ndarray]:
    return tape.backward(seed)


def finite_diff_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.ravel()
    g = np.empty_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return g.reshape(x.shape)

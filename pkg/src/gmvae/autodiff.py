"""Reverse-mode automatic differentiation on a dynamic tape.

A :class:`Graph` is a Wengert list: every operation appends a node holding
its kind, parent ids, attributes and cached forward value. Values are
computed eagerly when a node is recorded, and :meth:`Graph.eval` can
recompute the ancestors of a node after leaf values change (used by the
finite-difference checker). :meth:`Graph.backward` walks the tape in
reverse and accumulates adjoints.

All values are float64 numpy arrays. Broadcasting is deliberately narrow:
elementwise binary ops require identical shapes, and the only implicit
broadcast is :func:`add_bias` (a vector added along the last axis).
"""

from __future__ import annotations

import builtins

import numpy as np

from .errors import NumericalError, ShapeError

_OPS = {}


def _register(kind):
    def deco(pair_factory):
        _OPS[kind] = pair_factory()
        return pair_factory

    return deco


class _Node:
    __slots__ = ("kind", "parents", "attrs", "value", "grad", "requires_grad", "name")

    def __init__(self, kind, parents, attrs, value, requires_grad, name=None):
        self.kind = kind
        self.parents = parents
        self.attrs = attrs
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name


class Tensor:
    """Handle to a node in a :class:`Graph`."""

    __slots__ = ("graph", "id")

    def __init__(self, graph, node_id):
        self.graph = graph
        self.id = node_id

    @property
    def node(self):
        return self.graph.nodes[self.id]

    @property
    def value(self) -> np.ndarray:
        return self.graph.nodes[self.id].value

    @property
    def grad(self):
        return self.graph.nodes[self.id].grad

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        n = self.node
        return f"Tensor(id={self.id}, kind={n.kind}, shape={self.shape})"

    def _lift(self, other):
        if isinstance(other, Tensor):
            if other.graph is not self.graph:
                raise ValueError("tensors belong to different graphs")
            return other
        return self.graph.const(other)

    def __add__(self, other):
        if np.isscalar(other):
            return add_const(self, other)
        return add(self, self._lift(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if np.isscalar(other):
            return add_const(self, -other)
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        if np.isscalar(other):
            return add_const(neg(self), other)
        return sub(self._lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, self._lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / other)
        return div(self, self._lift(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, self._lift(other))


class Graph:
    """A single-use computation tape.

    ``check_finite`` makes every recorded op verify its output; a NaN or Inf
    raises :class:`NumericalError` naming the offending node.
    """

    def __init__(self, check_finite: bool = True):
        self.nodes: list[_Node] = []
        self.check_finite = check_finite

    def __len__(self):
        return len(self.nodes)

    # leaves

    def _leaf(self, value, requires_grad, name):
        value = np.array(value, dtype=np.float64)
        if self.check_finite and not np.isfinite(value).all():
            raise NumericalError(f"non-finite leaf value {name or ''}".rstrip(), node=len(self.nodes))
        self.nodes.append(_Node("leaf", (), None, value, requires_grad, name))
        return Tensor(self, len(self.nodes) - 1)

    def param(self, value, name: str) -> Tensor:
        return self._leaf(value, True, name)

    def const(self, value) -> Tensor:
        return self._leaf(value, False, None)

    def set_value(self, leaf: Tensor, value) -> None:
        node = self.nodes[leaf.id]
        if node.kind != "leaf":
            raise ValueError(f"node {leaf.id} is not a leaf")
        value = np.array(value, dtype=np.float64)
        if value.shape != node.value.shape:
            raise ShapeError(f"leaf {leaf.id}: expected shape {node.value.shape}, got {value.shape}")
        node.value = value

    def params(self) -> dict[str, Tensor]:
        return {n.name: Tensor(self, i) for i, n in enumerate(self.nodes) if n.kind == "leaf" and n.requires_grad}

    # recording and evaluation

    def record(self, kind: str, parents: tuple, attrs: dict | None = None) -> Tensor:
        forward, _ = _OPS[kind]
        ids = tuple(p.id for p in parents)
        for p in parents:
            if p.graph is not self:
                raise ValueError("tensors belong to different graphs")
        vals = [self.nodes[i].value for i in ids]
        value = forward(vals, attrs)
        node_id = len(self.nodes)
        self._check(value, node_id, kind)
        requires_grad = any(self.nodes[i].requires_grad for i in ids)
        self.nodes.append(_Node(kind, ids, attrs, value, requires_grad))
        return Tensor(self, node_id)

    def _check(self, value, node_id, kind):
        if self.check_finite and not np.isfinite(value).all():
            raise NumericalError(f"non-finite value produced by node {node_id} ({kind})", node=node_id)

    def _ancestors(self, root_id):
        seen = set()
        stack = [root_id]
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            stack.extend(self.nodes[i].parents)
        return sorted(seen)

    def eval(self, root: Tensor) -> np.ndarray:
        """Recompute every ancestor of ``root`` from the current leaf values."""
        for i in self._ancestors(root.id):
            node = self.nodes[i]
            if node.kind == "leaf":
                continue
            forward, _ = _OPS[node.kind]
            node.value = forward([self.nodes[p].value for p in node.parents], node.attrs)
            self._check(node.value, i, node.kind)
        return self.nodes[root.id].value

    def backward(self, root: Tensor) -> dict[str, np.ndarray]:
        """Accumulate d(root)/d(node) into every node's ``grad``.

        Returns the adjoints of all named parameter leaves; parameters that
        do not influence ``root`` get zeros.
        """
        root_node = self.nodes[root.id]
        if root_node.value.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {root_node.value.shape}")
        for n in self.nodes:
            n.grad = None
        root_node.grad = np.ones_like(root_node.value)
        for i in range(root.id, -1, -1):
            node = self.nodes[i]
            if node.grad is None or not node.requires_grad or node.kind == "leaf":
                continue
            _, backward = _OPS[node.kind]
            parents = [self.nodes[p] for p in node.parents]
            pgrads = backward(node.grad, node.value, [p.value for p in parents], node.attrs)
            for p, g in zip(parents, pgrads):
                if g is None or not p.requires_grad:
                    continue
                if p.grad is None:
                    p.grad = np.array(g, dtype=np.float64)
                else:
                    p.grad = p.grad + g
        out = {}
        for n in self.nodes:
            if n.kind == "leaf" and n.requires_grad:
                out[n.name] = n.grad if n.grad is not None else np.zeros_like(n.value)
        return out


def eval(graph: Graph, root: Tensor) -> np.ndarray:  # noqa: A001 - mirrors the tape API
    return graph.eval(root)


def backward(graph: Graph, root: Tensor) -> dict[str, np.ndarray]:
    return graph.backward(root)


# op definitions: each registers (forward(vals, attrs), backward(g, out, vals, attrs))


def _same_shape(kind, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


@_register("add")
def _add():
    def fwd(v, a):
        _same_shape("add", v[0], v[1])
        return v[0] + v[1]

    return fwd, lambda g, out, v, a: (g, g)


@_register("sub")
def _sub():
    def fwd(v, a):
        _same_shape("sub", v[0], v[1])
        return v[0] - v[1]

    return fwd, lambda g, out, v, a: (g, -g)


@_register("mul")
def _mul():
    def fwd(v, a):
        _same_shape("mul", v[0], v[1])
        return v[0] * v[1]

    return fwd, lambda g, out, v, a: (g * v[1], g * v[0])


@_register("div")
def _div():
    def fwd(v, a):
        _same_shape("div", v[0], v[1])
        return v[0] / v[1]

    return fwd, lambda g, out, v, a: (g / v[1], -g * out / v[1])


@_register("neg")
def _neg():
    return (lambda v, a: -v[0]), (lambda g, out, v, a: (-g,))


@_register("scale")
def _scale():
    return (lambda v, a: v[0] * a["c"]), (lambda g, out, v, a: (g * a["c"],))


@_register("add_const")
def _add_const():
    return (lambda v, a: v[0] + a["c"]), (lambda g, out, v, a: (g,))


@_register("add_bias")
def _add_bias():
    def fwd(v, a):
        x, b = v
        if b.ndim != 1 or x.ndim < 1 or x.shape[-1] != b.shape[0]:
            raise ShapeError(f"add_bias: cannot add bias {b.shape} to {x.shape}")
        return x + b

    def bwd(g, out, v, a):
        return g, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return fwd, bwd


@_register("matmul")
def _matmul():
    def fwd(v, a):
        x, w = v
        if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {x.shape} @ {w.shape}")
        return x @ w

    def bwd(g, out, v, a):
        x, w = v
        return g @ w.T, x.T @ g

    return fwd, bwd


@_register("relu")
def _relu():
    return (lambda v, a: np.maximum(v[0], 0.0)), (lambda g, out, v, a: (g * (v[0] > 0),))


@_register("tanh")
def _tanh():
    return (lambda v, a: np.tanh(v[0])), (lambda g, out, v, a: (g * (1.0 - out * out),))


@_register("sigmoid")
def _sigmoid():
    def fwd(v, a):
        x = v[0]
        e = np.exp(-np.abs(x))
        return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    return fwd, lambda g, out, v, a: (g * out * (1.0 - out),)


@_register("exp")
def _exp():
    def fwd(v, a):
        with np.errstate(over="ignore"):
            return np.exp(v[0])

    return fwd, lambda g, out, v, a: (g * out,)


@_register("log")
def _log():
    def fwd(v, a):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(v[0])

    return fwd, lambda g, out, v, a: (g / v[0],)


@_register("sqrt")
def _sqrt():
    def fwd(v, a):
        with np.errstate(invalid="ignore"):
            return np.sqrt(v[0])

    return fwd, lambda g, out, v, a: (g * 0.5 / out,)


@_register("square")
def _square():
    return (lambda v, a: v[0] * v[0]), (lambda g, out, v, a: (2.0 * g * v[0],))


@_register("maximum_const")
def _maximum_const():
    # gradient is exactly zero wherever x <= c
    return (lambda v, a: np.maximum(v[0], a["c"])), (lambda g, out, v, a: (g * (v[0] > a["c"]),))


def _check_axis(x, axis, kind):
    if axis is not None and not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"{kind}: axis {axis} out of range for shape {x.shape}")


@_register("sum")
def _sum():
    def fwd(v, a):
        _check_axis(v[0], a["axis"], "sum")
        return np.asarray(v[0].sum(axis=a["axis"]))

    def bwd(g, out, v, a):
        axis = a["axis"]
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, v[0].shape).copy(),)

    return fwd, bwd


@_register("mean")
def _mean():
    def fwd(v, a):
        _check_axis(v[0], a["axis"], "mean")
        return np.asarray(v[0].mean(axis=a["axis"]))

    def bwd(g, out, v, a):
        x, axis = v[0], a["axis"]
        n = x.size if axis is None else x.shape[axis]
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return fwd, bwd


def _lse(x):
    m = x.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True)))[..., 0]


@_register("logsumexp")
def _logsumexp():
    def fwd(v, a):
        if v[0].ndim < 1 or v[0].shape[-1] == 0:
            raise ShapeError(f"logsumexp: needs a non-empty last axis, got {v[0].shape}")
        return _lse(v[0])

    return fwd, lambda g, out, v, a: (g[..., None] * np.exp(v[0] - out[..., None]),)


@_register("softmax")
def _softmax():
    def fwd(v, a):
        x = v[0]
        if x.ndim < 1 or x.shape[-1] == 0:
            raise ShapeError(f"softmax: needs a non-empty last axis, got {x.shape}")
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def bwd(g, out, v, a):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return fwd, bwd


@_register("concat")
def _concat():
    def fwd(v, a):
        try:
            return np.concatenate(v, axis=a["axis"])
        except ValueError as exc:
            raise ShapeError(f"concat: {exc}") from None

    def bwd(g, out, v, a):
        cuts = np.cumsum([x.shape[a["axis"]] for x in v])[:-1]
        return tuple(np.split(g, cuts, axis=a["axis"]))

    return fwd, bwd


@_register("slice")
def _slice():
    def index(a, ndim):
        idx = [builtins.slice(None)] * ndim
        idx[a["axis"]] = builtins.slice(a["start"], a["stop"])
        return tuple(idx)

    def fwd(v, a):
        x = v[0]
        _check_axis(x, a["axis"], "slice")
        n = x.shape[a["axis"]]
        if not 0 <= a["start"] < a["stop"] <= n:
            raise ShapeError(f"slice: [{a['start']}:{a['stop']}] out of range for extent {n}")
        return x[index(a, x.ndim)]

    def bwd(g, out, v, a):
        full = np.zeros_like(v[0])
        full[index(a, full.ndim)] = g
        return (full,)

    return fwd, bwd


@_register("reshape")
def _reshape():
    def fwd(v, a):
        try:
            return v[0].reshape(a["shape"])
        except ValueError as exc:
            raise ShapeError(f"reshape: {exc}") from None

    return fwd, lambda g, out, v, a: (g.reshape(v[0].shape),)


@_register("expand")
def _expand():
    def fwd(v, a):
        x = v[0]
        if not 0 <= a["axis"] <= x.ndim:
            raise ShapeError(f"expand: axis {a['axis']} out of range for shape {x.shape}")
        return np.repeat(np.expand_dims(x, a["axis"]), a["n"], axis=a["axis"])

    return fwd, lambda g, out, v, a: (g.sum(axis=a["axis"]),)


# public op constructors


def add(a: Tensor, b: Tensor) -> Tensor:
    return a.graph.record("add", (a, b))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return a.graph.record("sub", (a, b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return a.graph.record("mul", (a, b))


def div(a: Tensor, b: Tensor) -> Tensor:
    return a.graph.record("div", (a, b))


def neg(x: Tensor) -> Tensor:
    return x.graph.record("neg", (x,))


def scale(x: Tensor, c: float) -> Tensor:
    return x.graph.record("scale", (x,), {"c": float(c)})


def add_const(x: Tensor, c: float) -> Tensor:
    return x.graph.record("add_const", (x,), {"c": float(c)})


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    return x.graph.record("add_bias", (x, b))


def matmul(x: Tensor, w: Tensor) -> Tensor:
    return x.graph.record("matmul", (x, w))


def relu(x: Tensor) -> Tensor:
    return x.graph.record("relu", (x,))


def tanh(x: Tensor) -> Tensor:
    return x.graph.record("tanh", (x,))


def sigmoid(x: Tensor) -> Tensor:
    return x.graph.record("sigmoid", (x,))


def exp(x: Tensor) -> Tensor:
    return x.graph.record("exp", (x,))


def log(x: Tensor) -> Tensor:
    return x.graph.record("log", (x,))


def sqrt(x: Tensor) -> Tensor:
    return x.graph.record("sqrt", (x,))


def square(x: Tensor) -> Tensor:
    return x.graph.record("square", (x,))


def maximum_const(x: Tensor, c: float) -> Tensor:
    """``max(x, c)`` elementwise; the gradient vanishes where ``x <= c``."""
    return x.graph.record("maximum_const", (x,), {"c": float(c)})


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    return x.graph.record("sum", (x,), {"axis": axis})


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    return x.graph.record("mean", (x,), {"axis": axis})


def logsumexp(x: Tensor) -> Tensor:
    """Log-sum-exp over the last axis, computed with max subtraction."""
    return x.graph.record("logsumexp", (x,))


def softmax(x: Tensor) -> Tensor:
    return x.graph.record("softmax", (x,))


def concat(xs, axis: int = 0) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ShapeError("concat: nothing to concatenate")
    return xs[0].graph.record("concat", tuple(xs), {"axis": axis})


def slice(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:  # noqa: A001
    axis = axis % x.ndim if x.ndim else axis
    return x.graph.record("slice", (x,), {"axis": axis, "start": int(start), "stop": int(stop)})


def reshape(x: Tensor, shape) -> Tensor:
    return x.graph.record("reshape", (x,), {"shape": tuple(shape)})


def expand(x: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis at ``axis`` and repeat ``x`` ``n`` times along it."""
    return x.graph.record("expand", (x,), {"axis": int(axis), "n": int(n)})


def log_softmax(x: Tensor) -> Tensor:
    return x - expand(logsumexp(x), x.ndim - 1, x.shape[-1])


PRIMITIVES = tuple(sorted(_OPS))


# finite-difference checking


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numerical_gradient(graph: Graph, root: Tensor, leaf: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar ``root`` w.r.t. ``leaf``."""
    base = leaf.value.copy()
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for i in range(base.size):
        bumped = base.copy().reshape(-1)
        bumped[i] += step
        graph.set_value(leaf, bumped.reshape(base.shape))
        up = float(graph.eval(root).sum())
        bumped[i] -= 2 * step
        graph.set_value(leaf, bumped.reshape(base.shape))
        down = float(graph.eval(root).sum())
        flat[i] = (up - down) / (2 * step)
    graph.set_value(leaf, base)
    graph.eval(root)
    return grad


def gradcheck(graph: Graph, root: Tensor, leaves=None, step: float = 1e-5, floor: float = 1e-8) -> float:
    """Largest elementwise relative error between backprop and central differences."""
    if leaves is None:
        leaves = list(graph.params().values())
    graph.eval(root)
    graph.backward(root)
    analytic = {leaf.id: leaf.grad.copy() for leaf in leaves}
    worst = 0.0
    for leaf in leaves:
        numeric = numerical_gradient(graph, root, leaf, step)
        if numeric.size:
            worst = max(worst, float(relative_error(analytic[leaf.id], numeric, floor).max()))
    return worst

"""Reverse-mode automatic differentiation with higher-order support.

Every backward rule is written in terms of the differentiable primitives
below, so gradients produced with ``create_graph=True`` are ordinary nodes
and can be differentiated again. This is what makes the meta gradient
(a derivative through an SGD step) exact.

All values are float64 numpy arrays and are frozen (``writeable=False``)
once wrapped in a :class:`Node`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Mapping

import numpy as np

_GRAPH_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Build constant nodes only (no parents, no backward) inside the block."""
    global _GRAPH_ENABLED
    previous = _GRAPH_ENABLED
    _GRAPH_ENABLED = False
    try:
        yield
    finally:
        _GRAPH_ENABLED = previous


class ShapeError(ValueError):
    pass


def _freeze(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    arr.flags.writeable = False
    return arr


class Node:
    """An immutable value in the computation graph."""

    __slots__ = ("value", "parents", "op", "requires_grad", "_backward", "__weakref__")

    def __init__(self, value, parents=(), op="const", backward=None, requires_grad=False):
        self.value = value if isinstance(value, np.ndarray) and not value.flags.writeable else _freeze(value)
        self.parents = tuple(parents)
        self.op = op
        self.requires_grad = requires_grad
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def param(value) -> Node:
    """A leaf that gradients can be taken with respect to."""
    return Node(value, op="param", requires_grad=True)


def const(value) -> Node:
    return Node(value, op="const", requires_grad=False)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def _make(value, parents, op, backward):
    """Wrap a forward result; attach graph structure only when it is needed."""
    if _GRAPH_ENABLED and any(p.requires_grad for p in parents):
        return Node(value, parents, op, backward, requires_grad=True)
    return Node(value, op=op)


def _shape_error(op, a, b):
    return ShapeError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# shape plumbing primitives


def sum_to(x, shape) -> Node:
    """Sum ``x`` down to ``shape`` (the adjoint of broadcasting)."""
    x = as_node(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1
    )
    value = x.value.sum(axis=axes, keepdims=True).reshape(shape) if axes else x.value.reshape(shape)
    return _make(value, (x,), "sum_to", lambda g: (broadcast_to(g, x.shape),))


def broadcast_to(x, shape) -> Node:
    x = as_node(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        value = np.broadcast_to(x.value, shape)
    except ValueError:
        raise _shape_error("broadcast_to", x.shape, shape) from None
    return _make(value.copy(), (x,), "broadcast_to", lambda g: (sum_to(g, x.shape),))


def reshape(x, shape) -> Node:
    x = as_node(x)
    try:
        value = x.value.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", x.shape, shape) from None
    return _make(value, (x,), "reshape", lambda g: (reshape(g, x.shape),))


def transpose(x) -> Node:
    x = as_node(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {x.shape}")
    return _make(x.value.T.copy(), (x,), "transpose", lambda g: (transpose(g),))


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("add", a, b)
    return _make(a.value + b.value, (a, b), "add", lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)))


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("sub", a, b)
    return _make(a.value - b.value, (a, b), "sub", lambda g: (sum_to(g, a.shape), sum_to(neg(g), b.shape)))


def neg(a) -> Node:
    a = as_node(a)
    return _make(-a.value, (a,), "neg", lambda g: (neg(g),))


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("mul", a, b)
    return _make(
        a.value * b.value, (a, b), "mul", lambda g: (sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape))
    )


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("div", a, b)

    def backward(g):
        ga = div(g, b)
        return sum_to(ga, a.shape), sum_to(neg(mul(ga, div(a, b))), b.shape)

    return _make(a.value / b.value, (a, b), "div", backward)


def matmul(a, b) -> Node:
    """Matrix product of two 2-D nodes."""
    a, b = as_node(a), as_node(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    return _make(a.value @ b.value, (a, b), "matmul", lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)))


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def tanh(x) -> Node:
    x = as_node(x)
    out_value = np.tanh(x.value)

    def backward(g):
        y = tanh(x)
        return (mul(g, sub(1.0, mul(y, y))),)

    return _make(out_value, (x,), "tanh", backward)


def exp(x) -> Node:
    x = as_node(x)

    def backward(g):
        return (mul(g, exp(x)),)

    return _make(np.exp(x.value), (x,), "exp", backward)


def log(x) -> Node:
    x = as_node(x)
    return _make(np.log(x.value), (x,), "log", lambda g: (div(g, x),))


# ---------------------------------------------------------------------------
# reductions


def sum(x, axis=None, keepdims=False) -> Node:  # noqa: A001 - mirrors numpy
    x = as_node(x)
    value = x.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = reshape(g, np.expand_dims(value, axis).shape)
        elif axis is None and not keepdims:
            g = reshape(g, (1,) * x.ndim)
        return (broadcast_to(g, x.shape),)

    return _make(value, (x,), "sum", backward)


def mean(x, axis=None, keepdims=False) -> Node:
    x = as_node(x)
    count = x.value.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# row-wise softmax family


def _row_check(op, x):
    if x.ndim not in (1, 2) or x.shape[-1] == 0:
        raise ShapeError(f"{op}: expected a nonempty vector or matrix, got shape {x.shape}")


def softmax(x) -> Node:
    """Softmax over the last axis."""
    x = as_node(x)
    _row_check("softmax", x)
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        y = softmax(x)
        gy = mul(g, y)
        return (sub(gy, mul(y, sum(gy, axis=-1, keepdims=True))),)

    return _make(value, (x,), "softmax", backward)


def log_softmax(x) -> Node:
    """Log-softmax over the last axis (stable)."""
    x = as_node(x)
    _row_check("log_softmax", x)
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    value = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(g):
        return (sub(g, mul(softmax(x), sum(g, axis=-1, keepdims=True))),)

    return _make(value, (x,), "log_softmax", backward)


# ---------------------------------------------------------------------------
# indexing


def _check_index(op, idx, bound):
    if idx.size and (idx.min() < 0 or idx.max() >= bound):
        raise IndexError(f"{op}: index out of range [0, {bound})")


def gather(x, index) -> Node:
    """Pick ``x[r, index[r]]`` for every row ``r`` of a matrix (or ``x[index]`` of a vector)."""
    x = as_node(x)
    idx = np.asarray(index, dtype=np.int64)
    if x.ndim == 1:
        _check_index("gather", idx, x.shape[0])
        return _make(x.value[idx], (x,), "gather", lambda g: (scatter(g, idx, x.shape),))
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise _shape_error("gather", x.shape, idx.shape)
    _check_index("gather", idx, x.shape[1])
    rows = np.arange(x.shape[0])
    return _make(x.value[rows, idx], (x,), "gather", lambda g: (scatter(g, idx, x.shape),))


def scatter(values, index, shape) -> Node:
    """Adjoint of :func:`gather`: place ``values`` at the gathered positions of a zero array."""
    values = as_node(values)
    idx = np.asarray(index, dtype=np.int64)
    out = np.zeros(shape)
    if len(shape) == 1:
        np.add.at(out, idx, values.value)
    else:
        out[np.arange(shape[0]), idx] = values.value
    return _make(out, (values,), "scatter", lambda g: (gather(g, idx),))


def take_rows(table, ids) -> Node:
    """Embedding lookup: ``table[ids]`` with ``ids`` a 1-D integer array."""
    table = as_node(table)
    idx = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2 or idx.ndim != 1:
        raise _shape_error("take_rows", table.shape, idx.shape)
    _check_index("take_rows", idx, table.shape[0])
    return _make(table.value[idx], (table,), "take_rows", lambda g: (add_rows(g, idx, table.shape[0]),))


def add_rows(rows, ids, n_rows) -> Node:
    """Adjoint of :func:`take_rows`: accumulate rows into a zero table."""
    rows = as_node(rows)
    idx = np.asarray(ids, dtype=np.int64)
    out = np.zeros((n_rows, rows.shape[1]))
    np.add.at(out, idx, rows.value)
    return _make(out, (rows,), "add_rows", lambda g: (take_rows(g, idx),))


# ---------------------------------------------------------------------------
# reverse pass


def _topological_order(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(loss: Node, wrt, create_graph: bool = False):
    """Gradients of scalar ``loss`` with respect to ``wrt``.

    ``wrt`` is a mapping name -> Node or a sequence of Nodes; the result has
    the same structure. With ``create_graph`` the gradients are differentiable
    nodes, otherwise plain arrays. Parameters the loss does not depend on get
    zero gradients.
    """
    if loss.value.size != 1:
        raise ShapeError(f"grad: loss must be scalar, got shape {loss.shape}")
    named = isinstance(wrt, Mapping)
    targets = list(wrt.values()) if named else list(wrt)

    keep = {id(t) for t in targets}
    grads: dict[int, Node] = {}
    ctx = contextlib.nullcontext() if create_graph else no_grad()
    with ctx:
        if loss.requires_grad:
            grads[id(loss)] = const(np.ones_like(loss.value))
            for node in reversed(_topological_order(loss)):
                g = grads.get(id(node)) if id(node) in keep else grads.pop(id(node), None)
                if g is None or node._backward is None:
                    continue
                for parent, pg in zip(node.parents, node._backward(g)):
                    if not parent.requires_grad:
                        continue
                    prev = grads.get(id(parent))
                    grads[id(parent)] = pg if prev is None else add(prev, pg)

    out = []
    for t in targets:
        g = grads.get(id(t))
        if g is None:
            g = const(np.zeros_like(t.value))
        out.append(g if create_graph else np.array(g.value))
    if named:
        return dict(zip(wrt.keys(), out))
    return out


def finite_difference_gradient(loss_fn: Callable, params: Mapping[str, np.ndarray], h: float = 1e-5):
    """Central-difference estimate of d loss_fn(params) / d params.

    ``loss_fn`` takes a mapping name -> array and returns a float (or a
    scalar Node). Parameters are perturbed one coordinate at a time on copies.
    """
    if h <= 0:
        raise ValueError("h must be positive")

    def evaluate(p):
        out = loss_fn(p)
        return float(out.value if isinstance(out, Node) else out)

    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    result = {}
    for name, arr in base.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = evaluate(base)
            flat[i] = orig - h
            f_minus = evaluate(base)
            flat[i] = orig
            g.reshape(-1)[i] = (f_plus - f_minus) / (2 * h)
        result[name] = g
    return result


def params_from(arrays: Mapping[str, np.ndarray]) -> dict[str, Node]:
    return {k: param(v) for k, v in arrays.items()}


def values_of(nodes: Mapping[str, Node]) -> dict[str, np.ndarray]:
    return {k: np.array(v.value) for k, v in nodes.items()}


__all__ = [
    "Node", "ShapeError", "no_grad", "param", "const", "as_node",
    "add", "sub", "neg", "mul", "div", "matmul", "transpose", "reshape",
    "sum_to", "broadcast_to", "tanh", "exp", "log", "sum", "mean",
    "softmax", "log_softmax", "gather", "scatter", "take_rows", "add_rows",
    "grad", "finite_difference_gradient", "params_from", "values_of",
]


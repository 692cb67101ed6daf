"""Minimal reverse-mode differentiation over dense 2-D float64 arrays.

A :class:`Graph` records primitive applications in creation order, which is
always a valid topological order. Nodes are evaluated eagerly when all of
their inputs are bound, so the common define-by-run style works::

    g = Graph()
    w = g.leaf(np.ones((3, 2)), name="w", trainable=True)
    x = g.constant(np.arange(6.0).reshape(2, 3))
    loss = mean(relu(x @ w))
    g.backward(loss)        # {"w": ...}

Leaves may also be created without a value and bound later with
:meth:`Graph.bind`; :meth:`Graph.forward` then (re)evaluates every node.

Every value is a C-contiguous float64 array with ``ndim == 2``; scalars are
``(1, 1)``. Max and select nodes route gradient to a single entry; ties go to
the lowest column index.
"""

import numpy as np

from .exceptions import GraphStateError, ShapeError

__all__ = [
    "Graph",
    "Node",
    "as_matrix",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "relu",
    "hinge",
    "sigmoid",
    "exp",
    "log",
    "square",
    "clip_min",
    "row_softmax",
    "row_log_softmax",
    "row_max",
    "select",
    "transpose",
    "normalize_rows",
    "sum_all",
    "mean",
]


def as_matrix(value):
    """Coerce ``value`` to a contiguous 2-D float64 array.

    0-d inputs become ``(1, 1)``; 1-d inputs become a single row.
    """
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim > 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return np.ascontiguousarray(np.atleast_2d(arr))


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True).reshape(shape)


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None


# Each primitive: forward(values, attrs) -> (out, cache);
# backward(g, values, out, cache, attrs) -> tuple of input gradients.

def _matmul_fwd(v, a):
    x, y = v
    if x.shape[1] != y.shape[0]:
        raise ShapeError(f"matmul {x.shape} @ {y.shape}")
    return x @ y, None


def _matmul_bwd(g, v, out, cache, a):
    x, y = v
    return g @ y.T, x.T @ g


def _add_fwd(v, a):
    _broadcast_shape(*v)
    return v[0] + v[1], None


def _add_bwd(g, v, out, cache, a):
    return _unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)


def _sub_fwd(v, a):
    _broadcast_shape(*v)
    return v[0] - v[1], None


def _sub_bwd(g, v, out, cache, a):
    return _unbroadcast(g, v[0].shape), -_unbroadcast(g, v[1].shape)


def _mul_fwd(v, a):
    _broadcast_shape(*v)
    return v[0] * v[1], None


def _mul_bwd(g, v, out, cache, a):
    x, y = v
    return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)


def _scale_fwd(v, a):
    return v[0] * a["c"], None


def _scale_bwd(g, v, out, cache, a):
    return (g * a["c"],)


def _add_scalar_fwd(v, a):
    return v[0] + a["c"], None


def _add_scalar_bwd(g, v, out, cache, a):
    return (g,)


def _relu_fwd(v, a):
    return np.maximum(v[0], 0.0), None


def _relu_bwd(g, v, out, cache, a):
    return (g * (v[0] > 0.0),)


def _sigmoid_fwd(v, a):
    x = v[0]
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, None


def _sigmoid_bwd(g, v, out, cache, a):
    return (g * out * (1.0 - out),)


def _exp_fwd(v, a):
    return np.exp(v[0]), None


def _exp_bwd(g, v, out, cache, a):
    return (g * out,)


def _log_fwd(v, a):
    return np.log(v[0]), None


def _log_bwd(g, v, out, cache, a):
    return (g / v[0],)


def _square_fwd(v, a):
    return v[0] * v[0], None


def _square_bwd(g, v, out, cache, a):
    return (2.0 * g * v[0],)


def _clip_min_fwd(v, a):
    return np.maximum(v[0], a["lo"]), None


def _clip_min_bwd(g, v, out, cache, a):
    return (g * (v[0] >= a["lo"]),)


def _row_softmax_fwd(v, a):
    x = v[0]
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True), None


def _row_softmax_bwd(g, v, out, cache, a):
    return (out * (g - (g * out).sum(axis=1, keepdims=True)),)


def _row_log_softmax_fwd(v, a):
    x = v[0]
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - lse, None


def _row_log_softmax_bwd(g, v, out, cache, a):
    return (g - np.exp(out) * g.sum(axis=1, keepdims=True),)


def _row_max_fwd(v, a):
    x = v[0]
    if x.shape[1] == 0:
        raise ShapeError("row_max of a matrix with no columns")
    exclude = a["exclude"]
    if exclude is not None:
        if len(exclude) != x.shape[0]:
            raise ShapeError(f"exclude has {len(exclude)} entries for {x.shape[0]} rows")
        if x.shape[1] == 1 and np.any(exclude >= 0):
            raise ShapeError("row_max would exclude the only column")
        if np.any(exclude >= x.shape[1]):
            raise ShapeError(f"exclude index out of range for {x.shape[1]} columns")
        x = x.copy()
        rows = np.flatnonzero(exclude >= 0)
        x[rows, exclude[rows]] = -np.inf
    idx = np.argmax(x, axis=1)
    return np.ascontiguousarray(v[0][np.arange(x.shape[0]), idx][:, None]), idx


def _row_max_bwd(g, v, out, idx, a):
    gx = np.zeros_like(v[0])
    gx[np.arange(gx.shape[0]), idx] = g[:, 0]
    return (gx,)


def _select_fwd(v, a):
    x = v[0]
    rows, cols = a["rows"], a["cols"]
    if rows.size and (rows.max() >= x.shape[0] or cols.max() >= x.shape[1]
                      or rows.min() < 0 or cols.min() < 0):
        raise ShapeError(f"select index out of range for shape {x.shape}")
    return np.ascontiguousarray(x[rows, cols][:, None]), None


def _select_bwd(g, v, out, cache, a):
    gx = np.zeros_like(v[0])
    np.add.at(gx, (a["rows"], a["cols"]), g[:, 0])
    return (gx,)


def _transpose_fwd(v, a):
    return np.ascontiguousarray(v[0].T), None


def _transpose_bwd(g, v, out, cache, a):
    return (g.T,)


def _normalize_rows_fwd(v, a):
    x = v[0]
    norm = np.maximum(np.sqrt((x * x).sum(axis=1, keepdims=True)), a["eps"])
    return x / norm, norm


def _normalize_rows_bwd(g, v, out, norm, a):
    return ((g - out * (g * out).sum(axis=1, keepdims=True)) / norm,)


def _sum_fwd(v, a):
    return np.array([[v[0].sum()]]), None


def _sum_bwd(g, v, out, cache, a):
    return (np.full_like(v[0], g[0, 0]),)


def _mean_fwd(v, a):
    if v[0].size == 0:
        raise ShapeError("mean of an empty matrix")
    return np.array([[v[0].mean()]]), None


def _mean_bwd(g, v, out, cache, a):
    return (np.full_like(v[0], g[0, 0] / v[0].size),)


_PRIMITIVES = {
    "matmul": (_matmul_fwd, _matmul_bwd),
    "add": (_add_fwd, _add_bwd),
    "sub": (_sub_fwd, _sub_bwd),
    "mul": (_mul_fwd, _mul_bwd),
    "scale": (_scale_fwd, _scale_bwd),
    "add_scalar": (_add_scalar_fwd, _add_scalar_bwd),
    "relu": (_relu_fwd, _relu_bwd),
    "sigmoid": (_sigmoid_fwd, _sigmoid_bwd),
    "exp": (_exp_fwd, _exp_bwd),
    "log": (_log_fwd, _log_bwd),
    "square": (_square_fwd, _square_bwd),
    "clip_min": (_clip_min_fwd, _clip_min_bwd),
    "row_softmax": (_row_softmax_fwd, _row_softmax_bwd),
    "row_log_softmax": (_row_log_softmax_fwd, _row_log_softmax_bwd),
    "row_max": (_row_max_fwd, _row_max_bwd),
    "select": (_select_fwd, _select_bwd),
    "transpose": (_transpose_fwd, _transpose_bwd),
    "normalize_rows": (_normalize_rows_fwd, _normalize_rows_bwd),
    "sum": (_sum_fwd, _sum_bwd),
    "mean": (_mean_fwd, _mean_bwd),
}


class Node:
    """One value in a :class:`Graph`: a leaf or a primitive application."""

    __slots__ = ("graph", "index", "op", "inputs", "attrs", "value", "cache",
                 "name", "trainable", "requires_grad")

    def __init__(self, graph, index, op, inputs=(), attrs=None, name=None,
                 trainable=False):
        self.graph = graph
        self.index = index
        self.op = op
        self.inputs = tuple(inputs)
        self.attrs = attrs or {}
        self.value = None
        self.cache = None
        self.name = name
        self.trainable = trainable
        self.requires_grad = trainable or any(n.requires_grad for n in self.inputs)

    @property
    def shape(self):
        return None if self.value is None else self.value.shape

    @property
    def T(self):
        return transpose(self)

    def item(self):
        if self.value is None or self.value.shape != (1, 1):
            raise GraphStateError(f"node {self.index} ({self.op}) is not an evaluated scalar")
        return float(self.value[0, 0])

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        if isinstance(other, Node):
            return add(self, other)
        return add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Node):
            return sub(self, other)
        return add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        label = self.name or self.op
        return f"Node({self.index}, {label}, shape={self.shape})"


class Graph:
    """Ordered record of primitive applications mapping leaves to outputs."""

    def __init__(self):
        self.nodes = []
        self.leaves = {}
        self._evaluated = True

    def leaf(self, value=None, name=None, trainable=False):
        """Add an input matrix. Named leaves can be rebound with :meth:`bind`."""
        if name is not None and name in self.leaves:
            raise ValueError(f"duplicate leaf name {name!r}")
        node = Node(self, len(self.nodes), "leaf", name=name, trainable=trainable)
        self.nodes.append(node)
        if name is not None:
            self.leaves[name] = node
        if value is None:
            self._evaluated = False
        else:
            node.value = as_matrix(value)
        return node

    def constant(self, value):
        return self.leaf(value)

    def parameter(self, name, value):
        return self.leaf(value, name=name, trainable=True)

    def bind(self, name, value):
        """Rebind a named leaf. Call :meth:`forward` before :meth:`backward`."""
        try:
            self.leaves[name].value = as_matrix(value)
        except KeyError:
            raise KeyError(f"no leaf named {name!r}") from None
        self._evaluated = False

    def apply(self, op, inputs, **attrs):
        for n in inputs:
            if n.graph is not self:
                raise ValueError("inputs belong to a different graph")
        node = Node(self, len(self.nodes), op, inputs, attrs)
        self.nodes.append(node)
        if self._evaluated:
            self._evaluate(node)
        return node

    def _evaluate(self, node):
        fwd = _PRIMITIVES[node.op][0]
        values = [n.value for n in node.inputs]
        if any(v is None for v in values):
            raise GraphStateError(f"node {node.index} ({node.op}) has an unbound input")
        try:
            node.value, node.cache = fwd(values, node.attrs)
        except ShapeError as exc:
            shapes = ", ".join(str(v.shape) for v in values)
            raise ShapeError(f"node {node.index} ({node.op}) with inputs {shapes}: {exc}") from None

    def _output(self, output):
        if output is None:
            if not self.nodes:
                raise GraphStateError("empty graph")
            return self.nodes[-1]
        return output

    def forward(self, output=None):
        """Evaluate every node in order and return the scalar at ``output``.

        ``output`` defaults to the most recently created node.
        """
        for node in self.nodes:
            if node.op == "leaf":
                if node.value is None:
                    raise GraphStateError(f"leaf {node.name or node.index} is unbound")
            else:
                self._evaluate(node)
        self._evaluated = True
        return self._output(output).item()

    def backward(self, output=None):
        """Reverse-mode gradients of the scalar ``output`` w.r.t. trainable leaves.

        Returns a dict keyed by leaf name (unnamed trainable leaves are keyed by
        node index). Trainable leaves that ``output`` does not depend on get
        zero gradients.
        """
        if not self._evaluated:
            raise GraphStateError("backward called before forward on the current bindings")
        out = self._output(output)
        if out.value is None or out.value.shape != (1, 1):
            raise ShapeError(f"backward needs a (1, 1) output, node {out.index} has {out.shape}")
        grads = {out.index: np.ones((1, 1))}
        for node in reversed(self.nodes[: out.index + 1]):
            g = grads.get(node.index)
            if g is None or node.op == "leaf":
                continue
            bwd = _PRIMITIVES[node.op][1]
            in_grads = bwd(g, [n.value for n in node.inputs], node.value, node.cache, node.attrs)
            for parent, pg in zip(node.inputs, in_grads):
                if not parent.requires_grad:
                    continue
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + pg
                else:
                    grads[parent.index] = pg
        result = {}
        for node in self.nodes:
            if node.op == "leaf" and node.trainable:
                key = node.name if node.name is not None else node.index
                g = grads.get(node.index)
                result[key] = np.zeros_like(node.value) if g is None else np.ascontiguousarray(g)
        return result


def _graph_of(*nodes):
    return nodes[0].graph


def matmul(a, b):
    return _graph_of(a).apply("matmul", (a, b))


def add(a, b):
    """Elementwise sum with numpy broadcasting."""
    return _graph_of(a).apply("add", (a, b))


def sub(a, b):
    return _graph_of(a).apply("sub", (a, b))


def mul(a, b):
    return _graph_of(a).apply("mul", (a, b))


def scale(a, c):
    return a.graph.apply("scale", (a,), c=float(c))


def add_scalar(a, c):
    return a.graph.apply("add_scalar", (a,), c=float(c))


def relu(a):
    return a.graph.apply("relu", (a,))


def hinge(a, margin):
    """``max(0, margin - a)`` elementwise."""
    return relu(add_scalar(scale(a, -1.0), margin))


def sigmoid(a):
    return a.graph.apply("sigmoid", (a,))


def exp(a):
    return a.graph.apply("exp", (a,))


def log(a):
    return a.graph.apply("log", (a,))


def square(a):
    return a.graph.apply("square", (a,))


def clip_min(a, lo):
    """``max(a, lo)``; gradient is zero where the clamp is active."""
    return a.graph.apply("clip_min", (a,), lo=float(lo))


def row_softmax(a):
    return a.graph.apply("row_softmax", (a,))


def row_log_softmax(a):
    return a.graph.apply("row_log_softmax", (a,))


def row_max(a, exclude=None):
    """Per-row maximum as an ``(N, 1)`` column.

    Args:
        a: ``(N, K)`` node.
        exclude: optional length-N integer array; entry ``exclude[n] >= 0``
            removes that column from row n before taking the max.
    """
    if exclude is not None:
        exclude = np.asarray(exclude, dtype=np.intp)
    return a.graph.apply("row_max", (a,), exclude=exclude)


def select(a, rows, cols):
    """Gather entries ``a[rows[k], cols[k]]`` into a ``(K, 1)`` column."""
    rows = np.asarray(rows, dtype=np.intp).ravel()
    cols = np.asarray(cols, dtype=np.intp).ravel()
    if rows.shape != cols.shape:
        raise ShapeError(f"select got {rows.size} rows and {cols.size} cols")
    return a.graph.apply("select", (a,), rows=rows, cols=cols)


def transpose(a):
    return a.graph.apply("transpose", (a,))


def normalize_rows(a, eps=1e-12):
    """Scale each row to unit L2 norm (norms are clamped below at ``eps``)."""
    return a.graph.apply("normalize_rows", (a,), eps=float(eps))


def sum_all(a):
    return a.graph.apply("sum", (a,))


def mean(a):
    return a.graph.apply("mean", (a,))

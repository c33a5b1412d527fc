"""
Reverse-mode automatic differentiation over float64 numpy arrays.

Operations are recorded on an append-only tape (``Graph``) while they run and
replayed in exact reverse insertion order by ``backward``. Each thread has its
own stack of active graphs, so a worker can evaluate a ray batch on a private
graph while the trainer owns the default one.
"""

import logging
import threading
from contextlib import contextmanager

import numpy as np

from flownerf.exceptions.Exceptions import (
    ContractException,
    NumericException,
    ShapeException,
)

logger = logging.getLogger(__name__)

_state = threading.local()


def _graph_stack():
    stack = getattr(_state, "graphs", None)
    if stack is None:
        stack = [Graph()]
        _state.graphs = stack
    return stack


def _grad_enabled():
    return getattr(_state, "grad_enabled", True)


def current_graph():
    """Graph that new operations are recorded on in this thread"""
    return _graph_stack()[-1]


@contextmanager
def no_grad():
    """Evaluate operations without recording them"""
    previous = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Node:
    __slots__ = ("op", "inputs", "output", "backward_fn", "index")

    def __init__(self, op, inputs, output, backward_fn, index):
        self.op = op
        self.inputs = inputs
        self.output = output
        # closure over the saved activations of this op
        self.backward_fn = backward_fn
        self.index = index

    def __repr__(self):
        return f"Node({self.index}: {self.op} {[t.shape for t in self.inputs]} -> {self.output.shape})"


class Graph:
    """
    Append-only tape of operation records.

    Used as a context manager it becomes the active graph of the current
    thread and is cleared on exit.
    """

    def __init__(self):
        self.nodes = []

    def record(self, op, inputs, output, backward_fn):
        node = Node(op, inputs, output, backward_fn, len(self.nodes))
        output._node = node
        output._graph = self
        self.nodes.append(node)
        return node

    def clear(self):
        """Drop every record and saved activation; leaf parameters are untouched"""
        for node in self.nodes:
            node.output._node = None
            node.output._graph = None
            node.output.requires_grad = False
            node.backward_fn = None
            node.inputs = ()
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _graph_stack().pop()
        self.clear()
        return False


class Tensor:
    """Dense float64 array that can take part in a differentiation graph"""

    __array_priority__ = 100

    def __init__(self, values, requires_grad=False, name=None):
        # 0-d values stay 0-d
        self.values = np.asarray(values, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._node = None
        self._graph = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.values

    def item(self):
        return float(self.values.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.values, requires_grad=False)

    def backward(self):
        backward(self)

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __len__(self):
        return self.values.shape[0]

    # arithmetic
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    # elementwise and reductions
    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sin(self):
        return sin(self)

    def cos(self):
        return cos(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return absolute(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def softplus(self):
        return softplus(self)

    def relu(self):
        return relu(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _emit(op, values, inputs, backward_fn):
    if not np.all(np.isfinite(values)):
        raise NumericException(op)
    out = Tensor(values)
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        current_graph().record(op, inputs, out, backward_fn)
    return out


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeException(f"{op}: operand shapes {a.shape} and {b.shape} do not broadcast")


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``"""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# --- binary ops ---------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", a.values + b.values, (a, b), backward_fn)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit("sub", a.values - b.values, (a, b), backward_fn)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.values, b.values

    def backward_fn(g):
        ga = _unbroadcast(g * bv, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * av, b.shape) if b.requires_grad else None
        return ga, gb

    return _emit("mul", av * bv, (a, b), backward_fn)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    av, bv = a.values, b.values
    with np.errstate(divide="ignore", invalid="ignore"):
        out = av / bv

    def backward_fn(g):
        return _unbroadcast(g / bv, a.shape), _unbroadcast(-g * av / (bv * bv), b.shape)

    return _emit("div", out, (a, b), backward_fn)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeException(f"matmul: operands must have rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeException(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def backward_fn(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _emit("matmul", np.matmul(av, bv), (a, b), backward_fn)


# --- unary ops ----------------------------------------------------------------

def neg(a):
    a = as_tensor(a)
    return _emit("neg", -a.values, (a,), lambda g: (-g,))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.values)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    av = a.values
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(av)
    return _emit("log", out, (a,), lambda g: (g / av,))


def sin(a):
    a = as_tensor(a)
    av = a.values
    return _emit("sin", np.sin(av), (a,), lambda g: (g * np.cos(av),))


def cos(a):
    a = as_tensor(a)
    av = a.values
    return _emit("cos", np.cos(av), (a,), lambda g: (-g * np.sin(av),))


def sqrt(a):
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.values)

    def backward_fn(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (g * 0.5 / out,)

    return _emit("sqrt", out, (a,), backward_fn)


def power(a, exponent):
    a = as_tensor(a)
    if isinstance(exponent, Tensor):
        raise ContractException("power: exponent must be a constant")
    av = a.values
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.power(av, exponent)
    return _emit("pow", out, (a,), lambda g: (g * exponent * np.power(av, exponent - 1),))


def absolute(a):
    a = as_tensor(a)
    av = a.values
    return _emit("abs", np.abs(av), (a,), lambda g: (g * np.sign(av),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.values)
    return _emit("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.values))
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    a = as_tensor(a)
    av = a.values
    out = np.logaddexp(0.0, av)
    return _emit("softplus", out, (a,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * av)),))


def relu(a):
    a = as_tensor(a)
    av = a.values
    return _emit("relu", np.maximum(av, 0.0), (a,), lambda g: (g * (av > 0.0),))


def gabor(u, omega, gamma_raw=None):
    """
    Fused Gabor activation exp(-softplus(gamma_raw) u² / 2) · sin(omega u).

    ``omega`` and ``gamma_raw`` broadcast over the leading axes of ``u``;
    without ``gamma_raw`` this is the plain sine sin(omega u).
    """
    u, omega = as_tensor(u), as_tensor(omega)
    _broadcast_shape("gabor", u, omega)
    uv, wv = u.values, omega.values
    phase = uv * wv
    s, c = np.sin(phase), np.cos(phase)

    if gamma_raw is None:
        def sine_backward(g):
            gc = g * c
            return _unbroadcast(gc * wv, u.shape), _unbroadcast(gc * uv, omega.shape)

        return _emit("gabor", s, (u, omega), sine_backward)

    gamma_raw = as_tensor(gamma_raw)
    rv = gamma_raw.values
    gamma = np.logaddexp(0.0, rv)
    envelope = np.exp(-0.5 * gamma * uv * uv)
    out = envelope * s

    def backward_fn(g):
        ge = g * envelope
        d_u = _unbroadcast(ge * (c * wv - gamma * uv * s), u.shape)
        d_omega = _unbroadcast(ge * c * uv, omega.shape)
        d_gamma = _unbroadcast(-0.5 * g * out * uv * uv * (0.5 * (1.0 + np.tanh(0.5 * rv))), gamma_raw.shape)
        return d_u, d_omega, d_gamma

    return _emit("gabor", out, (u, omega, gamma_raw), backward_fn)


# --- reductions and norms -----------------------------------------------------

def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    out = a.values.sum(axis=axes, keepdims=keepdims)
    shape = a.shape

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", out, (a,), backward_fn)


def reduce_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise ContractException("mean: reduction over an empty axis")
    return reduce_sum(a, axis=axes, keepdims=keepdims) * (1.0 / count)


def l1_norm(a, axis=None, keepdims=False):
    return reduce_sum(absolute(a), axis=axis, keepdims=keepdims)


def l2_norm(a, axis=-1, keepdims=False):
    a = as_tensor(a)
    av = a.values
    out = np.sqrt((av * av).sum(axis=axis, keepdims=True))

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        # subgradient 0 at the origin
        safe = np.where(out > 0.0, out, 1.0)
        return (g * np.where(out > 0.0, av / safe, 0.0),)

    values = out if keepdims else np.squeeze(out, axis=axis)
    return _emit("l2_norm", values, (a,), backward_fn)


# --- shape ops ----------------------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    original = a.shape
    try:
        out = a.values.reshape(shape)
    except ValueError:
        raise ShapeException(f"reshape: cannot reshape {original} into {tuple(shape)}")
    return _emit("reshape", out, (a,), lambda g: (g.reshape(original),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", np.transpose(a.values, axes), (a,), lambda g: (np.transpose(g, inverse),))


def broadcast_to(a, shape):
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.values, shape).copy()
    except ValueError:
        raise ShapeException(f"broadcast_to: cannot broadcast {a.shape} to {tuple(shape)}")
    return _emit("broadcast", out, (a,), lambda g: (_unbroadcast(g, a.shape),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractException("concat: no operands")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeException(
                f"concat: shapes {[t.shape for t in tensors]} differ outside axis {axis}"
            )
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward_fn(g):
        return tuple(
            np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=axis) for k in range(len(tensors))
        )

    out = np.concatenate([t.values for t in tensors], axis=axis)
    return _emit("concat", out, tuple(tensors), backward_fn)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeException(f"stack: operand shapes differ: {[t.shape for t in tensors]}")
    out = np.stack([t.values for t in tensors], axis=axis)

    def backward_fn(g):
        return tuple(np.take(g, k, axis=axis) for k in range(len(tensors)))

    return _emit("stack", out, tuple(tensors), backward_fn)


def _is_basic_index(index):
    if isinstance(index, np.ndarray) and index.dtype == bool:
        # boolean masks select each element at most once
        return True
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, index):
    a = as_tensor(a)
    out = a.values[index]
    shape = a.shape
    basic = _is_basic_index(index)

    def backward_fn(g):
        grad = np.zeros(shape)
        if basic:
            grad[index] += g
        else:
            np.add.at(grad, index, g)
        return (grad,)

    return _emit("getitem", np.array(out, dtype=np.float64), (a,), backward_fn)


def cumprod(a, axis=-1, exclusive=False):
    """
    Cumulative product along ``axis``; ``exclusive`` shifts it so entry k holds
    the product of entries before k (and entry 0 holds 1).

    The backward pass never divides by the inputs, so zero factors (fully
    opaque samples) keep exact gradients.
    """
    a = as_tensor(a)
    axis = axis % a.ndim
    x = np.moveaxis(a.values, axis, -1)
    m = x.shape[-1]
    inclusive = np.cumprod(x, axis=-1)
    before = np.concatenate([np.ones_like(x[..., :1]), inclusive[..., :-1]], axis=-1)
    out = before if exclusive else inclusive

    def backward_fn(g):
        g = np.moveaxis(g, axis, -1)
        acc = np.zeros_like(g)
        if exclusive:
            # acc_j = sum_{k>j} g_k prod_{j<l<k} x_l
            for j in range(m - 2, -1, -1):
                acc[..., j] = g[..., j + 1] + x[..., j + 1] * acc[..., j + 1]
        else:
            # acc_j = sum_{k>=j} g_k prod_{j<l<=k} x_l
            acc[..., m - 1] = g[..., m - 1]
            for j in range(m - 2, -1, -1):
                acc[..., j] = g[..., j] + x[..., j + 1] * acc[..., j + 1]
        return (np.moveaxis(before * acc, -1, axis),)

    return _emit("cumprod", np.moveaxis(out, -1, axis), (a,), backward_fn)


# --- backward -----------------------------------------------------------------

def backward(loss):
    """
    Accumulate d(loss)/d(t) into ``t.grad`` for every leaf ``t`` with
    ``requires_grad`` reachable from ``loss``. Calling it twice without
    zeroing adds the gradients twice.
    """
    if loss.size != 1:
        raise ContractException(f"backward: loss must be a scalar, got shape {loss.shape}")
    seed = np.ones_like(loss.values)
    if loss._node is None:
        if loss.requires_grad:
            _accumulate_leaf(loss, seed)
        return

    graph = loss._graph
    pending = {id(loss): seed}
    for node in reversed(graph.nodes[: loss._node.index + 1]):
        g = pending.pop(id(node.output), None)
        if g is None:
            continue
        for tensor, grad in zip(node.inputs, node.backward_fn(g)):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor._node is None:
                _accumulate_leaf(tensor, grad)
            elif tensor._graph is graph:
                key = id(tensor)
                pending[key] = grad if key not in pending else pending[key] + grad


def _accumulate_leaf(tensor, grad):
    grad = np.asarray(grad, dtype=np.float64).reshape(tensor.shape)
    if not np.all(np.isfinite(grad)):
        raise NumericException("backward", f"Non-finite gradient reached '{tensor.name or tensor.shape}'")
    tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad

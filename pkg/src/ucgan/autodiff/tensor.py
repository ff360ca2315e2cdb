"""Tensors, the recording tape and reverse-mode differentiation."""

from __future__ import annotations

import contextlib
import threading
from typing import Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class _State(threading.local):
    def __init__(self):
        self.dtype = np.float32
        self.tapes: list[Tape] = []


_state = _State()


def default_dtype():
    return _state.dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype new tensors are created with.

    Training runs in float32; gradient verification uses float64.
    """
    prev = _state.dtype
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


def check_finite(arr, what="value"):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite {what} encountered")


class Tensor:
    """Dense array node in the differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype or _state.dtype)
        check_finite(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar; every method routes through the operator catalog
    def __add__(self, other):
        return _call("add", self, other)

    def __radd__(self, other):
        return _call("add", other, self)

    def __sub__(self, other):
        return _call("sub", self, other)

    def __rsub__(self, other):
        return _call("sub", other, self)

    def __mul__(self, other):
        return _call("mul", self, other)

    def __rmul__(self, other):
        return _call("mul", other, self)

    def __truediv__(self, other):
        return _call("div", self, other)

    def __rtruediv__(self, other):
        return _call("div", other, self)

    def __neg__(self):
        return _call("mul", self, -1.0)

    def __matmul__(self, other):
        return _call("matmul", self, other)

    def __rmatmul__(self, other):
        return _call("matmul", other, self)

    def sum(self, axis=None, keepdims=False):
        return _call("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _call("mean", self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return _call("max", self, axis=axis, keepdims=keepdims)

    def min(self, axis=None, keepdims=False):
        return _call("min", self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _call("reshape", self, shape=tuple(shape))

    def exp(self):
        return _call("exp", self)

    def log(self):
        return _call("log", self)

    def sqrt(self):
        return _call("sqrt", self)

    def square(self):
        return _call("square", self)

    def abs(self):
        return _call("abs", self)

    def elu(self):
        return _call("elu", self)

    def tanh(self):
        return _call("tanh", self)

    def softmax(self, axis=-1):
        return _call("softmax", self, axis=axis)


def _call(name, *inputs, **attrs):
    from .ops import forward_op

    return forward_op(name, inputs, **attrs)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


class _Node:
    __slots__ = ("op", "inputs", "attrs", "ctx")

    def __init__(self, op, inputs, attrs, ctx):
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.ctx = ctx


class Tape:
    """Ordered record of operations executed while the tape is active.

    Entries are appended in execution order, so every entry's inputs were
    produced by earlier entries or are leaves.
    """

    def __init__(self):
        self.entries: list[Tensor] = []

    def __enter__(self):
        _state.tapes.append(self)
        return self

    def __exit__(self, *exc):
        _state.tapes.remove(self)
        return False

    def __len__(self):
        return len(self.entries)

    def record(self, out: Tensor):
        self.entries.append(out)

    def replay(self):
        """Re-run every recorded forward against the current input values."""
        for out in self.entries:
            node = out._node
            arrays = [t.data for t in node.inputs]
            data, ctx = node.op.forward(*arrays, **node.attrs)
            check_finite(data, f"output of {node.op.name}")
            out.data = data
            node.ctx = ctx
        return self


def _record(out):
    for tape in _state.tapes:
        tape.record(out)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for inp in t._node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def _propagate(loss: Tensor, order: Sequence[Tensor], keep=frozenset()) -> dict[int, np.ndarray]:
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.get(id(t))
        if g is None or t._node is None:
            continue
        node = t._node
        arrays = [i.data for i in node.inputs]
        in_grads = node.op.backward(g, arrays, t.data, node.ctx, **node.attrs)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
        if t is not loss and id(t) not in keep:
            del grads[id(t)]
    return grads


def _check_loss(loss):
    if not isinstance(loss, Tensor):
        raise TypeError("loss must be a Tensor")
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")


def grad(loss: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Return d(loss)/d(t) for each t in ``wrt`` without touching ``.grad``.

    Tensors not connected to the loss get an all-zero gradient.
    """
    _check_loss(loss)
    wrt = list(wrt)
    if not loss.requires_grad:
        return [np.zeros_like(t.data) for t in wrt]
    grads = _propagate(loss, _topo_order(loss), keep={id(t) for t in wrt})
    out = []
    for t in wrt:
        g = grads.get(id(t))
        if g is None:
            g = np.zeros_like(t.data)
        else:
            g = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
            check_finite(g, "gradient")
        out.append(g)
    return out


def backward(loss: Tensor, tape: Tape | None = None):
    """Populate ``.grad`` on every requires_grad leaf reachable from ``loss``.

    With a tape the recorded order is used; otherwise the graph is sorted
    from the loss. Leaves listed on the tape but disconnected from the loss
    receive zero gradients.
    """
    _check_loss(loss)
    if tape is not None:
        order = [t for t in tape.entries if t.requires_grad]
        if loss.requires_grad and not any(t is loss for t in order):
            raise ValueError("loss was not recorded on this tape")
    else:
        order = _topo_order(loss) if loss.requires_grad else []
    grads = _propagate(loss, order) if loss.requires_grad else {}

    leaves: dict[int, Tensor] = {}
    for t in order:
        if t._node is None:
            leaves[id(t)] = t
        else:
            for inp in t._node.inputs:
                if inp._node is None and inp.requires_grad:
                    leaves[id(inp)] = inp
    if tape is not None:
        for t in tape.entries:
            for inp in t._node.inputs:
                if inp._node is None and inp.requires_grad:
                    leaves.setdefault(id(inp), inp)
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            leaf.grad = np.zeros_like(leaf.data)
        else:
            g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
            check_finite(g, "gradient")
            leaf.grad = g
    return [leaf for leaf in leaves.values()]

"""Operator catalog.

Only operators whose gradients stay free of checkerboard artifacts are
registered: stride-1 convolution, average pooling, nearest-neighbour
upsampling and smooth elementwise maps. Max-pooling, strided convolution
and transposed convolution are rejected at registration time.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import NonFiniteError, ShapeError, Tensor, _Node, _record, check_finite

CATALOG: dict[str, "Op"] = {}

FORBIDDEN = frozenset(
    {
        "max_pool",
        "maxpool",
        "max_pool2d",
        "conv2d_strided",
        "strided_conv",
        "conv_transpose",
        "conv2d_transpose",
        "deconv",
        "deconvolution",
    }
)


class UnknownOperatorError(KeyError):
    pass


class CatalogError(ValueError):
    pass


class Op:
    name = ""
    stride = 1

    def forward(self, *arrays, **attrs):
        raise NotImplementedError

    def backward(self, g, arrays, out, ctx, **attrs):
        raise NotImplementedError


def register(cls):
    op = cls()
    if not op.name:
        raise CatalogError(f"{cls.__name__} has no operator name")
    if op.name in FORBIDDEN or "max_pool" in op.name or "transpose" in op.name:
        raise CatalogError(f"operator {op.name!r} is not allowed in the catalog")
    if getattr(op, "stride", 1) != 1:
        raise CatalogError(f"operator {op.name!r} has stride {op.stride}; only stride 1 is allowed")
    if op.name in CATALOG:
        raise CatalogError(f"operator {op.name!r} registered twice")
    CATALOG[op.name] = op
    return cls


def forward_op(name, inputs, **attrs) -> Tensor:
    """Evaluate a catalog operator and record the result for differentiation."""
    try:
        op = CATALOG[name]
    except KeyError:
        raise UnknownOperatorError(f"unknown operator {name!r}") from None
    tensors = []
    for x in inputs:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        tensors.append(x)
    arrays = [t.data for t in tensors]
    for a in arrays:
        check_finite(a, f"input to {name}")
    with np.errstate(all="ignore"):
        data, ctx = op.forward(*arrays, **attrs)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite output from {name}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = name != "stop_gradient" and any(t.requires_grad for t in tensors)
    out._node = None
    if out.requires_grad:
        out._node = _Node(op, tuple(tensors), attrs, ctx)
        _record(out)
    return out


def unbroadcast(g, shape):
    if g.shape == shape:
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a, b, name):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


@register
class Add(Op):
    name = "add"

    def forward(self, a, b):
        _broadcast_shape(a, b, self.name)
        return a + b, None

    def backward(self, g, arrays, out, ctx):
        a, b = arrays
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)


@register
class Sub(Op):
    name = "sub"

    def forward(self, a, b):
        _broadcast_shape(a, b, self.name)
        return a - b, None

    def backward(self, g, arrays, out, ctx):
        a, b = arrays
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)


@register
class Mul(Op):
    name = "mul"

    def forward(self, a, b):
        _broadcast_shape(a, b, self.name)
        return a * b, None

    def backward(self, g, arrays, out, ctx):
        a, b = arrays
        return unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)


@register
class Div(Op):
    name = "div"

    def forward(self, a, b):
        _broadcast_shape(a, b, self.name)
        return a / b, None

    def backward(self, g, arrays, out, ctx):
        a, b = arrays
        return unbroadcast(g / b, a.shape), unbroadcast(-g * out / b, b.shape)


@register
class Abs(Op):
    name = "abs"

    def forward(self, a):
        return np.abs(a), None

    def backward(self, g, arrays, out, ctx):
        # sign(0) == 0 picks the zero subgradient at the kink
        return (g * np.sign(arrays[0]),)


@register
class Exp(Op):
    name = "exp"

    def forward(self, a):
        return np.exp(a), None

    def backward(self, g, arrays, out, ctx):
        return (g * out,)


@register
class Log(Op):
    name = "log"

    def forward(self, a):
        return np.log(a), None

    def backward(self, g, arrays, out, ctx):
        return (g / arrays[0],)


@register
class Sqrt(Op):
    name = "sqrt"

    def forward(self, a):
        return np.sqrt(a), None

    def backward(self, g, arrays, out, ctx):
        return (g * 0.5 / out,)


@register
class Square(Op):
    name = "square"

    def forward(self, a):
        return a * a, None

    def backward(self, g, arrays, out, ctx):
        return (2 * g * arrays[0],)


@register
class Elu(Op):
    """ELU with alpha fixed to 1."""

    name = "elu"

    def forward(self, a):
        return np.where(a > 0, a, np.expm1(np.minimum(a, 0))), None

    def backward(self, g, arrays, out, ctx):
        a = arrays[0]
        return (g * np.where(a > 0, 1, out + 1),)


@register
class Tanh(Op):
    name = "tanh"

    def forward(self, a):
        return np.tanh(a), None

    def backward(self, g, arrays, out, ctx):
        return (g * (1 - out * out),)


@register
class Atan2(Op):
    """Angle of the point (x, y); arguments ordered (y, x) like numpy."""

    name = "atan2"

    def forward(self, y, x):
        _broadcast_shape(y, x, self.name)
        return np.arctan2(y, x), None

    def backward(self, g, arrays, out, ctx):
        y, x = arrays
        r2 = x * x + y * y
        r2 = np.where(r2 == 0, 1, r2)
        return unbroadcast(g * x / r2, y.shape), unbroadcast(-g * y / r2, x.shape)


@register
class StopGradient(Op):
    name = "stop_gradient"

    def forward(self, a):
        return a.copy(), None

    def backward(self, g, arrays, out, ctx):
        return (None,)


# ----------------------------------------------------------------- linear algebra


@register
class MatMul(Op):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul needs operands with at least 2 dimensions")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError(f"matmul: batch shapes {a.shape} and {b.shape} do not broadcast") from None
        return np.matmul(a, b), None

    def backward(self, g, arrays, out, ctx):
        a, b = arrays
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


@register
class Conv2d(Op):
    """Stride-1 'same' convolution, NHWC input and (kh, kw, cin, cout) kernel."""

    name = "conv2d"
    stride = 1

    def forward(self, x, w):
        if x.ndim != 4 or w.ndim != 4:
            raise ShapeError("conv2d expects a 4-d input and a 4-d kernel")
        kh, kw, cin, _ = w.shape
        if x.shape[3] != cin:
            raise ShapeError(f"conv2d: input has {x.shape[3]} channels, kernel expects {cin}")
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError("conv2d supports odd kernel sizes only")
        return _conv_same(x, w), None

    def backward(self, g, arrays, out, ctx):
        x, w = arrays
        kh, kw = w.shape[:2]
        ph, pw = kh // 2, kw // 2
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # N,H,W,C,kh,kw
        gw = np.tensordot(win, g, axes=([0, 1, 2], [0, 1, 2]))  # C,kh,kw,O
        gw = gw.transpose(1, 2, 0, 3)
        w_flip = w[::-1, ::-1].transpose(0, 1, 3, 2)
        gx = _conv_same(g, w_flip)
        return gx, gw


def _conv_same(x, w):
    kh, kw = w.shape[:2]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # N,H,W,C,kh,kw
    return np.tensordot(win, w, axes=([3, 4, 5], [2, 0, 1]))


# -------------------------------------------------------------- spatial resampling


@register
class AvgPool(Op):
    """Average pooling over NHWC input.

    Zero padding cells are excluded from each window's count.
    """

    name = "avg_pool"
    # the pooling stride is a resampling factor, not a convolution stride
    stride = 1

    def forward(self, x, size=2, step=None, pad=0):
        step = size if step is None else step
        if x.ndim != 4:
            raise ShapeError("avg_pool expects NHWC input")
        n, h, w, c = x.shape
        ho = (h + 2 * pad - size) // step + 1
        wo = (w + 2 * pad - size) // step + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"avg_pool window {size} larger than input {h}x{w}")
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        ones = np.pad(np.ones((h, w), dtype=x.dtype), pad)
        acc = np.zeros((n, ho, wo, c), dtype=x.dtype)
        cnt = np.zeros((ho, wo), dtype=x.dtype)
        for i in range(size):
            for j in range(size):
                sl = (slice(i, i + step * (ho - 1) + 1, step), slice(j, j + step * (wo - 1) + 1, step))
                acc += xp[:, sl[0], sl[1], :]
                cnt += ones[sl]
        return acc / cnt[None, :, :, None], cnt

    def backward(self, g, arrays, out, cnt, size=2, step=None, pad=0):
        step = size if step is None else step
        x = arrays[0]
        n, h, w, c = x.shape
        ho, wo = g.shape[1:3]
        gs = g / cnt[None, :, :, None]
        gp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=g.dtype)
        for i in range(size):
            for j in range(size):
                gp[:, i : i + step * (ho - 1) + 1 : step, j : j + step * (wo - 1) + 1 : step, :] += gs
        return (gp[:, pad : pad + h, pad : pad + w, :],)


@register
class Upsample(Op):
    """Nearest-neighbour upsampling of NHWC input by an integer factor."""

    name = "upsample"

    def forward(self, x, factor=2):
        if x.ndim != 4:
            raise ShapeError("upsample expects NHWC input")
        return x.repeat(factor, axis=1).repeat(factor, axis=2), None

    def backward(self, g, arrays, out, ctx, factor=2):
        n, h, w, c = arrays[0].shape
        return (g.reshape(n, h, factor, w, factor, c).sum(axis=(2, 4)),)


# ----------------------------------------------------------------- reductions etc.


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand(g, shape, axis, keepdims):
    if not keepdims:
        for a in sorted(_norm_axis(axis, len(shape))):
            g = np.expand_dims(g, a)
    return g


@register
class Sum(Op):
    name = "sum"

    def forward(self, a, axis=None, keepdims=False):
        return np.sum(a, axis=axis, keepdims=keepdims), None

    def backward(self, g, arrays, out, ctx, axis=None, keepdims=False):
        a = arrays[0]
        return (np.broadcast_to(_expand(g, a.shape, axis, keepdims), a.shape).copy(),)


@register
class Mean(Op):
    name = "mean"

    def forward(self, a, axis=None, keepdims=False):
        return np.mean(a, axis=axis, keepdims=keepdims), None

    def backward(self, g, arrays, out, ctx, axis=None, keepdims=False):
        a = arrays[0]
        count = int(np.prod([a.shape[i] for i in _norm_axis(axis, a.ndim)]))
        return (np.broadcast_to(_expand(g, a.shape, axis, keepdims) / count, a.shape).copy(),)


class _Extreme(Op):
    reduce = None

    def forward(self, a, axis=None, keepdims=False):
        return self.reduce(a, axis=axis, keepdims=keepdims), None

    def backward(self, g, arrays, out, ctx, axis=None, keepdims=False):
        a = arrays[0]
        o = _expand(out, a.shape, axis, keepdims)
        hit = (a == o).astype(a.dtype)
        # ties share the gradient evenly
        hit /= hit.sum(axis=_norm_axis(axis, a.ndim), keepdims=True)
        return (hit * _expand(g, a.shape, axis, keepdims),)


@register
class Max(_Extreme):
    name = "max"
    reduce = staticmethod(np.max)


@register
class Min(_Extreme):
    name = "min"
    reduce = staticmethod(np.min)


@register
class Softmax(Op):
    name = "softmax"

    def forward(self, a, axis=-1):
        e = np.exp(a - a.max(axis=axis, keepdims=True))
        return e / e.sum(axis=axis, keepdims=True), None

    def backward(self, g, arrays, out, ctx, axis=-1):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)


@register
class Concat(Op):
    name = "concat"

    def forward(self, *arrays, axis=-1):
        ref = arrays[0]
        ax = axis % ref.ndim
        for a in arrays[1:]:
            if a.ndim != ref.ndim or any(a.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
                raise ShapeError(f"concat: shapes {ref.shape} and {a.shape} differ off axis {axis}")
        return np.concatenate(arrays, axis=ax), [a.shape[ax] for a in arrays]

    def backward(self, g, arrays, out, sizes, axis=-1):
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.split(g, splits, axis=axis % g.ndim))


@register
class Reshape(Op):
    name = "reshape"

    def forward(self, a, shape=()):
        try:
            return a.reshape(shape), None
        except ValueError:
            raise ShapeError(f"cannot reshape {a.shape} to {shape}") from None

    def backward(self, g, arrays, out, ctx, shape=()):
        return (g.reshape(arrays[0].shape),)


# ---------------------------------------------------------------- helpers


def _f(name):
    def call(*inputs, **attrs):
        return forward_op(name, inputs, **attrs)

    call.__name__ = name
    return call


add = _f("add")
sub = _f("sub")
mul = _f("mul")
div = _f("div")
absolute = _f("abs")
exp = _f("exp")
log = _f("log")
sqrt = _f("sqrt")
square = _f("square")
elu = _f("elu")
tanh = _f("tanh")
atan2 = _f("atan2")
matmul = _f("matmul")
conv2d = _f("conv2d")
stop_gradient = _f("stop_gradient")


def upsample(x, factor=2):
    return forward_op("upsample", (x,), factor=factor)


def softmax(x, axis=-1):
    return forward_op("softmax", (x,), axis=axis)


def avg_pool(x, size=2, step=None, pad=0):
    return forward_op("avg_pool", (x,), size=size, step=step, pad=pad)


def concat(tensors, axis=-1):
    return forward_op("concat", tuple(tensors), axis=axis)


def reshape(x, shape):
    return forward_op("reshape", (x,), shape=tuple(shape))


def reduce_sum(x, axis=None, keepdims=False):
    return forward_op("sum", (x,), axis=axis, keepdims=keepdims)


def reduce_mean(x, axis=None, keepdims=False):
    return forward_op("mean", (x,), axis=axis, keepdims=keepdims)


def reduce_max(x, axis=None, keepdims=False):
    return forward_op("max", (x,), axis=axis, keepdims=keepdims)


def reduce_min(x, axis=None, keepdims=False):
    return forward_op("min", (x,), axis=axis, keepdims=keepdims)

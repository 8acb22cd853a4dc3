"""Differentiable operations on :class:`Tensor`.

Conventions follow the usual deep-learning ones: NCHW layout, conv2d is a
cross-correlation, pooling windows that overhang the input in ``ceil_mode``
ignore the overhang, and batch norm updates running statistics in place
with unbiased variance.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InputTooSmall, ShapeMismatch
from .tensor import Tensor, as_tensor

_make = Tensor._from_op


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shapes(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _pair(a, b)
    _broadcast_shapes(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _pair(a, b)
    _broadcast_shapes(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _pair(a, b)
    _broadcast_shapes(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = _pair(a, b)
    _broadcast_shapes(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward, "div")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent):
    exponent = float(exponent)
    out = a.data ** exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _make(out, (a,), backward, "pow")


def square(a):
    return _make(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g / (2 * out),), "sqrt")


def relu(a):
    mask = a.data > 0
    return _make(np.maximum(a.data, 0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a):
    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return _make(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


# ----------------------------------------------------------------- reductions

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make(np.asarray(out, dtype=a.dtype), (a,), backward, "mean")


def amax(a, axis, keepdims=False):
    """Maximum along one axis; the gradient goes to the first maximal entry."""
    axis = axis % a.ndim
    out = a.data.max(axis=axis, keepdims=keepdims)

    def backward(g):
        idx = np.expand_dims(a.data.argmax(axis=axis), axis)
        if not keepdims:
            g = np.expand_dims(g, axis)
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, idx, g, axis=axis)
        return (grad,)

    return _make(out, (a,), backward, "amax")


def logsumexp(a, axis):
    m = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = np.squeeze(np.log(total) + m, axis=axis)

    def backward(g):
        return (np.expand_dims(g, axis) * shifted / total,)

    return _make(out, (a,), backward, "logsumexp")


def log_softmax(a, axis=-1):
    axis = axis % a.ndim
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), backward, "log_softmax")


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis))


# -------------------------------------------------------------------- shaping

def reshape(a, shape):
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def flatten(a):
    """Collapse every axis after the batch axis."""
    return reshape(a, (a.shape[0], -1))


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def index(a, key):
    out = a.data[key]

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, key, g)
        return (grad,)

    return _make(np.array(out), (a,), backward, "index")


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ShapeMismatch("concat: empty input")
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis
        ):
            raise ShapeMismatch(
                f"concat: shapes {[x.shape for x in tensors]} disagree off axis {axis}"
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), backward, "concat")


# --------------------------------------------------------------- linear maps

def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` with ``weight`` shaped (out_features, in_features)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ x.data.reshape(-1, x.shape[-1]) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, backward, "linear")


def _pad_hw(x, pad, value=0.0):
    (top, bottom), (left, right) = pad
    if not (top or bottom or left or right):
        return x
    return np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)), constant_values=value)


def _windows(xp, kh, kw, stride, ho, wo):
    # (B, C, Ho, Wo, kh, kw) read-only view
    view = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return view[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _im2col(xp, kh, kw, stride, ho, wo):
    """Patch matrix (B*Ho*Wo, C*kh*kw) and the matching weight layout flag.

    Wide inputs are gathered channels-last (column order kh, kw, C), which
    copies far faster; narrow ones use the strided-view route.
    """
    b, c = xp.shape[:2]
    if c >= 8:
        xt = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
        cols = np.empty((b, ho, wo, kh, kw, c), dtype=xp.dtype)
        hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
        for i in range(kh):
            for j in range(kw):
                cols[:, :, :, i, j, :] = xt[:, i : i + hs : stride, j : j + ws : stride, :]
        return cols.reshape(b * ho * wo, kh * kw * c), True
    win = _windows(xp, kh, kw, stride, ho, wo)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw), False


def _weight_matrix(wdata, channels_last):
    o = wdata.shape[0]
    if channels_last:
        return wdata.transpose(0, 2, 3, 1).reshape(o, -1)
    return wdata.reshape(o, -1)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation. ``weight`` is (out_ch, in_ch, kh, kw)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatch(f"conv2d: expected 4-D input and weight, got {x.shape}, {weight.shape}")
    b, c, h, w = x.shape
    o, c2, kh, kw = weight.shape
    if c != c2:
        raise ShapeMismatch(f"conv2d: input has {c} channels, weight expects {c2} ({x.shape} vs {weight.shape})")
    s, p = int(stride), int(padding)
    hp, wp = h + 2 * p, w + 2 * p
    if hp < kh or wp < kw:
        raise InputTooSmall(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho, wo = (hp - kh) // s + 1, (wp - kw) // s + 1
    cols, channels_last = _im2col(_pad_hw(x.data, ((p, p), (p, p))), kh, kw, s, ho, wo)
    wmat = _weight_matrix(weight.data, channels_last)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(b, ho, wo, o).transpose(0, 3, 1, 2))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = None
        if weight.requires_grad:
            gw = g2.T @ cols
            if channels_last:
                gw = gw.reshape(o, kh, kw, c).transpose(0, 3, 1, 2)
            gw = np.ascontiguousarray(gw.reshape(weight.shape))
        gx = None
        if x.requires_grad:
            gx = _conv_input_grad(g, g2, weight.data, x.shape, s, p, ho, wo)
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, backward, "conv2d")


def _conv_input_grad(g, g2, wdata, xshape, s, p, ho, wo):
    b, c, h, w = xshape
    o, _, kh, kw = wdata.shape
    if s == 1 and p <= kh - 1 and p <= kw - 1:
        # full correlation of g with the flipped, channel-swapped kernel
        ph, pw = kh - 1 - p, kw - 1 - p
        gp = _pad_hw(g, ((ph, ph), (pw, pw)))
        gcols, channels_last = _im2col(gp, kh, kw, 1, h, w)
        flipped = _weight_matrix(wdata[:, :, ::-1, ::-1].transpose(1, 0, 2, 3), channels_last)
        return np.ascontiguousarray((gcols @ flipped.T).reshape(b, h, w, c).transpose(0, 3, 1, 2))
    gcols = np.ascontiguousarray(
        (g2 @ wdata.reshape(o, -1)).reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    )
    dxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += gcols[:, :, i, j]
    return dxp[:, :, p : p + h, p : p + w]


# -------------------------------------------------------------------- pooling

def pool_output_size(size, kernel, stride, padding=0, ceil_mode=False):
    span = size + 2 * padding - kernel
    if span < 0:
        return 0
    if ceil_mode:
        out = -(-span // stride) + 1
        # the last window must start inside the input or the left padding
        if (out - 1) * stride >= size + padding:
            out -= 1
    else:
        out = span // stride + 1
    return out


def max_pool2d(x, kernel_size=2, stride=None, padding=0, ceil_mode=False):
    if x.ndim != 4:
        raise ShapeMismatch(f"max_pool2d: expected 4-D input, got {x.shape}")
    k = int(kernel_size)
    s = int(stride or k)
    p = int(padding)
    b, c, h, w = x.shape
    ho = pool_output_size(h, k, s, p, ceil_mode)
    wo = pool_output_size(w, k, s, p, ceil_mode)
    if ho <= 0 or wo <= 0:
        raise InputTooSmall(f"max_pool2d: {h}x{w} input pools to {ho}x{wo}")
    extra_h = max(0, (ho - 1) * s + k - (h + 2 * p))
    extra_w = max(0, (wo - 1) * s + k - (w + 2 * p))
    xp = _pad_hw(x.data, ((p, p + extra_h), (p, p + extra_w)), value=-np.inf)
    hs, ws = s * (ho - 1) + 1, s * (wo - 1) + 1
    offsets = [(i, j) for i in range(k) for j in range(k)]
    out = xp[:, :, 0:hs:s, 0:ws:s].copy()
    for i, j in offsets[1:]:
        np.maximum(out, xp[:, :, i : i + hs : s, j : j + ws : s], out=out)

    def backward(g):
        dxp = np.zeros(xp.shape, dtype=x.dtype)
        taken = np.zeros(out.shape, dtype=bool)
        # route each window's gradient to its first maximal element (row-major)
        for i, j in offsets:
            hit = xp[:, :, i : i + hs : s, j : j + ws : s] == out
            hit &= ~taken
            taken |= hit
            dxp[:, :, i : i + hs : s, j : j + ws : s] += g * hit
        return (dxp[:, :, p : p + h, p : p + w],)

    return _make(out, (x,), backward, "max_pool2d")


def avg_pool2d(x, kernel_size=2, stride=None):
    if x.ndim != 4:
        raise ShapeMismatch(f"avg_pool2d: expected 4-D input, got {x.shape}")
    k = int(kernel_size)
    s = int(stride or k)
    b, c, h, w = x.shape
    ho, wo = pool_output_size(h, k, s), pool_output_size(w, k, s)
    if ho <= 0 or wo <= 0:
        raise InputTooSmall(f"avg_pool2d: {h}x{w} input pools to {ho}x{wo}")
    out = _windows(x.data, k, k, s, ho, wo).mean(axis=(-2, -1), dtype=x.dtype)

    def backward(g):
        gx = np.zeros_like(x.data)
        share = g / (k * k)
        for i in range(k):
            for j in range(k):
                gx[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += share
        return (gx,)

    return _make(out, (x,), backward, "avg_pool2d")


def global_avg_pool(x):
    """(B, C, H, W) -> (B, C) spatial mean."""
    return mean(x, axis=(2, 3))


def global_max_pool(x):
    """(B, C, H, W) -> (B, C) spatial maximum."""
    b, c = x.shape[:2]
    return amax(reshape(x, (b, c, -1)), axis=2)


# -------------------------------------------------------------- normalization

def batch_norm2d(x, gamma, beta, running_mean, running_var, training=True, momentum=0.1, eps=1e-5):
    """Per-channel batch norm over (B, H, W).

    ``running_mean`` / ``running_var`` are plain ndarrays updated in place
    when ``training`` is true.
    """
    if x.ndim != 4 or x.shape[1] != gamma.shape[0]:
        raise ShapeMismatch(f"batch_norm2d: input {x.shape} vs {gamma.shape[0]} channels")
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    if training:
        n = x.shape[0] * x.shape[2] * x.shape[3]
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(shape)) * inv_std.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(shape)
        if training:
            gx = inv_std.reshape(shape) * (
                gxhat
                - gxhat.mean(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv_std.reshape(shape)
        return gx, ggamma, gbeta

    return _make(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "batch_norm2d")


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b

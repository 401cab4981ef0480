# functional.py
# Differentiable primitives recorded on the tape

from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from errors import ShapeError
from numcore.tensor import Tensor, apply_op, as_tensor, note_kink_pattern

Axis = Union[None, int, Tuple[int, ...]]
Padding = Union[int, Tuple[int, int, int, int]]


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sums a broadcast gradient back down to the operand's shape"""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, extent in enumerate(shape):
        if extent == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


def _norm_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
    return tuple(sorted(ax % ndim for ax in axes))


# ========================== Elementwise ==============================

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return apply_op("add", a.data + b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return apply_op("sub", a.data - b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return apply_op("mul", a.data * b.data, (a, b),
                    lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return apply_op("div", out, (a, b),
                    lambda g: (_unbroadcast(g / b.data, a.shape),
                               _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return apply_op("neg", -a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return apply_op("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return apply_op("log", out, (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return apply_op("sqrt", out, (a,), lambda g: (g / (2.0 * out),))


def relu(a) -> Tensor:
    """Subgradient at exactly 0 is 0"""
    a = as_tensor(a)
    note_kink_pattern(a.data)
    mask = a.data > 0
    return apply_op("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return apply_op("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return apply_op("softplus", np.logaddexp(0.0, a.data), (a,), lambda g: (g * expit(a.data),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return apply_op("softmax", out, (a,), _backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"log_softmax: axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def _backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return apply_op("log_softmax", out, (a,), _backward)


# ========================== Reductions / shape ==============================

def sum(a, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return apply_op("sum", out, (a,), _backward)


def mean(a, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape),)

    return apply_op("mean", out, (a,), _backward)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return apply_op("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    if sorted(ax % a.ndim for ax in axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation for shape {a.shape}")
    inverse = tuple(np.argsort([ax % a.ndim for ax in axes]))
    return apply_op("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def getitem(a, index) -> Tensor:
    """Slice (basic indexing); integer-array indices accumulate with add.at"""
    a = as_tensor(a)
    out = np.array(a.data[index])
    parts = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(p, (list, np.ndarray)) for p in parts)

    def _backward(g):
        gx = np.zeros_like(a.data)
        if fancy:
            np.add.at(gx, index, g)
        else:
            gx[index] = g
        return (gx,)

    return apply_op("slice", out, (a,), _backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    ref = tensors[0].shape
    axis = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise ShapeError(f"concat: shape {t.shape} does not match {ref} off axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return apply_op("concat", out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} differ") from None

    def _backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return apply_op("matmul", a.data @ b.data, (a, b), _backward)


# ========================== Spatial ops (N, C, H, W) ==============================

def _pad_widths(pad: Padding) -> Tuple[int, int, int, int]:
    if isinstance(pad, int):
        return pad, pad, pad, pad
    top, bottom, left, right = pad
    return top, bottom, left, right


def pad2d(a, pad: Padding, mode: str = "zero") -> Tensor:
    """Pads the last two axes; mode is zero, reflect or symmetric"""
    a = as_tensor(a)
    top, bottom, left, right = _pad_widths(pad)
    if top == bottom == left == right == 0:
        return a
    h, w = a.shape[-2:]
    if mode == "zero":
        widths = [(0, 0)] * (a.ndim - 2) + [(top, bottom), (left, right)]
        out = np.pad(a.data, widths)
        return apply_op("pad2d", out, (a,), lambda g: (g[..., top:top + h, left:left + w],))
    if mode not in ("reflect", "symmetric"):
        raise ValueError(f"pad2d: unknown mode {mode!r}")
    rows = np.pad(np.arange(h), (top, bottom), mode=mode)
    cols = np.pad(np.arange(w), (left, right), mode=mode)
    out = a.data[..., rows[:, None], cols[None, :]]

    def _backward(g):
        lead = a.shape[:-2]
        gx = np.zeros((int(np.prod(lead)) if lead else 1, h, w))
        np.add.at(gx, (slice(None), rows[:, None], cols[None, :]), g.reshape(gx.shape[0], *g.shape[-2:]))
        return (gx.reshape(a.shape),)

    return apply_op("pad2d", out, (a,), _backward)


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """
    x: (N, C, H, W), w: (O, C/groups, kh, kw), zero padding.
    Output extent: floor((n + 2p - k) / s) + 1.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4D input and kernel, got {x.shape} and {w.shape}")
    if padding:
        x = pad2d(x, padding, mode="zero")
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    if c != cg * groups or o % groups:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape} (groups={groups})")
    if kh > h or kw > wd:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
    ho, wo = (h - kh) // stride + 1, (wd - kw) // stride + 1
    og = o // groups

    windows = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = windows.reshape(n, groups, cg, ho, wo, kh, kw)
    wg = w.data.reshape(groups, og, cg, kh, kw)
    out = np.einsum("ngchwij,gocij->ngohw", win, wg, optimize=True).reshape(n, o, ho, wo)
    inputs = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (o,):
            raise ShapeError(f"conv2d: bias {b.shape} does not match {o} output channels")
        out = out + b.data[None, :, None, None]
        inputs.append(b)

    def _backward(g):
        g5 = g.reshape(n, groups, og, ho, wo)
        gw = np.einsum("ngchwij,ngohw->gocij", win, g5, optimize=True).reshape(w.shape)
        gx = np.zeros_like(x.data)
        for i in range(kh):
            for j in range(kw):
                contrib = np.einsum("ngohw,goc->ngchw", g5, wg[..., i, j], optimize=True)
                gx[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                    contrib.reshape(n, c, ho, wo)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return apply_op("conv2d", out, inputs, _backward)


def avg_pool2d(x, kernel: int, stride: Optional[int] = None, padding: int = 0) -> Tensor:
    x = as_tensor(x)
    stride = stride or kernel
    if padding:
        x = pad2d(x, padding, mode="zero")
    h, w = x.shape[-2:]
    if kernel > h or kernel > w:
        raise ShapeError(f"avg_pool2d: kernel {kernel} larger than input {x.shape}")
    ho, wo = (h - kernel) // stride + 1, (w - kernel) // stride + 1
    windows = sliding_window_view(x.data, (kernel, kernel), axis=(-2, -1))[..., ::stride, ::stride, :, :]
    out = windows.mean(axis=(-2, -1))

    def _backward(g):
        gx = np.zeros_like(x.data)
        share = g / (kernel * kernel)
        for i in range(kernel):
            for j in range(kernel):
                gx[..., i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += share
        return (gx,)

    return apply_op("avg_pool2d", out, (x,), _backward)


def upsample_nearest2d(x, factor: int = 2) -> Tensor:
    x = as_tensor(x)
    h, w = x.shape[-2:]
    out = x.data.repeat(factor, axis=-2).repeat(factor, axis=-1)

    def _backward(g):
        g = g.reshape(*g.shape[:-2], h, factor, w, factor)
        return (g.sum(axis=(-3, -1)),)

    return apply_op("upsample_nearest2d", out, (x,), _backward)


# ========================== Normalization ==============================

def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalizes over the last axis"""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: affine {gamma.shape}/{beta.shape} does not match last axis of {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    rstd = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * rstd
    lead = tuple(range(x.ndim - 1))

    def _backward(g):
        gxhat = g * gamma.data
        gx = rstd * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                     - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return apply_op("layer_norm", xhat * gamma.data + beta.data, (x, gamma, beta), _backward)


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """
    Channel axis 1. In training mode normalizes with batch statistics and
    updates running_mean / running_var in place; eval mode uses the running ones.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: affine {gamma.shape} does not match channels of {x.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    if training:
        count = x.size // c
        mu = x.data.mean(axis=axes, keepdims=True)
        var = ((x.data - mu) ** 2).mean(axis=axes, keepdims=True)
        unbiased = var * count / (count - 1) if count > 1 else var
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu.reshape(c)
        running_var *= (1.0 - momentum)
        running_var += momentum * unbiased.reshape(c)
    else:
        mu = running_mean.reshape(bshape)
        var = running_var.reshape(bshape)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * rstd
    g_shape = gamma.data.reshape(bshape)

    def _backward(g):
        gxhat = g * g_shape
        if training:
            gx = rstd * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                         - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        else:
            gx = gxhat * rstd
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return apply_op("batch_norm", xhat * g_shape + beta.data.reshape(bshape), (x, gamma, beta), _backward)


# ========================== Composites ==============================

def cosine_similarity(a, b, axis: int = -1) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    dot = sum(mul(a, b), axis=axis)
    norm_a = sqrt(sum(mul(a, a), axis=axis))
    norm_b = sqrt(sum(mul(b, b), axis=axis))
    return div(dot, mul(norm_a, norm_b))


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


# ========================== Operator overloads ==============================

Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = lambda self, other: div(self, other)
Tensor.__rtruediv__ = lambda self, other: div(other, self)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
Tensor.__rmatmul__ = lambda self, other: matmul(other, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__getitem__ = lambda self, index: getitem(self, index)
Tensor.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 and not isinstance(shape[0], int) else shape)
Tensor.transpose = lambda self, *axes: transpose(self, axes if axes else None)
Tensor.sum = lambda self, axis=None, keepdims=False: sum(self, axis, keepdims)
Tensor.mean = lambda self, axis=None, keepdims=False: mean(self, axis, keepdims)
Tensor.T = property(lambda self: transpose(self))

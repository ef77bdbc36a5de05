"""Differentiable operations over :class:`~litematch.tensor.Tensor`.

Each operation validates shapes, computes the forward result in the input
dtype, and registers a backward rule on the active tape. No implicit
broadcasting except over the leading dimensions of :func:`linear`; all
other operations require exact shapes.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateDescriptorError, DimensionError
from .tensor import Tensor, record

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor._wrap(a.data + b.data)
    record((a, b), out, lambda g: (g, g))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor._wrap(a.data - b.data)
    record((a, b), out, lambda g: (g, -g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor._wrap(a.data * b.data)
    record((a, b), out, lambda g: (g * b.data, g * a.data))
    return out


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)
    out = Tensor._wrap(x.data * c)
    record((x,), out, lambda g: (g * c,))
    return out


def shift(x: Tensor, c: float) -> Tensor:
    """Add a python scalar constant."""
    out = Tensor._wrap(x.data + float(c))
    record((x,), out, lambda g: (g,))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; leading batch dimensions must match exactly."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul requires at least 2-d operands")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = Tensor._wrap(np.matmul(a.data, b.data))

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    record((a, b), out, grad_fn)
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor._wrap(x.data.reshape(shape))
    orig = x.shape
    record((x,), out, lambda g: (g.reshape(orig),))
    return out


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    out = Tensor._wrap(np.ascontiguousarray(x.data.transpose(axes)))
    record((x,), out, lambda g: (np.ascontiguousarray(g.transpose(inv)),))
    return out


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along the leading axis."""
    if not 0 <= start < stop <= x.shape[0]:
        raise DimensionError(f"slice_rows: [{start}:{stop}] out of range for {x.shape}")
    out = Tensor._wrap(x.data[start:stop])

    def grad_fn(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[start:stop] = g
        return (gx,)

    record((x,), out, grad_fn)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor._wrap(np.maximum(x.data, 0.0))
    record((x,), out, lambda g: (g * (x.data > 0.0),))
    return out


def sqrt(x: Tensor) -> Tensor:
    """Elementwise square root; backward clamps the denominator near zero."""
    y = np.sqrt(x.data)
    out = Tensor._wrap(y)
    record((x,), out, lambda g: (g / (2.0 * np.maximum(y, 1e-12)),))
    return out


def sum_last(x: Tensor) -> Tensor:
    """Sum over the trailing axis."""
    if x.ndim < 1:
        raise DimensionError("sum_last requires at least 1-d input")
    out = Tensor._wrap(x.data.sum(axis=-1))
    n = x.shape[-1]
    record((x,), out, lambda g: (np.repeat(g[..., None], n, axis=-1),))
    return out


def mean_all(x: Tensor) -> Tensor:
    """Scalar mean over all elements."""
    out = Tensor._wrap(np.asarray(x.data.mean(), dtype=x.dtype))
    n = float(x.size)
    shp = x.shape
    record((x,), out, lambda g: (np.full(shp, float(g) / n, dtype=g.dtype),))
    return out


def linear(x: Tensor, w: Tensor, b: "Tensor | None") -> Tensor:
    """Affine map over the trailing axis, broadcast over leading axes.

    ``w`` has shape [Dout, Din], ``b`` shape [Dout]; pass ``b=None`` for a
    pure projection.
    """
    if w.ndim != 2 or (b is not None and (b.ndim != 1 or b.shape[0] != w.shape[0])):
        raise DimensionError(f"linear: bad parameter shapes w={w.shape}")
    if x.shape[-1] != w.shape[1]:
        raise DimensionError(f"linear: input dim {x.shape[-1]} != weight Din {w.shape[1]}")
    y = np.matmul(x.data, w.data.T)
    if b is not None:
        y += b.data
    out = Tensor._wrap(y)
    din, dout = w.shape[1], w.shape[0]

    def grad_fn(g):
        g2 = g.reshape(-1, dout)
        x2 = x.data.reshape(-1, din)
        gx = np.matmul(g, w.data)
        gw = np.matmul(g2.T, x2)
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    record((x, w) if b is None else (x, w, b), out, grad_fn)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the trailing axis to zero mean, unit variance, then affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: gamma/beta must have shape ({d},)")
    if eps <= 0:
        raise DimensionError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor._wrap(xhat * gamma.data + beta.data)

    def grad_fn(g):
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (dxhat - m1 - xhat * m2)
        g2 = g.reshape(-1, d)
        ggamma = (g * xhat).reshape(-1, d).sum(axis=0)
        gbeta = g2.sum(axis=0)
        return gx, ggamma, gbeta

    record((x, gamma, beta), out, grad_fn)
    return out


def softmax(x: Tensor) -> Tensor:
    """Softmax over the trailing axis, computed with max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor._wrap(y)

    def grad_fn(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    record((x,), out, grad_fn)
    return out


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    xd = x.data
    u = _GELU_C * (xd + _GELU_A * xd * xd * xd)
    t = np.tanh(u)
    out = Tensor._wrap(0.5 * xd * (1.0 + t))

    def grad_fn(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    record((x,), out, grad_fn)
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d convolution (cross-correlation) with zero padding.

    ``x``: [B, Cin, H, W]; ``w``: [Cout, Cin, k, k]; ``b``: [Cout].
    Output spatial size is floor((H + 2*padding - k)/stride) + 1.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError("conv2d expects 4-d input and weight")
    bsz, cin, h, ww = x.shape
    cout, cw, kh, kw = w.shape
    if cw != cin:
        raise DimensionError(f"conv2d: input channels {cin} != weight channels {cw}")
    if kh != kw:
        raise DimensionError("conv2d: kernel must be square")
    if b.shape != (cout,):
        raise DimensionError(f"conv2d: bias must have shape ({cout},)")
    if stride < 1:
        raise DimensionError("conv2d: stride must be >= 1")
    if h + 2 * padding < kh or ww + 2 * padding < kw:
        raise DimensionError("conv2d: kernel larger than padded input")
    k, s, p = kh, stride, padding

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    hp, wp = win.shape[2], win.shape[3]
    col = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bsz * hp * wp, cin * k * k)
    wmat = w.data.reshape(cout, -1)
    out2 = col @ wmat.T + b.data
    out = Tensor._wrap(np.ascontiguousarray(out2.reshape(bsz, hp, wp, cout).transpose(0, 3, 1, 2)))

    def grad_fn(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bsz * hp * wp, cout)
        gb = gmat.sum(axis=0)
        gw = (gmat.T @ col).reshape(w.shape)
        gcol = gmat @ wmat
        g6 = gcol.reshape(bsz, hp, wp, cin, k, k).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros((bsz, cin, h + 2 * p, ww + 2 * p), dtype=g.dtype)
        for ki in range(k):
            for kj in range(k):
                gxp[:, :, ki : ki + hp * s : s, kj : kj + wp * s : s] += g6[..., ki, kj]
        gx = gxp[:, :, p : p + h, p : p + ww] if p else gxp
        return np.ascontiguousarray(gx), gw, gb

    record((x, w, b), out, grad_fn)
    return out


def depthwise_conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-channel 3x3 convolution, stride 1, zero padding 1 (shape preserving).

    ``x``: [B, C, H, W]; ``w``: [C, 1, 3, 3]; ``b``: [C].
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError("depthwise_conv2d expects 4-d input and weight")
    bsz, c, h, ww = x.shape
    if w.shape != (c, 1, 3, 3):
        raise DimensionError(f"depthwise_conv2d: weight must be ({c},1,3,3), got {w.shape}")
    if b.shape != (c,):
        raise DimensionError(f"depthwise_conv2d: bias must have shape ({c},)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    wd = w.data[:, 0]
    out_data = np.empty_like(x.data)
    out_data[:] = b.data[None, :, None, None]
    scratch = np.empty_like(x.data)
    for ki in range(3):
        for kj in range(3):
            np.multiply(xp[:, :, ki : ki + h, kj : kj + ww], wd[None, :, ki, kj, None, None], out=scratch)
            out_data += scratch
    out = Tensor._wrap(out_data)

    def grad_fn(g):
        gb = g.sum(axis=(0, 2, 3))
        gw = np.empty_like(w.data)
        gxp = np.zeros_like(xp, dtype=g.dtype)
        tmp = np.empty_like(g)
        for ki in range(3):
            for kj in range(3):
                sl = xp[:, :, ki : ki + h, kj : kj + ww]
                np.multiply(g, sl, out=tmp)
                gw[:, 0, ki, kj] = tmp.sum(axis=(0, 2, 3))
                np.multiply(g, wd[None, :, ki, kj, None, None], out=tmp)
                gxp[:, :, ki : ki + h, kj : kj + ww] += tmp
        return np.ascontiguousarray(gxp[:, :, 1 : 1 + h, 1 : 1 + ww]), gw, gb

    record((x, w, b), out, grad_fn)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the two trailing spatial axes: [B, C, H, W] -> [B, C]."""
    if x.ndim != 4:
        raise DimensionError("global_avg_pool expects 4-d input")
    h, w = x.shape[2], x.shape[3]
    out = Tensor._wrap(x.data.mean(axis=(2, 3)))
    n = float(h * w)

    def grad_fn(g):
        return (np.broadcast_to(g[:, :, None, None] / n, x.shape).copy(),)

    record((x,), out, grad_fn)
    return out


def l2_normalize(x: Tensor) -> Tensor:
    """Scale each row of [B, D] to unit Euclidean norm."""
    if x.ndim != 2:
        raise DimensionError("l2_normalize expects a [B, D] matrix")
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    if np.any(norms <= 1e-12):
        raise DegenerateDescriptorError("row with near-zero norm cannot be normalized")
    y = x.data / norms
    out = Tensor._wrap(y)

    def grad_fn(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return ((g - y * dot) / norms,)

    record((x,), out, grad_fn)
    return out

"""Differentiable operations for the tensor engine.

Every op validates shapes eagerly, computes forward with numpy, and attaches
a backward closure via ``make_result``. Convolution is im2col + matmul;
max-pooling routes gradients to the first-occurrence argmax in scan order;
batch normalization is composed from primitive ops so its backward is exact.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import NumericError, ShapeError
from .tensor import Tensor, make_result, unbroadcast


def _axes_tuple(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(grad: np.ndarray, shape: tuple[int, ...], axes: tuple[int, ...],
                    keepdims: bool) -> np.ndarray:
    if not keepdims:
        for a in sorted(axes):
            grad = np.expand_dims(grad, a)
    return np.broadcast_to(grad, shape)


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return make_result(data, "add", (a, b),
                       lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    return make_result(data, "sub", (a, b),
                       lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return make_result(data, "mul", (a, b),
                       lambda g: (unbroadcast(g * b.data, a.shape),
                                  unbroadcast(g * a.data, b.shape)))


def neg(x: Tensor) -> Tensor:
    return make_result(-x.data, "neg", (x,), lambda g: (-g,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    return make_result(x.data + float(c), "add_scalar", (x,), lambda g: (g,))


def mul_scalar(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_result(x.data * c, "mul_scalar", (x,), lambda g: (g * c,))


def pow_scalar(x: Tensor, p: float) -> Tensor:
    p = float(p)
    data = x.data ** p
    return make_result(data, "pow_scalar", (x,),
                       lambda g: (g * p * x.data ** (p - 1.0),))


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)
    return make_result(data, "relu", (x,), lambda g: (g * (x.data > 0),))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid_np(x.data)
    return make_result(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# reductions / shape


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axes_tuple(axis, x.data.ndim)
    data = x.data.sum(axis=axes, keepdims=keepdims)
    return make_result(np.asarray(data), "sum", (x,),
                       lambda g: (_expand_reduced(g, x.shape, axes, keepdims).copy(),))


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axes_tuple(axis, x.data.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    data = x.data.mean(axis=axes, keepdims=keepdims)
    return make_result(np.asarray(data), "mean", (x,),
                       lambda g: (_expand_reduced(g, x.shape, axes, keepdims) / count,))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = x.data.reshape(shape)
    return make_result(data, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat requires at least one tensor")
    ndim = tensors[0].data.ndim
    ax = axis % ndim
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != ndim or any(o != b for i, (o, b) in enumerate(zip(other, base)) if i != ax):
            raise ShapeError(f"concat shape mismatch on non-concat dims: {base} vs {other}")
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]
    data = np.concatenate([t.data for t in tensors], axis=ax)

    def backward(g):
        return tuple(np.split(g, offsets, axis=ax))

    return make_result(data, "concat", tuple(tensors), backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    ax = axis % x.data.ndim
    if start < 0 or start + length > x.shape[ax]:
        raise ShapeError(f"narrow [{start}:{start + length}] out of range for dim {x.shape[ax]}")
    index = [slice(None)] * x.data.ndim
    index[ax] = slice(start, start + length)
    index = tuple(index)
    data = x.data[index].copy()

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return make_result(data, "narrow", (x,), backward)


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    ax = axis % x.data.ndim
    if sum(sizes) != x.shape[ax]:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to dim {x.shape[ax]}")
    parts = []
    start = 0
    for s in sizes:
        parts.append(narrow(x, ax, start, s))
        start += s
    return parts


# ---------------------------------------------------------------------------
# linear / regularization


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul expects [N,D]@[D,M], got {a.shape} @ {b.shape}")
    data = a.data @ b.data
    return make_result(data, "matmul", (a, b),
                       lambda g: (g @ b.data.T, a.data.T @ g))


def dense(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Fully connected layer: x[N,D] @ w[D,M] + b[M]."""
    if x.data.ndim != 2:
        raise ShapeError(f"dense expects a rank-2 input, got shape {x.shape}")
    if w.data.ndim != 2 or w.shape[0] != x.shape[1]:
        raise ShapeError(f"dense weight {w.shape} incompatible with input {x.shape}")
    out = matmul(x, w)
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"dense bias {b.shape} incompatible with weight {w.shape}")
        out = add(out, b)
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator, mode: str = "train") -> Tensor:
    """Zero each element with probability ``rate`` and rescale survivors.

    The mask is treated as a constant in backward; inference mode is the
    identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown dropout mode {mode!r}")
    if mode == "infer" or rate == 0.0:
        return make_result(x.data, "dropout_infer", (x,), lambda g: (g,))
    keep = (rng.random(x.shape) >= rate)
    scale = 1.0 / (1.0 - rate)
    factor = keep.astype(x.data.dtype) * scale
    return make_result(x.data * factor, "dropout", (x,), lambda g: (g * factor,))


def global_avg_pool(x: Tensor) -> Tensor:
    """[N,H,W,C] -> [N,C] spatial mean."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NHWC input, got shape {x.shape}")
    return mean(x, axis=(1, 2))


# ---------------------------------------------------------------------------
# convolution / pooling


def _conv_padding(h: int, w: int, kh: int, kw: int, stride: int,
                  padding: str) -> tuple[int, int, int, int, int, int]:
    """Return (out_h, out_w, pad_top, pad_bottom, pad_left, pad_right)."""
    if padding == "same":
        out_h = -(-h // stride)
        out_w = -(-w // stride)
        pad_h = max((out_h - 1) * stride + kh - h, 0)
        pad_w = max((out_w - 1) * stride + kw - w, 0)
        # zero-padding split floor-left/ceil-right
        return out_h, out_w, pad_h // 2, pad_h - pad_h // 2, pad_w // 2, pad_w - pad_w // 2
    if padding == "valid":
        if kh > h or kw > w:
            raise ShapeError(f"valid conv kernel {kh}x{kw} larger than input {h}x{w}")
        return (h - kh) // stride + 1, (w - kw) // stride + 1, 0, 0, 0, 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _window_view(x: np.ndarray, kh: int, kw: int, stride: int,
                 out_h: int, out_w: int) -> np.ndarray:
    n, _, _, c = x.shape
    sn, sh, sw, sc = x.strides
    return as_strided(x, (n, out_h, out_w, kh, kw, c),
                      (sn, sh * stride, sw * stride, sh, sw, sc))


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: str = "same") -> Tensor:
    """2-D convolution (cross-correlation) on NHWC input.

    kernel is [kh, kw, C, F]; same-padding output is ceil(H/stride) square
    with zeros split floor-left/ceil-right, valid-padding output is
    floor((H-kh)/stride)+1.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d expects NHWC input, got shape {x.shape}")
    if kernel.data.ndim != 4:
        raise ShapeError(f"conv2d kernel must be [kh,kw,C,F], got shape {kernel.shape}")
    n, h, w, c = x.shape
    kh, kw, kc, f = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d kernel expects {kc} input channels, input has {c}")
    if stride < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {f} filters")
    if not np.isfinite(x.data).all():
        raise NumericError("conv2d input contains non-finite values")

    out_h, out_w, pt, pb, pl, pr = _conv_padding(h, w, kh, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x.data
    cols = _window_view(xp, kh, kw, stride, out_h, out_w).reshape(n * out_h * out_w, kh * kw * c)
    kmat = kernel.data.reshape(kh * kw * c, f)
    out = cols @ kmat
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, out_h, out_w, f)

    def backward(g):
        gflat = g.reshape(n * out_h * out_w, f)
        gk = (cols.T @ gflat).reshape(kernel.shape)
        gb = gflat.sum(axis=0) if bias is not None else None
        gcols = (gflat @ kmat.T).reshape(n, out_h, out_w, kh, kw, c)
        gxp = np.zeros_like(xp)
        for p in range(kh):
            for q in range(kw):
                gxp[:, p:p + out_h * stride:stride, q:q + out_w * stride:stride, :] += \
                    gcols[:, :, :, p, q, :]
        gx = gxp[:, pt:pt + h, pl:pl + w, :]
        if bias is not None:
            return gx, gk, gb
        return gx, gk

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result(out, "conv2d", inputs, backward)


def maxpool2d(x: Tensor, window: int, stride: int, padding: str = "valid") -> Tensor:
    """Max-pooling over [window x window] patches.

    Backward routes each output gradient to the first-occurrence argmax in
    row-major scan order within its window. "same" padding pads with -inf
    (padding cells can never win the max and receive no gradient).
    """
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d expects NHWC input, got shape {x.shape}")
    if window < 1 or stride < 1:
        raise ValueError(f"maxpool2d window/stride must be >= 1, got {window}/{stride}")
    n, h, w, c = x.shape
    if window > h or window > w:
        raise ShapeError(f"maxpool2d window {window} larger than spatial dims {h}x{w}")
    out_h, out_w, pt, pb, pl, pr = _conv_padding(h, w, window, window, stride, padding)
    if pt or pb or pl or pr:
        xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)),
                    constant_values=-np.inf)
    else:
        xp = x.data
    hp, wp = xp.shape[1], xp.shape[2]
    windows = _window_view(xp, window, window, stride, out_h, out_w)
    wflat = windows.reshape(n, out_h, out_w, window * window, c)
    idx = wflat.argmax(axis=3)
    out = np.take_along_axis(wflat, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def backward(g):
        p = idx // window
        q = idx % window
        ii = np.arange(out_h)[None, :, None, None] * stride + p
        jj = np.arange(out_w)[None, None, :, None] * stride + q
        nn = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, None, None, :]
        flat = ((nn * hp + ii) * wp + jj) * c + cc
        gxp = np.zeros(n * hp * wp * c, dtype=g.dtype)
        np.add.at(gxp, flat.ravel(), g.ravel())
        return (gxp.reshape(n, hp, wp, c)[:, pt:pt + h, pl:pl + w, :],)

    return make_result(np.ascontiguousarray(out), "maxpool2d", (x,), backward)


# ---------------------------------------------------------------------------
# batch normalization


class BatchNormState:
    """Running per-channel moments, updated in train mode, used in infer mode."""

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray, momentum: float) -> None:
        self.mean = (1.0 - momentum) * self.mean + momentum * batch_mean.astype(self.mean.dtype)
        self.var = (1.0 - momentum) * self.var + momentum * batch_var.astype(self.var.dtype)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
              mode: str = "train", momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over all non-channel axes.

    Train mode normalizes by batch moments (population variance) and updates
    the running moments; infer mode normalizes by the running moments. Built
    from primitive ops, so gradients w.r.t. input, gamma and beta are exact.
    """
    if x.data.ndim < 2:
        raise ShapeError(f"batchnorm expects at least rank-2 input, got shape {x.shape}")
    channels = x.shape[-1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(
            f"batchnorm gamma/beta must have shape ({channels},), got {gamma.shape}/{beta.shape}")
    if x.shape[0] == 0:
        raise ValueError("batchnorm requires a non-empty batch")
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    axes = tuple(range(x.data.ndim - 1))
    if mode == "train":
        mu = mean(x, axis=axes, keepdims=True)
        d = sub(x, mu)
        var = mean(mul(d, d), axis=axes, keepdims=True)
        inv = pow_scalar(add_scalar(var, eps), -0.5)
        xhat = mul(d, inv)
        state.update(mu.data.reshape(channels), var.data.reshape(channels), momentum)
    else:
        rm = Tensor(state.mean.astype(x.data.dtype))
        inv = Tensor(1.0 / np.sqrt(state.var.astype(x.data.dtype) + eps))
        xhat = mul(sub(x, rm), inv)
    return add(mul(xhat, gamma), beta)


# ---------------------------------------------------------------------------
# loss kernels


def sigmoid_ce(logits: Tensor, targets, literal: bool = False) -> Tensor:
    """Elementwise sigmoid cross-entropy against constant targets.

    Default is the two-term form -y*log(p) - (1-y)*log(1-p) computed via the
    overflow-safe identity max(z,0) - z*y + log1p(exp(-|z|)); ``literal``
    keeps only the -y*log(p) term. Targets never receive gradients.
    """
    y = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    z = logits.data
    if y.shape != z.shape:
        raise ShapeError(f"sigmoid_ce targets shape {y.shape} != logits shape {z.shape}")
    y = y.astype(z.dtype, copy=False)
    softplus_negabs = np.log1p(np.exp(-np.abs(z)))
    if literal:
        data = y * (np.maximum(-z, 0) + softplus_negabs)

        def backward(g):
            return (g * y * (_sigmoid_np(z) - 1.0),)
    else:
        data = np.maximum(z, 0) - z * y + softplus_negabs

        def backward(g):
            return (g * (_sigmoid_np(z) - y),)

    return make_result(data, "sigmoid_ce", (logits,), backward)

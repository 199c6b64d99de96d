"""Differentiable operations.

Shapes must match exactly. The only broadcasting allowed is the bias add
inside :func:`linear` / :func:`conv2d` and scaling a tensor by a scalar
(a Python number or a single-element tensor via :func:`scale`).
"""
from __future__ import annotations

from numbers import Number

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_result

# active finite-difference recorders; relu/clamp append their branch masks
_KINK_LOG: list[list[bytes]] = []


def _note_kink(mask: np.ndarray) -> None:
    if _KINK_LOG:
        _KINK_LOG[-1].append(np.packbits(mask).tobytes())


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _norm_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"{op}: axis {axis} out of range for rank {ndim}")
    return axis % ndim


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Number):
        return make_result(a.data + a.data.dtype.type(b), (a,), lambda g: (g,))
    b = _as_tensor(b)
    _check_same_shape(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,))


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Number):
        return add(a, -b)
    b = _as_tensor(b)
    _check_same_shape(a, b, "sub")
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Number):
        c = a.data.dtype.type(b)
        return make_result(a.data * c, (a,), lambda g: (g * c,))
    b = _as_tensor(b)
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every element of ``x`` by the single-element tensor ``s``."""
    if s.size != 1:
        raise ValueError(f"scale: factor must have one element, got shape {s.shape}")
    xd, sv = x.data, s.data.reshape(())

    def backward(g):
        return g * sv, np.asarray(np.sum(g * xd), dtype=s.data.dtype).reshape(s.shape)

    return make_result(xd * sv, (x, s), backward)


# ---------------------------------------------------------------------------
# pointwise nonlinearities
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _note_kink(mask)
    return make_result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return make_result(out, (x,), lambda g: (g * out * (1 - out),))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log: input must be strictly positive")
    xd = x.data
    return make_result(np.log(xd), (x,), lambda g: (g / xd,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    if lo > hi:
        raise ValueError(f"clamp: lo={lo} exceeds hi={hi}")
    inside = (x.data >= lo) & (x.data <= hi)
    _note_kink(inside)
    out = np.clip(x.data, lo, hi).astype(x.dtype)
    return make_result(out, (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# reductions and normalizers
# ---------------------------------------------------------------------------

def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = x.shape
    if axis is not None:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(_norm_axis(a, x.ndim, "sum") for a in axes)
    else:
        axes = tuple(range(x.ndim))
    out = np.sum(x.data, axis=axes)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

    return make_result(np.asarray(out, dtype=x.dtype), (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[_norm_axis(a, x.ndim, "mean")] for a in axes]))
    return mul(sum(x, axis), 1.0 / count)


def log_sum_exp(x: Tensor, axis: int = -1) -> Tensor:
    """``log(sum(exp(x)))`` along ``axis`` using the max-shift identity."""
    axis = _norm_axis(axis, x.ndim, "log_sum_exp")
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = np.sum(e, axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = e / s

    def backward(g):
        return (np.expand_dims(g, axis) * soft,)

    return make_result(out.astype(x.dtype), (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axis(axis, x.ndim, "softmax")
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    p = (e / np.sum(e, axis=axis, keepdims=True)).astype(x.dtype)

    def backward(g):
        return (p * (g - np.sum(g * p, axis=axis, keepdims=True)),)

    return make_result(p, (x,), backward)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def getitem(x: Tensor, idx) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return make_result(np.array(x.data[idx]), (x,), backward)


def concat(xs, axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channels by default)."""
    xs = list(xs)
    if not xs:
        raise ValueError("concat: empty input")
    axis = _norm_axis(axis, xs[0].ndim, "concat")
    for t in xs[1:]:
        if t.ndim != xs[0].ndim or any(
                t.shape[d] != xs[0].shape[d] for d in range(t.ndim) if d != axis):
            raise ValueError(f"concat: shape mismatch {xs[0].shape} vs {t.shape} off axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(xs)))

    return make_result(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), backward)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape [N, in], ``weight`` [out, in]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        grads = [g @ wd, g.T @ xd]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def _conv_out(size: int, k: int, stride: int, pad: int, dim: str) -> int:
    span = size + 2 * pad - k
    if span < 0:
        raise ValueError(f"conv2d: kernel {dim}={k} exceeds padded input {dim}={size + 2 * pad}")
    # trailing rows/columns that do not fill a full stride are dropped
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, ``x`` [N,C,H,W] with ``weight`` [F,C,kh,kw]."""
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride={stride} / padding={padding}")
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d: expected rank-4 input and weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    f, wc, kh, kw = weight.shape
    if wc != c:
        raise ValueError(f"conv2d: input channels C={c} but weight expects C={wc}")
    if bias is not None and bias.shape != (f,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({f},)")
    ho = _conv_out(h, kh, stride, padding, "H")
    wo = _conv_out(w, kw, stride, padding, "W")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # cols: [N*Ho*Wo, C*kh*kw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(f, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

    ctx = dict(cols=cols, wmat=wmat, xshape=x.shape, wshape=weight.shape,
               stride=stride, padding=padding, has_bias=bias is not None)
    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(np.ascontiguousarray(out), parents, lambda g: conv2d_backward(g, ctx))


def conv2d_backward(g: np.ndarray, ctx: dict):
    n, c, h, w = ctx["xshape"]
    f, _, kh, kw = ctx["wshape"]
    stride, pad = ctx["stride"], ctx["padding"]
    ho, wo = g.shape[2], g.shape[3]
    gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
    dw = (gmat.T @ ctx["cols"]).reshape(ctx["wshape"])
    dcols = (gmat @ ctx["wmat"]).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
    grads = [np.ascontiguousarray(dx), dw]
    if ctx["has_bias"]:
        grads.append(g.sum(axis=(0, 2, 3)))
    return tuple(grads)


def _pool_matrix(size: int, bins: int, dtype) -> np.ndarray:
    """Row ``i`` averages the contiguous window ``[floor(i*size/bins), floor((i+1)*size/bins))``."""
    edges = (np.arange(bins + 1) * size) // bins
    m = np.zeros((bins, size), dtype=dtype)
    for i in range(bins):
        m[i, edges[i]:edges[i + 1]] = 1.0 / (edges[i + 1] - edges[i])
    return m


def _upsample_matrix(src: int, dst: int, dtype) -> np.ndarray:
    """Row ``i`` selects source index ``floor(i*src/dst)``."""
    m = np.zeros((dst, src), dtype=dtype)
    m[np.arange(dst), (np.arange(dst) * src) // dst] = 1
    return m


def _separable(x: Tensor, mh: np.ndarray, mw: np.ndarray) -> Tensor:
    out = np.einsum("ih,nchw,jw->ncij", mh, x.data, mw, optimize=True)

    def backward(g):
        return (np.einsum("ih,ncij,jw->nchw", mh, g, mw, optimize=True),)

    return make_result(out.astype(x.dtype), (x,), backward)


def adaptive_avg_pool2d(x: Tensor, bins) -> Tensor:
    """Average over a near-equal contiguous partition into ``bins=(bh, bw)`` cells."""
    bh, bw = bins
    if x.ndim != 4:
        raise ValueError(f"adaptive_avg_pool2d: expected [N,C,H,W], got {x.shape}")
    h, w = x.shape[2:]
    if not (1 <= bh <= h and 1 <= bw <= w):
        raise ValueError(f"adaptive_avg_pool2d: bins {(bh, bw)} exceed spatial extent {(h, w)}")
    return _separable(x, _pool_matrix(h, bh, x.dtype), _pool_matrix(w, bw, x.dtype))


def upsample_nearest(x: Tensor, target) -> Tensor:
    """Nearest-neighbour enlargement to ``target=(H, W)``."""
    th, tw = target
    if x.ndim != 4:
        raise ValueError(f"upsample_nearest: expected [N,C,h,w], got {x.shape}")
    h, w = x.shape[2:]
    if th < h or tw < w:
        raise ValueError(f"upsample_nearest: target {(th, tw)} smaller than source {(h, w)}")
    return _separable(x, _upsample_matrix(h, th, x.dtype), _upsample_matrix(w, tw, x.dtype))


def global_avg_pool(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,C]."""
    return mean(x, axis=(2, 3))

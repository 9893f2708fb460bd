"""Differentiable primitives on :class:`~vertenet.tensor.Tensor`.

Feature maps are (batch, channels, height, width). Every primitive checks its
operand shapes, computes the forward value with numpy, and registers a
backward rule on the active tape.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .tensor import ShapeError, Tensor, as_tensor, record

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, name: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast {a.shape} with {b.shape}") from None


def _check_map(x: Tensor, name: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name}: expected (B, C, H, W), got {x.shape}")


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return record(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return record(out, (a, b),
                  lambda g: (_unbroadcast(g / b.data, a.shape),
                             _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record(-a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return record(np.log(a.data), (a,), lambda g: (g / a.data,))


def power(a: Tensor, p: float) -> Tensor:
    return record(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def absolute(a: Tensor) -> Tensor:
    return record(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return record(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return record(a.data * pos, (a,), lambda g: (g * pos,))


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return record(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


def sigmoid(a: Tensor) -> Tensor:
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)
    return record(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0.0, x)
    sig = np.exp(x - out)
    return record(out, (a,), lambda g: (g * sig,))


def inverse_softplus(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


# ---------------------------------------------------------------- reductions

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis, keepdims), 1.0 / n)


# ---------------------------------------------------------------- structure

def reshape(a: Tensor, shape) -> Tensor:
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return record(np.array(a.data[index]), (a,), backward)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat: {t.shape} does not match {ref} outside axis {axis}")
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                  lambda g: tuple(np.split(g, sizes, axis=axis)))


def split_channels(a: Tensor, n: int) -> list[Tensor]:
    c = a.shape[1]
    if c % n:
        raise ShapeError(f"split_channels: {c} channels not divisible by {n}")
    step = c // n
    return [a[:, i * step:(i + 1) * step] for i in range(n)]


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the two trailing dims (numpy broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record(out, (a, b), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record(out, (a,), backward)


def softmax_rows(m: Tensor, beta) -> Tensor:
    """Row softmax of ``m / beta`` (stabilized by row-max subtraction).

    ``beta`` broadcasts against ``m`` (a scalar, or one value per head).
    """
    m, b = as_tensor(m), as_tensor(beta)
    if not np.all(np.isfinite(b.data)) or np.any(b.data <= 0):
        raise ValueError(f"softmax_rows: beta must be positive and finite, got {b.data}")
    _check_broadcast(m, b, "softmax_rows")
    out = np.divide(m.data, b.data)
    out -= out.max(axis=-1, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)

    def backward(g):
        gz = g * out
        gz -= out * gz.sum(axis=-1, keepdims=True)
        gm = gz / b.data
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(-(gm * m.data) / b.data, b.shape)
        return gm, gb

    return record(out, (m, b), backward)


# ---------------------------------------------------------------- convolution

def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride=1, padding=0,
           groups: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``w`` is (C_out, C_in // groups, kh, kw); ``groups`` is 1 or C_in
    (depthwise, one filter per channel).
    """
    _check_map(x, "conv2d")
    if w.ndim != 4:
        raise ShapeError(f"conv2d: weight must be rank 4, got {w.shape}")
    B, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if groups not in (1, C) or Cg * groups != C:
        raise ShapeError(f"conv2d: weight {w.shape} incompatible with {C} input channels, groups={groups}")
    if groups != 1 and O != C:
        raise ShapeError(f"conv2d: depthwise conv needs {C} output channels, weight has {O}")
    Hp, Wp = H + 2 * ph, W + 2 * pw
    if kh > Hp or kw > Wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} exceeds padded input {Hp}x{Wp}")
    Ho, Wo = (Hp - kh) // sh + 1, (Wp - kw) // sw + 1

    if kh == kw == 1 and sh == sw == 1 and ph == pw == 0 and groups == 1:
        return _pointwise(x, w, bias)

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    inputs = (x, w) if bias is None else (x, w, bias)
    if groups == 1:
        out, backward = _conv_dense(x, w, xp, (sh, sw), (Ho, Wo))
    else:
        out, backward = _conv_depthwise(x, w, xp, (Ho, Wo))
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)

    def full_backward(g):
        gx, gw = backward(g)
        if gx is not None:
            gx = gx[:, :, ph:ph + H, pw:pw + W]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return record(out, inputs, full_backward)


def _conv_dense(x, w, xp, stride, out_hw):
    B, C = xp.shape[:2]
    O, _, kh, kw = w.shape
    sh, sw = stride
    Ho, Wo = out_hw
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]  # B,C,Ho,Wo,kh,kw
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = w.data.reshape(O, -1)
    out = (cols @ wmat.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gw = (gmat.T @ cols).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(B, Ho, Wo, C, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gx = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw] += dcols[..., i, j]
        return gx, gw

    return np.ascontiguousarray(out), backward


def _conv_depthwise(x, w, xp, out_hw):
    Ho, Wo = out_hw
    _, _, kh, kw = w.shape
    taps = w.data[:, 0]
    out = np.zeros(xp.shape[:2] + (Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + Ho, j:j + Wo] * taps[:, i, j].reshape(1, -1, 1, 1)

    def backward(g):
        gw = np.zeros_like(w.data) if w.requires_grad else None
        gx = np.zeros_like(xp) if x.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                if gw is not None:
                    gw[:, 0, i, j] = np.einsum("bchw,bchw->c", g, xp[:, :, i:i + Ho, j:j + Wo])
                if gx is not None:
                    gx[:, :, i:i + Ho, j:j + Wo] += g * taps[:, i, j].reshape(1, -1, 1, 1)
        return gx, gw

    return out, backward


def _pointwise(x: Tensor, w: Tensor, bias: Tensor | None) -> Tensor:
    wm = w.data[:, :, 0, 0]
    out = np.einsum("oc,bchw->bohw", wm, x.data, optimize=True)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    inputs = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        gx = np.einsum("oc,bohw->bchw", wm, g, optimize=True) if x.requires_grad else None
        gw = np.einsum("bohw,bchw->oc", g, x.data, optimize=True)[:, :, None, None] if w.requires_grad else None
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    return record(out, inputs, backward)


def pointwise_conv(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 convolution; the feature-map form of a linear layer."""
    _check_map(x, "pointwise_conv")
    if w.ndim != 4 or w.shape[2:] != (1, 1) or w.shape[1] != x.shape[1]:
        raise ShapeError(f"pointwise_conv: weight {w.shape} does not map {x.shape[1]} channels")
    return _pointwise(x, w, bias)


def depthwise_conv3x3(x: Tensor, w: Tensor) -> Tensor:
    return conv2d(x, w, stride=1, padding=1, groups=x.shape[1])


def transposed_conv_upsample(x: Tensor, r: int, weights: Tensor) -> Tensor:
    """Transposed convolution with an r x r kernel and stride r.

    ``weights`` is (C_in, C_out, r, r); every input cell paints one
    non-overlapping r x r output block, so output dims are exactly r x input.
    """
    if r <= 0:
        raise ValueError(f"transposed_conv_upsample: r must be >= 1, got {r}")
    _check_map(x, "transposed_conv_upsample")
    B, C, H, W = x.shape
    if weights.ndim != 4 or weights.shape[0] != C or weights.shape[2:] != (r, r):
        raise ShapeError(f"transposed_conv_upsample: weight {weights.shape} needs ({C}, C_out, {r}, {r})")
    O = weights.shape[1]
    t = np.tensordot(x.data, weights.data, axes=([1], [0]))  # B,H,W,O,r,r
    out = t.transpose(0, 3, 1, 4, 2, 5).reshape(B, O, H * r, W * r)

    def backward(g):
        g6 = g.reshape(B, O, H, r, W, r)
        gx = np.einsum("bohiwj,coij->bchw", g6, weights.data, optimize=True) if x.requires_grad else None
        gw = np.einsum("bchw,bohiwj->coij", x.data, g6, optimize=True) if weights.requires_grad else None
        return gx, gw

    return record(out, (x, weights), backward)


# ---------------------------------------------------------------- resampling

def resample(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Separable linear resampling ``rows @ x @ cols.T`` on the spatial dims.

    Edge padding, cropping, average pooling and bilinear upsampling are all
    expressed through this one primitive with constant matrices.
    """
    _check_map(x, "resample")
    if rows.shape[1] != x.shape[2] or cols.shape[1] != x.shape[3]:
        raise ShapeError(f"resample: matrices {rows.shape}, {cols.shape} do not fit {x.shape}")
    out = rows @ x.data @ cols.T
    return record(out, (x,), lambda g: (rows.T @ g @ cols,))


def _edge_pad_matrix(n: int, before: int, after: int) -> np.ndarray:
    idx = np.clip(np.arange(-before, n + after), 0, n - 1)
    m = np.zeros((n + before + after, n))
    m[np.arange(len(idx)), idx] = 1.0
    return m


def _pool_matrix(n: int, r: int) -> np.ndarray:
    out_n = -(-n // r)
    pad = _edge_pad_matrix(n, 0, out_n * r - n)
    avg = np.kron(np.eye(out_n), np.full((1, r), 1.0 / r))
    return avg @ pad


def _bilinear_matrix(n: int, scale: int) -> np.ndarray:
    # half-pixel centers (align_corners=False)
    m = np.zeros((n * scale, n))
    for i in range(n * scale):
        src = max((i + 0.5) / scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n - 1)
        i1 = min(i0 + 1, n - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def pad_edge(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    _check_map(x, "pad_edge")
    if not (top or bottom or left or right):
        return x
    return resample(x, _edge_pad_matrix(x.shape[2], top, bottom), _edge_pad_matrix(x.shape[3], left, right))


def pad_to_multiple(x: Tensor, m: int) -> Tensor:
    H, W = x.shape[2:]
    return pad_edge(x, 0, (-H) % m, 0, (-W) % m)


def crop(x: Tensor, h: int, w: int) -> Tensor:
    if x.shape[2] == h and x.shape[3] == w:
        return x
    return x[:, :, :h, :w]


def avg_pool2d(x: Tensor, r: int) -> Tensor:
    """Mean over r x r blocks after edge-replicating H and W up to a multiple of r."""
    if r <= 0:
        raise ValueError(f"avg_pool2d: r must be >= 1, got {r}")
    _check_map(x, "avg_pool2d")
    if r == 1:
        return x
    return resample(x, _pool_matrix(x.shape[2], r), _pool_matrix(x.shape[3], r))


def bilinear_upsample(x: Tensor, scale: int = 2) -> Tensor:
    _check_map(x, "bilinear_upsample")
    if scale <= 0:
        raise ValueError(f"bilinear_upsample: scale must be >= 1, got {scale}")
    return resample(x, _bilinear_matrix(x.shape[2], scale), _bilinear_matrix(x.shape[3], scale))


# ---------------------------------------------------------------- normalization

def layer_norm_channels(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each pixel's channel vector, then scale and shift per channel."""
    _check_map(x, "layer_norm_channels")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"layer_norm_channels: affine params {gamma.shape}/{beta.shape} need ({C},)")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    g4 = gamma.data.reshape(1, C, 1, 1)
    out = xhat * g4 + beta.data.reshape(1, C, 1, 1)

    def backward(g):
        gxhat = g * g4
        gx = inv * (gxhat - gxhat.mean(axis=1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=1, keepdims=True))
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return record(out, (x, gamma, beta), backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool = False, eps: float = 1e-5):
    """Per-channel batch normalization.

    In inference mode the supplied running statistics are used, making the
    op a fixed affine map of ``x``. In training mode batch statistics are
    used and returned so the caller can update its running estimates.
    Returns ``(out, batch_mean, batch_var)``; the stats are None in
    inference mode.
    """
    _check_map(x, "batch_norm")
    C = x.shape[1]
    g4 = gamma.data.reshape(1, C, 1, 1)
    if not training:
        inv = 1.0 / np.sqrt(np.asarray(running_var).reshape(1, C, 1, 1) + eps)
        xhat = (x.data - np.asarray(running_mean).reshape(1, C, 1, 1)) * inv
        out = xhat * g4 + beta.data.reshape(1, C, 1, 1)
        return record(out, (x, gamma, beta),
                      lambda g: (g * g4 * inv, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3)))), None, None

    axes = (0, 2, 3)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * g4 + beta.data.reshape(1, C, 1, 1)

    def backward(g):
        gxhat = g * g4
        gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return record(out, (x, gamma, beta), backward), mu.reshape(C), var.reshape(C)

"""Dual-resolution windowed attention, channel attention and the gated feed-forward.

Both resolutions use the same window side ``p``: the full-resolution branch
tiles the input into p x p windows, the reduced branch average-pools by ``r``
first and tiles with the same ``p``, so each of its windows covers an
(r*p) x (r*p) patch of the input. The reduced branch is brought back to full
resolution with a learnable stride-r transposed convolution, concatenated
with the full-resolution branch along channels, and projected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .layers import NormParams, conv_weight, layer_norm
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class WindowSpec:
    p: int = 10
    r: int = 2
    heads_high: int = 1
    heads_low: int = 1

    def __post_init__(self):
        if self.p < 1 or self.r < 1:
            raise ValueError(f"WindowSpec: p and r must be >= 1, got p={self.p}, r={self.r}")
        if self.heads_high < 0 or self.heads_low < 0 or self.heads == 0:
            raise ValueError(f"WindowSpec: invalid head split {self.heads_high}/{self.heads_low}")

    @property
    def heads(self) -> int:
        return self.heads_high + self.heads_low

    @classmethod
    def split(cls, p: int, r: int, heads: int, low_fraction: float = 0.5) -> "WindowSpec":
        low = int(round(heads * low_fraction))
        return cls(p=p, r=r, heads_high=heads - low, heads_low=low)

    def window_count(self, h: int, w: int) -> int:
        return -(-h // self.p) * -(-w // self.p)


@dataclass
class AttentionParams:
    """Projections for one dual-resolution attention layer.

    Branch fields are None when that branch has no heads. ``beta_*`` hold the
    pre-softplus temperatures, one per head (or a single shared one).
    """

    q_high: Tensor | None
    k_high: Tensor | None
    v_high: Tensor | None
    beta_high: Tensor | None
    q_low: Tensor | None
    k_low: Tensor | None
    v_low: Tensor | None
    beta_low: Tensor | None
    up_low: Tensor | None
    proj: Tensor

    @classmethod
    def create(cls, rng: np.random.Generator, channels: int, spec: WindowSpec,
               per_head_beta: bool = True) -> "AttentionParams":
        if channels % spec.heads:
            raise ShapeError(f"{channels} channels not divisible by {spec.heads} heads")
        d = channels // spec.heads

        def branch(h):
            if h == 0:
                return None, None, None, None
            c = h * d
            beta = ops.inverse_softplus(np.full(h if per_head_beta else 1, np.sqrt(d)))
            return (conv_weight(rng, c, channels, gain=0.5), conv_weight(rng, c, channels, gain=0.5),
                    conv_weight(rng, c, channels), Tensor(beta, requires_grad=True))

        qh, kh, vh, bh = branch(spec.heads_high)
        ql, kl, vl, bl = branch(spec.heads_low)
        up = None
        if spec.heads_low:
            c = spec.heads_low * d
            # nearest-neighbour start plus noise
            w = np.zeros((c, c, spec.r, spec.r))
            w[np.arange(c), np.arange(c)] = 1.0
            up = Tensor(w + rng.normal(0.0, 0.1, size=w.shape), requires_grad=True)
        return cls(qh, kh, vh, bh, ql, kl, vl, bl, up, conv_weight(rng, channels, channels, gain=0.5))


def window_partition(x: Tensor, p: int) -> tuple[Tensor, tuple]:
    """Tile a padded map into non-overlapping p x p windows in raster order.

    Returns windows of shape (B * nh * nw, C, p, p) and the metadata needed
    by :func:`window_merge`.
    """
    if p <= 0:
        raise ValueError(f"window_partition: p must be >= 1, got {p}")
    B, C, H, W = x.shape
    if H % p or W % p:
        raise ShapeError(f"window_partition: {H}x{W} is not a multiple of p={p}; pad first")
    nh, nw = H // p, W // p
    t = ops.reshape(x, (B, C, nh, p, nw, p))
    t = ops.transpose(t, (0, 2, 4, 1, 3, 5))
    return ops.reshape(t, (B * nh * nw, C, p, p)), (B, C, nh, nw, p)


def window_merge(windows: Tensor, meta: tuple) -> Tensor:
    B, C, nh, nw, p = meta
    t = ops.reshape(windows, (B, nh, nw, C, p, p))
    t = ops.transpose(t, (0, 3, 1, 4, 2, 5))
    return ops.reshape(t, (B, C, nh * p, nw * p))


def _tokens(t: Tensor, heads: int, p: int) -> tuple[Tensor, tuple]:
    # (B, heads*d, Hp, Wp) -> (B*nh*nw, heads, p*p, d)
    B, C, Hp, Wp = t.shape
    d = C // heads
    nh, nw = Hp // p, Wp // p
    t = ops.reshape(t, (B, heads, d, nh, p, nw, p))
    t = ops.transpose(t, (0, 3, 5, 1, 4, 6, 2))
    return ops.reshape(t, (B * nh * nw, heads, p * p, d)), (B, heads, d, nh, nw)


def _untokens(t: Tensor, meta: tuple, p: int) -> Tensor:
    B, heads, d, nh, nw = meta
    t = ops.reshape(t, (B, nh, nw, heads, p, p, d))
    t = ops.transpose(t, (0, 3, 6, 1, 4, 2, 5))
    return ops.reshape(t, (B, heads * d, nh * p, nw * p))


def windowed_attention(xq: Tensor, xkv: Tensor, wq: Tensor, wk: Tensor, wv: Tensor,
                       beta_raw: Tensor, heads: int, p: int, probe: list | None = None) -> Tensor:
    """Multi-head softmax attention restricted to p x p windows.

    Queries come from ``xq``; keys and values from ``xkv``. Edge-replicated
    padding brings H and W to multiples of p; the output is cropped back.
    """
    H, W = xq.shape[2:]
    xq_p = ops.pad_to_multiple(xq, p)
    xkv_p = xq_p if xkv is xq else ops.pad_to_multiple(xkv, p)
    q, qmeta = _tokens(ops.pointwise_conv(xq_p, wq), heads, p)
    k, _ = _tokens(ops.pointwise_conv(xkv_p, wk), heads, p)
    v, _ = _tokens(ops.pointwise_conv(xkv_p, wv), heads, p)
    logits = ops.matmul(q, ops.transpose(k, (0, 1, 3, 2)))
    beta = ops.reshape(ops.softplus(beta_raw), (-1, 1, 1))
    attn = ops.softmax_rows(logits, beta)
    if probe is not None:
        probe.append(attn.data)
    out = _untokens(ops.matmul(attn, v), qmeta, p)
    return ops.crop(out, H, W)


def dual_resolution_branches(x: Tensor, y: Tensor, params: AttentionParams, spec: WindowSpec,
                             probe: list | None = None) -> tuple[Tensor | None, Tensor | None]:
    """Full-resolution and upsampled reduced-resolution attention outputs, before merging."""
    if x.shape != y.shape:
        raise ShapeError(f"query map {x.shape} and key/value map {y.shape} differ")
    C = x.shape[1]
    if C % spec.heads:
        raise ShapeError(f"{C} channels not divisible by {spec.heads} heads")
    H, W = x.shape[2:]
    high = low = None
    if spec.heads_high:
        high = windowed_attention(x, y, params.q_high, params.k_high, params.v_high,
                                  params.beta_high, spec.heads_high, spec.p, probe)
    if spec.heads_low:
        xl = ops.avg_pool2d(x, spec.r)
        yl = xl if y is x else ops.avg_pool2d(y, spec.r)
        low = windowed_attention(xl, yl, params.q_low, params.k_low, params.v_low,
                                 params.beta_low, spec.heads_low, spec.p, probe)
        low = ops.crop(ops.transposed_conv_upsample(low, spec.r, params.up_low), H, W)
    return high, low


def _merge(high, low, params: AttentionParams) -> Tensor:
    parts = [t for t in (high, low) if t is not None]
    merged = parts[0] if len(parts) == 1 else ops.concat(parts, axis=1)
    return ops.pointwise_conv(merged, params.proj)


def drsa_forward(x: Tensor, params: AttentionParams, spec: WindowSpec, probe: list | None = None) -> Tensor:
    """Dual-resolution self-attention; output shape equals input shape."""
    return _merge(*dual_resolution_branches(x, x, params, spec, probe), params)


def drca_forward(x: Tensor, y: Tensor, params: AttentionParams, spec: WindowSpec,
                 probe: list | None = None) -> Tensor:
    """Dual-resolution cross-attention: queries from ``x`` (and its pooled copy), keys/values from ``y``."""
    if x.shape != y.shape:
        raise ShapeError(f"drca_forward: x {x.shape} and y {y.shape} differ")
    return _merge(*dual_resolution_branches(x, y, params, spec, probe), params)


def low_branch_footprint(x: Tensor, params: AttentionParams, spec: WindowSpec, cell: tuple[int, int],
                         delta: float = 1.0, tol: float = 1e-12) -> np.ndarray:
    """Input pixels whose perturbation changes the reduced branch output at ``cell``.

    Each pixel (all channels at once) is bumped by ``delta`` and the upsampled
    reduced-branch output at ``cell`` is compared with the unperturbed value.
    Returns a boolean (H, W) mask.
    """
    if not spec.heads_low:
        raise ValueError("low_branch_footprint needs heads_low >= 1")
    i, j = cell
    _, base = dual_resolution_branches(x, x, params, spec)
    ref = base.data[:, :, i, j]
    H, W = x.shape[2:]
    mask = np.zeros((H, W), dtype=bool)
    for a in range(H):
        for b in range(W):
            data = x.data.copy()
            data[:, :, a, b] += delta
            xp = Tensor(data)
            _, low = dual_resolution_branches(xp, xp, params, spec)
            mask[a, b] = np.max(np.abs(low.data[:, :, i, j] - ref)) > tol
    return mask


# ---------------------------------------------------------------- channel attention

@dataclass
class CsaParams:
    q: Tensor
    k: Tensor
    v: Tensor
    beta: Tensor

    @classmethod
    def create(cls, rng: np.random.Generator, channels: int) -> "CsaParams":
        return cls(conv_weight(rng, channels, channels, gain=0.5), conv_weight(rng, channels, channels, gain=0.5),
                   conv_weight(rng, channels, channels),
                   Tensor(ops.inverse_softplus(np.array([1.0])), requires_grad=True))


def csa_forward(f: Tensor, params: CsaParams, probe: list | None = None) -> Tensor:
    """Channel-by-channel attention: ``V^T softmax(K Q^T / beta)``.

    Q, K, V are (C, H*W) per image, so the attention matrix is C x C with the
    softmax taken along each row.
    """
    B, C, H, W = f.shape
    q = ops.reshape(ops.pointwise_conv(f, params.q), (B, C, H * W))
    k = ops.reshape(ops.pointwise_conv(f, params.k), (B, C, H * W))
    v = ops.reshape(ops.pointwise_conv(f, params.v), (B, C, H * W))
    attn = ops.softmax_rows(ops.matmul(k, ops.transpose(q, (0, 2, 1))), ops.softplus(params.beta))
    if probe is not None:
        probe.append(attn.data)
    # (V^T A)^T = A^T V, laid out as (B, C, H*W)
    out = ops.matmul(ops.transpose(attn, (0, 2, 1)), v)
    return ops.reshape(out, (B, C, H, W))


# ---------------------------------------------------------------- gated feed-forward

@dataclass
class GdfnParams:
    expand: Tensor
    dwconv: Tensor
    contract: Tensor
    expansion: int = 2

    @classmethod
    def create(cls, rng: np.random.Generator, channels: int, expansion: int = 2) -> "GdfnParams":
        hidden = expansion * channels
        dw = Tensor(rng.normal(0.0, 1.0 / 3.0, size=(2 * hidden, 1, 3, 3)), requires_grad=True)
        return cls(conv_weight(rng, 2 * hidden, channels), dw, conv_weight(rng, channels, hidden, gain=0.5),
                   expansion)


def gdfn_forward(f: Tensor, params: GdfnParams) -> Tensor:
    """Expand, depthwise 3x3, GELU(gate) * content, contract back to C channels."""
    C = f.shape[1]
    if params.expand.shape[1] != C or params.contract.shape[0] != C:
        raise ShapeError(f"gdfn_forward: params built for {params.expand.shape[1]} channels, input has {C}")
    h = ops.depthwise_conv3x3(ops.pointwise_conv(f, params.expand), params.dwconv)
    gate, content = ops.split_channels(h, 2)
    return ops.pointwise_conv(ops.mul(ops.gelu(gate), content), params.contract)


# ---------------------------------------------------------------- transformer block

@dataclass
class TransformerBlockParams:
    """``A = Attn(x[, y]) W_attn + x``; ``out = GDFN(A) W_ffn + A``.

    ``norm_*`` are None in literal mode (no layer normalization).
    """

    kind: str = field(metadata={"static": True})
    attn: AttentionParams | CsaParams
    attn_out: Tensor
    gdfn: GdfnParams
    ffn_out: Tensor
    norm_x: NormParams | None = None
    norm_y: NormParams | None = None
    norm_ffn: NormParams | None = None
    spec: WindowSpec | None = field(default=None, metadata={"static": True})

    @classmethod
    def create(cls, rng: np.random.Generator, channels: int, kind: str, spec: WindowSpec | None = None,
               normalize: bool = True, expansion: int = 2, per_head_beta: bool = True) -> "TransformerBlockParams":
        if kind not in ("self", "cross", "channel"):
            raise ValueError(f"unknown transformer block kind {kind!r}")
        if kind == "channel":
            attn = CsaParams.create(rng, channels)
        else:
            if spec is None:
                raise ValueError(f"{kind} block needs a WindowSpec")
            attn = AttentionParams.create(rng, channels, spec, per_head_beta)
        return cls(
            kind=kind,
            attn=attn,
            attn_out=conv_weight(rng, channels, channels, gain=0.5),
            gdfn=GdfnParams.create(rng, channels, expansion),
            ffn_out=conv_weight(rng, channels, channels, gain=0.5),
            norm_x=NormParams.create(channels) if normalize else None,
            norm_y=NormParams.create(channels) if normalize and kind == "cross" else None,
            norm_ffn=NormParams.create(channels) if normalize else None,
            spec=spec,
        )


def transformer_block(x: Tensor, params: TransformerBlockParams, y: Tensor | None = None,
                      probe: list | None = None) -> Tensor:
    xn = layer_norm(x, params.norm_x)
    if params.kind == "self":
        a = drsa_forward(xn, params.attn, params.spec, probe)
    elif params.kind == "cross":
        if y is None:
            raise ValueError("cross transformer block needs the key/value operand y")
        a = drca_forward(xn, layer_norm(y, params.norm_y), params.attn, params.spec, probe)
    else:
        a = csa_forward(xn, params.attn, probe)
    a = ops.add(ops.pointwise_conv(a, params.attn_out), x)
    f = gdfn_forward(layer_norm(a, params.norm_ffn), params.gdfn)
    return ops.add(ops.pointwise_conv(f, params.ffn_out), a)

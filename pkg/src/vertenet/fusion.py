"""Decoder-level fusion of a skip feature map with the upsampled decoder map.

Modes mirror the four decoder variants of the ablation:

``simple``     concat -> 3x3 conv -> ReLU
``drsa-only``  self-attention blocks, then concat/W_r, channel block, conv+BN+ReLU
``drca-only``  cross-attention blocks only in front of the same tail
``full``       self blocks, then cross blocks, then the same tail
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .attention import TransformerBlockParams, WindowSpec, transformer_block
from .layers import BatchNormParams, batch_norm, conv_weight, zeros
from .tensor import ShapeError, Tensor

FUSION_MODES = ("simple", "drsa-only", "drca-only", "full")


@dataclass
class UpsamplePathParams:
    weight: Tensor
    bias: Tensor

    @classmethod
    def create(cls, rng, c_in: int, c_out: int) -> "UpsamplePathParams":
        return cls(conv_weight(rng, c_out, c_in, 3), zeros(c_out))


def decoder_upsample_path(x_lower: Tensor, params: UpsamplePathParams, skip_hw: tuple[int, int] | None = None) -> Tensor:
    """Bilinear x2, 3x3 conv, ReLU. ``skip_hw`` (if given) must match the result."""
    y = ops.relu(ops.conv2d(ops.bilinear_upsample(x_lower, 2), params.weight, params.bias, padding=1))
    if skip_hw is not None and tuple(y.shape[2:]) != tuple(skip_hw):
        raise ShapeError(f"upsampled decoder map {y.shape[2:]} does not match skip map {tuple(skip_hw)}")
    return y


@dataclass
class McfbParams:
    mode: str = field(metadata={"static": True})
    upsample: UpsamplePathParams
    self_skip: TransformerBlockParams | None
    self_dec: TransformerBlockParams | None
    cross_skip: TransformerBlockParams | None
    cross_dec: TransformerBlockParams | None
    concat_proj: Tensor | None
    channel_block: TransformerBlockParams | None
    out_conv: Tensor
    out_bias: Tensor | None
    out_bn: BatchNormParams | None
    spec: WindowSpec | None = field(default=None, metadata={"static": True})

    @classmethod
    def create(cls, rng: np.random.Generator, c_lower: int, channels: int, c_out: int,
               spec: WindowSpec, mode: str = "full", normalize: bool = True,
               expansion: int = 2) -> "McfbParams":
        if mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {mode!r}; expected one of {FUSION_MODES}")
        up = UpsamplePathParams.create(rng, c_lower, channels)
        if mode == "simple":
            return cls(mode, up, None, None, None, None, None, None,
                       conv_weight(rng, c_out, 2 * channels, 3), zeros(c_out), None, spec)

        def block(kind, c):
            return TransformerBlockParams.create(rng, c, kind, spec if kind != "channel" else None,
                                                 normalize, expansion)

        with_self = mode in ("drsa-only", "full")
        with_cross = mode in ("drca-only", "full")
        return cls(
            mode, up,
            block("self", channels) if with_self else None,
            block("self", channels) if with_self else None,
            block("cross", channels) if with_cross else None,
            block("cross", channels) if with_cross else None,
            conv_weight(rng, 2 * channels, 2 * channels),
            block("channel", 2 * channels),
            conv_weight(rng, c_out, 2 * channels, 3), None,
            BatchNormParams.create(c_out), spec,
        )


def simple_fuse(x_skip: Tensor, x_dec: Tensor, params: McfbParams) -> Tensor:
    """Concatenate along channels, 3x3 conv, ReLU."""
    if x_skip.shape != x_dec.shape:
        raise ShapeError(f"simple_fuse: skip {x_skip.shape} and decoder {x_dec.shape} differ")
    cat = ops.concat([x_skip, x_dec], axis=1)
    return ops.relu(ops.conv2d(cat, params.out_conv, params.out_bias, padding=1))


def mcfb_fuse(x_skip: Tensor, x_dec: Tensor, params: McfbParams, training: bool = False,
              probe: list | None = None) -> Tensor:
    """Multi-context fusion of a skip map and a same-shaped decoder map.

    Self blocks give F_S, F_D; cross blocks give F_SD (skip queries, decoder
    keys/values) and F_DS (the reverse); their concatenation is projected,
    passed through a channel-attention block, then conv + BN + ReLU.
    """
    if params.mode == "simple":
        return simple_fuse(x_skip, x_dec, params)
    if x_skip.shape != x_dec.shape:
        raise ShapeError(f"mcfb_fuse: skip {x_skip.shape} and decoder {x_dec.shape} differ")
    fs, fd = x_skip, x_dec
    if params.self_skip is not None:
        fs = transformer_block(x_skip, params.self_skip, probe=probe)
        fd = transformer_block(x_dec, params.self_dec, probe=probe)
    fsd, fds = fs, fd
    if params.cross_skip is not None:
        fsd = transformer_block(fs, params.cross_skip, y=fd, probe=probe)
        fds = transformer_block(fd, params.cross_dec, y=fs, probe=probe)
    fc = ops.pointwise_conv(ops.concat([fsd, fds], axis=1), params.concat_proj)
    fo = transformer_block(fc, params.channel_block, probe=probe)
    y = ops.conv2d(fo, params.out_conv, padding=1)
    return ops.relu(batch_norm(y, params.out_bn, training))


def decoder_level(x_skip: Tensor, x_lower: Tensor, params: McfbParams, training: bool = False) -> Tensor:
    x_dec = decoder_upsample_path(x_lower, params.upsample, x_skip.shape[2:])
    return mcfb_fuse(x_skip, x_dec, params, training)

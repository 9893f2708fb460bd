"""Finite-difference gradient checks over every network building block."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import ops
from .attention import (AttentionParams, CsaParams, GdfnParams, TransformerBlockParams, WindowSpec,
                        csa_forward, drca_forward, drsa_forward, gdfn_forward, transformer_block)
from .fusion import McfbParams, mcfb_fuse
from .layers import BatchNormParams, batch_norm
from .gradcheck import finite_diff_gradcheck
from .model import ModelConfig, VertenetParams, vertenet_forward
from .tensor import Tensor, named_tensors, parameters

BLOCKS = ("drsa", "drca", "csa", "gdfn", "transformer_block", "mcfb_fuse", "batch_norm", "model")
# Per-tensor coordinate budget; the whole-model case is the expensive one.
COORD_BUDGET = {"mcfb_fuse": 4, "model": 2}


@dataclass
class BlockCheck:
    block: str
    seed: int
    max_rel_error: float
    n_checked: int
    seconds: float


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, weights))


def _case(block: str, rng: np.random.Generator):
    """Return (f, point) where f(*point) is a scalar built from ``block``."""
    C, H, W = 4, 9, 11
    spec = WindowSpec(p=4, r=2, heads_high=1, heads_low=1)
    x = Tensor(rng.normal(size=(2, C, H, W)))
    y = Tensor(rng.normal(size=(2, C, H, W)))
    if block == "drsa":
        p = AttentionParams.create(rng, C, spec)
        fwd = lambda: drsa_forward(x, p, spec)  # noqa: E731
        point = [x] + parameters(p)
    elif block == "drca":
        p = AttentionParams.create(rng, C, spec)
        fwd = lambda: drca_forward(x, y, p, spec)  # noqa: E731
        point = [x, y] + parameters(p)
    elif block == "csa":
        p = CsaParams.create(rng, C)
        fwd = lambda: csa_forward(x, p)  # noqa: E731
        point = [x] + parameters(p)
    elif block == "gdfn":
        p = GdfnParams.create(rng, C)
        fwd = lambda: gdfn_forward(x, p)  # noqa: E731
        point = [x] + parameters(p)
    elif block == "transformer_block":
        p = TransformerBlockParams.create(rng, C, "cross", spec)
        fwd = lambda: transformer_block(x, p, y)  # noqa: E731
        point = [x, y] + parameters(p)
    elif block == "mcfb_fuse":
        p = McfbParams.create(rng, C, C, C, spec, "full")
        fwd = lambda: mcfb_fuse(x, y, p, training=True)  # noqa: E731
        point = [x, y] + parameters(p)
    elif block == "batch_norm":
        bn = BatchNormParams.create(C)
        bn.gamma.data = rng.uniform(0.5, 1.5, size=C)
        bn.beta.data = rng.normal(size=C)
        fwd = lambda: batch_norm(x, bn, training=True)  # noqa: E731
        point = [x, bn.gamma, bn.beta]
    elif block == "model":
        # Inference-mode normalization: with 1x1 maps at stride 32 the batch
        # statistics make the loss so curved that central differences at
        # eps 1e-5 are no longer accurate. Training-mode batch norm is
        # covered by the batch_norm and mcfb_fuse cases.
        # Fresh parameters leave many ReLU inputs at or near 0: dead pixels
        # sit on kinks, and channel vectors that are almost constant make
        # layer norm sharply curved. Positive shifts and biases move the
        # probe point into the smooth interior, as for a trained model.
        cfg = ModelConfig(encoder_widths=(4, 4, 4, 4), head_width=4, input_size=(32, 32))
        p = VertenetParams.create(cfg, seed=int(rng.integers(2**31)))
        for name, t in named_tensors(p):
            if name.endswith("running_mean"):
                t.data = rng.normal(0.0, 0.3, size=t.shape)
            elif name.endswith("running_var"):
                t.data = rng.uniform(0.5, 2.0, size=t.shape)
            elif name.endswith(("bn.beta", "bias")):
                t.data = rng.uniform(0.5, 1.5, size=t.shape)
        img = Tensor(rng.uniform(size=(2, 1, 32, 32)))

        def fwd():
            out = vertenet_forward(img, p, training=False)
            return ops.concat([out.heatmap, out.center_offset, out.corner_offset], axis=1)

        point = [img] + parameters(p)
    else:
        raise ValueError(f"unknown block {block!r}; choose from {BLOCKS}")
    weights = rng.normal(size=fwd().shape)
    return (lambda *_: _weighted_sum(fwd(), weights)), point


def check_block(block: str, seed: int = 0, eps: float = 1e-5, max_coords: int | None = 12) -> BlockCheck:
    """Gradcheck one block; ``max_coords`` caps the sampled coordinates per tensor.

    The cap is lowered further for blocks listed in COORD_BUDGET.
    """
    if max_coords is not None:
        max_coords = min(max_coords, COORD_BUDGET.get(block, max_coords))
    rng = np.random.default_rng([seed, BLOCKS.index(block) if block in BLOCKS else 99])
    f, point = _case(block, rng)
    t0 = time.perf_counter()
    res = finite_diff_gradcheck(f, point, eps=eps, max_coords=max_coords, seed=seed)
    return BlockCheck(block, seed, res.max_rel_error, res.n_checked, time.perf_counter() - t0)


def run_suite(seeds=(0, 1, 2), blocks=BLOCKS, eps: float = 1e-5, max_coords: int | None = 12) -> list[BlockCheck]:
    return [check_block(b, s, eps, max_coords) for s in seeds for b in blocks]

"""Training losses for the heatmap and offset heads."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor, as_tensor

FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
PROB_EPS = 1e-7


def focal_heatmap_loss(pred: Tensor, target, alpha: float = FOCAL_ALPHA, beta: float = FOCAL_BETA) -> Tensor:
    """Penalty-reduced focal loss against a Gaussian-peak target, divided by the peak count.

    Peaks are the cells where the target equals 1. Predictions must lie in
    [0, 1]; they are clamped to [1e-7, 1 - 1e-7] before taking logs.
    """
    pred = as_tensor(pred)
    y = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != y.shape:
        raise ShapeError(f"focal_heatmap_loss: pred {pred.shape} vs target {y.shape}")
    if np.any(pred.data < 0) or np.any(pred.data > 1):
        raise ValueError("focal_heatmap_loss: predictions outside [0, 1]")
    p = ops.clamp(pred, PROB_EPS, 1 - PROB_EPS)
    pos = (y == 1.0).astype(np.float64)
    neg_w = (1.0 - pos) * (1.0 - y) ** beta
    one_minus = ops.sub(1.0, p)
    pos_term = ops.mul(ops.power(one_minus, alpha), ops.log(p))
    neg_term = ops.mul(ops.power(p, alpha), ops.log(one_minus))
    total = ops.add(ops.sum(ops.mul(pos_term, pos)), ops.sum(ops.mul(neg_term, neg_w)))
    return ops.mul(total, -1.0 / max(pos.sum(), 1.0))


def offset_l1_loss(pred: Tensor, target, mask) -> Tensor:
    """Mean absolute error over the masked cells and all channels; 0 for an empty mask.

    ``pred``/``target`` are (B, C, h, w); ``mask`` is (B, h, w) or (h, w).
    """
    pred = as_tensor(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != t.shape:
        raise ShapeError(f"offset_l1_loss: pred {pred.shape} vs target {t.shape}")
    m = np.asarray(mask, dtype=bool)
    if m.ndim == 2:
        m = np.broadcast_to(m, (pred.shape[0],) + m.shape)
    m4 = np.broadcast_to(m[:, None], pred.shape).astype(np.float64)
    n = m4.sum()
    if n == 0:
        return Tensor(np.zeros(()))
    diff = ops.absolute(ops.sub(pred, t))
    return ops.mul(ops.sum(ops.mul(diff, m4)), 1.0 / n)

"""Desk-scale training loop: SGD with momentum on focal + L1 head losses."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .landmarks import LandmarkSet, TargetMaps, decode_landmarks, render_targets
from .losses import focal_heatmap_loss, offset_l1_loss
from .model import HeadOutputs, VertenetParams, vertenet_forward
from .tensor import GradTape, Tensor, named_tensors

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"loss became {value} at step {step}")
        self.step = step


@dataclass
class TrainResult:
    params: VertenetParams
    losses: list[float] = field(default_factory=list)
    components: list[tuple[float, float, float]] = field(default_factory=list)


def stack_targets(targets: list[TargetMaps]) -> dict[str, np.ndarray]:
    return {
        "heatmap": np.stack([t.heatmap for t in targets]),
        "center_offset": np.stack([t.center_offset for t in targets]),
        "corner_offset": np.stack([t.corner_offset for t in targets]),
        "mask": np.stack([t.mask for t in targets]),
    }


def total_loss(out: HeadOutputs, tgt: dict, corner_weight: float = 1.0):
    heat = focal_heatmap_loss(out.heatmap, tgt["heatmap"])
    cen = offset_l1_loss(out.center_offset, tgt["center_offset"], tgt["mask"])
    cor = offset_l1_loss(out.corner_offset, tgt["corner_offset"], tgt["mask"])
    total = ops.add(ops.add(heat, cen), ops.mul(cor, corner_weight))
    return total, (heat.item(), cen.item(), cor.item())


def toy_train(params: VertenetParams, images: np.ndarray, landmarks: list[LandmarkSet], steps: int = 500,
              lr: float = 0.01, momentum: float = 0.9, batch_size: int = 4, seed: int = 0,
              freeze: tuple[str, ...] = (), clip: float | None = 10.0) -> TrainResult:
    """Minimize focal + L1 losses with SGD (momentum) on a small image set.

    Batches are drawn without replacement from a seeded permutation,
    reshuffled every pass. Parameters whose dotted name starts with any
    prefix in ``freeze`` are never updated. ``clip`` caps the global
    gradient norm. Raises :class:`DivergenceError` on a non-finite loss.
    """
    stride = params.config.head_stride
    x_all = np.asarray(images, dtype=np.float64)[:, None]
    tgt_all = stack_targets([render_targets(lm, stride) for lm in landmarks])
    named = [(n, t) for n, t in named_tensors(params) if t.requires_grad]
    trainable = [t for n, t in named if not (freeze and n.startswith(tuple(freeze)))]
    velocity = {id(t): np.zeros_like(t.data) for t in trainable}
    rng = np.random.default_rng(seed)
    n = len(x_all)
    batch_size = min(batch_size, n)
    order: list[int] = []
    result = TrainResult(params)
    for step in range(steps):
        if len(order) < batch_size:
            order = list(rng.permutation(n))
        idx = sorted(order[:batch_size])
        del order[:batch_size]
        batch = {k: v[idx] for k, v in tgt_all.items()}
        with GradTape() as tape:
            out = vertenet_forward(Tensor(x_all[idx]), params, training=True)
            loss, parts = total_loss(out, batch)
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(step, value)
        grads = tape.gradient(loss, trainable)
        if clip is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > clip:
                grads = [g * (clip / norm) for g in grads]
        for t, g in zip(trainable, grads):
            v = velocity[id(t)]
            v *= momentum
            v += g
            t.data = t.data - lr * v
        result.losses.append(value)
        result.components.append(parts)
        if step % 50 == 0:
            log.info("step %d loss %.4f (heat %.4f, center %.4f, corner %.4f)", step, value, *parts)
    return result


def evaluate(params: VertenetParams, images: np.ndarray, landmarks: list[LandmarkSet]) -> list[LandmarkSet]:
    """Inference-mode predictions for each image."""
    cfg = params.config
    out = vertenet_forward(Tensor(np.asarray(images, dtype=np.float64)[:, None]), params)
    preds = []
    for i, lm in enumerate(landmarks):
        preds.append(decode_landmarks(out.heatmap.data[i, 0], out.center_offset.data[i],
                                      out.corner_offset.data[i], cfg.head_stride, cfg.num_vertebrae,
                                      image_size=lm.image_size, orientation=lm.orientation))
    return preds


def window_means_decreasing(losses, window: int = 100) -> bool:
    """True when the mean loss of each consecutive ``window``-step block is below the previous one."""
    losses = np.asarray(losses)
    m = len(losses) // window
    means = losses[: m * window].reshape(m, window).mean(axis=1)
    return bool(np.all(np.diff(means) < 0))

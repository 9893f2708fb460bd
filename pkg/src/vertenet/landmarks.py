"""Vertebral landmark sets, target rendering, peak decoding and error metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VERTEBRA_LABELS = ("T12", "L1", "L2", "L3", "L4", "L5")
CORNER_LABELS = ("anterior_superior", "posterior_superior", "anterior_inferior", "posterior_inferior")
ORIENTATIONS = ("anterior-right", "anterior-left")
CANONICAL_SIZE = (1024, 512)  # (H, W)


class LandmarkError(ValueError):
    pass


@dataclass
class Vertebra:
    label: str
    center: np.ndarray  # (x, y) px
    corners: np.ndarray  # (4, 2) in CORNER_LABELS order
    confidence: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(2)
        self.corners = np.asarray(self.corners, dtype=np.float64).reshape(4, 2)

    def corner(self, name: str) -> np.ndarray:
        return self.corners[CORNER_LABELS.index(name)]


@dataclass
class LandmarkSet:
    vertebrae: list[Vertebra]
    image_size: tuple[int, int]  # (H, W)
    orientation: str = "anterior-right"
    complete: bool = True
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.vertebrae)

    @property
    def centers(self) -> np.ndarray:
        return np.array([v.center for v in self.vertebrae]).reshape(-1, 2)

    @property
    def corners(self) -> np.ndarray:
        return np.array([v.corners for v in self.vertebrae]).reshape(-1, 4, 2)

    def validate(self) -> None:
        if self.orientation not in ORIENTATIONS:
            raise LandmarkError(f"unknown orientation {self.orientation!r}")
        H, W = self.image_size
        ys = self.centers[:, 1]
        if len(ys) > 1 and np.any(np.diff(ys) <= 0):
            raise LandmarkError("vertebra centers must be strictly increasing in y")
        for i, v in enumerate(self.vertebrae):
            if v.label not in VERTEBRA_LABELS:
                raise LandmarkError(f"vertebra {i}: unknown label {v.label!r}")
            pts = np.vstack([v.corners, v.center])
            if np.any(pts < 0) or np.any(pts[:, 0] > W) or np.any(pts[:, 1] > H):
                raise LandmarkError(f"vertebra {i} ({v.label}) lies outside the {H}x{W} image")
            if not is_simple_quad(quad_ring(v.corners)):
                raise LandmarkError(f"vertebra {i} ({v.label}) corners form a self-intersecting quadrilateral")


def quad_ring(corners: np.ndarray) -> np.ndarray:
    """Corners (AS, PS, AI, PI) reordered to walk the outline: AS, PS, PI, AI."""
    c = np.asarray(corners)
    return c[[0, 1, 3, 2]]


def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    return orient(p1, p2, p3) * orient(p1, p2, p4) < 0 and orient(p3, p4, p1) * orient(p3, p4, p2) < 0


def is_simple_quad(ring: np.ndarray) -> bool:
    """True when the closed polygon ``ring`` (4 points in order) does not self-intersect."""
    a, b, c, d = np.asarray(ring, dtype=np.float64)
    return not (_segments_cross(a, b, c, d) or _segments_cross(b, c, d, a))


# ---------------------------------------------------------------- targets

@dataclass
class TargetMaps:
    heatmap: np.ndarray  # (1, h, w)
    center_offset: np.ndarray  # (2, h, w)
    corner_offset: np.ndarray  # (8, h, w)
    mask: np.ndarray  # (h, w) bool, peak cells
    stride: int


def gaussian_sigma(corners: np.ndarray, stride: int) -> float:
    """One sixth of the mean side length in head cells, at least one cell."""
    ring = quad_ring(corners)
    sides = np.linalg.norm(np.roll(ring, -1, axis=0) - ring, axis=1)
    return max(sides.mean() / stride / 6.0, 1.0)


def render_targets(landmarks: LandmarkSet, stride: int = 4) -> TargetMaps:
    """Encode a landmark set as head-resolution training targets.

    Each center maps to its nearest cell ``round(c / stride)``; the heatmap
    holds a Gaussian with peak exactly 1 there, the center offset holds the
    sub-cell residual and the corner offsets hold (corner - center) / stride.
    """
    H, W = landmarks.image_size
    h, w = -(-H // stride), -(-W // stride)
    heat = np.zeros((h, w))
    cen = np.zeros((2, h, w))
    cor = np.zeros((8, h, w))
    mask = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    for i, v in enumerate(landmarks.vertebrae):
        c = v.center / stride
        cx, cy = int(np.round(c[0])), int(np.round(c[1]))
        if not (0 <= cx < w and 0 <= cy < h):
            raise LandmarkError(f"vertebra {i} center {v.center} falls outside the {H}x{W} image")
        sigma = gaussian_sigma(v.corners, stride)
        g = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma ** 2))
        heat = np.maximum(heat, g)
        cen[:, cy, cx] = c - (cx, cy)
        cor[:, cy, cx] = ((v.corners - v.center) / stride).reshape(8)
        mask[cy, cx] = True
    return TargetMaps(heat[None], cen, cor, mask, stride)


def _local_maxima(heat: np.ndarray) -> np.ndarray:
    padded = np.pad(heat, 1, constant_values=-np.inf)
    h, w = heat.shape
    neigh = np.max([padded[i:i + h, j:j + w] for i in range(3) for j in range(3)], axis=0)
    return heat >= neigh


def decode_landmarks(heatmap: np.ndarray, center_offset: np.ndarray, corner_offset: np.ndarray,
                     stride: int = 4, k: int = 6, threshold: float = 0.1,
                     image_size: tuple[int, int] | None = None,
                     orientation: str = "anterior-right") -> LandmarkSet:
    """Turn one image's head maps into a landmark set.

    3x3 local-maximum suppression, top-``k`` peaks above ``threshold``,
    sub-cell refinement by the center offset, corners from the corner
    offsets, vertebrae sorted top-down and labelled from T12. Fewer than
    ``k`` peaks yields a partial set with ``complete=False``.
    """
    heat = np.asarray(heatmap).reshape(heatmap.shape[-2:])
    center_offset = np.asarray(center_offset).reshape(2, *heat.shape)
    corner_offset = np.asarray(corner_offset).reshape(8, *heat.shape)
    peaks = _local_maxima(heat) & (heat >= threshold)
    ys, xs = np.nonzero(peaks)
    order = np.lexsort((xs, ys, -heat[ys, xs]))[:k]
    found = []
    for idx in order:
        cy, cx = ys[idx], xs[idx]
        center = (np.array([cx, cy], dtype=np.float64) + center_offset[:, cy, cx]) * stride
        corners = center + corner_offset[:, cy, cx].reshape(4, 2) * stride
        found.append((center, corners, float(heat[cy, cx])))
    found.sort(key=lambda t: t[0][1])
    verts = [Vertebra(VERTEBRA_LABELS[i] if i < len(VERTEBRA_LABELS) else f"V{i}", c, q, s)
             for i, (c, q, s) in enumerate(found)]
    if image_size is None:
        image_size = (heat.shape[0] * stride, heat.shape[1] * stride)
    return LandmarkSet(verts, tuple(image_size), orientation, complete=len(verts) == k)


def decode_targets(t: TargetMaps, k: int, image_size, orientation="anterior-right") -> LandmarkSet:
    return decode_landmarks(t.heatmap, t.center_offset, t.corner_offset, t.stride, k,
                            image_size=image_size, orientation=orientation)


# ---------------------------------------------------------------- metrics

def to_canonical(points: np.ndarray, image_size: tuple[int, int]) -> np.ndarray:
    H, W = image_size
    ch, cw = CANONICAL_SIZE
    return np.asarray(points) * np.array([cw / W, ch / H])


def corner_distances(pred: list[LandmarkSet], gt: list[LandmarkSet], canonical: bool = True) -> np.ndarray:
    if len(pred) != len(gt):
        raise LandmarkError(f"{len(pred)} predicted sets vs {len(gt)} ground-truth sets")
    out = []
    for i, (p, g) in enumerate(zip(pred, gt)):
        if len(p) != len(g):
            raise LandmarkError(f"image {i}: {len(p)} predicted vertebrae vs {len(g)} ground truth")
        pc, gc = p.corners.reshape(-1, 2), g.corners.reshape(-1, 2)
        if canonical:
            pc, gc = to_canonical(pc, g.image_size), to_canonical(gc, g.image_size)
        out.append(np.linalg.norm(pc - gc, axis=1))
    return np.concatenate(out) if out else np.zeros(0)


def normalized_errors(pred: list[LandmarkSet], gt: list[LandmarkSet]) -> tuple[float, float]:
    """Mean and median corner error in canonical 1024x512 pixels, pooled over all corners."""
    d = corner_distances(pred, gt)
    return float(d.mean()), float(np.median(d))

"""Burn guides, the anterior chain, spline samples and violations into an RGB raster."""

from __future__ import annotations

import numpy as np
from skimage.draw import line

INTER_COLOR = (255, 0, 0)
INTRA_COLOR = (255, 255, 0)
SPLINE_COLOR = (0, 0, 255)
VIOLATION_COLOR = (255, 0, 255)
CHAIN_COLOR = (0, 255, 0)


def _to_rgb(image: np.ndarray) -> np.ndarray:
    gray = np.rint(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    return np.repeat(gray[..., None], 3, axis=2)


def _segment(canvas, p, q, color):
    H, W = canvas.shape[:2]
    rr, cc = line(int(round(p[1])), int(round(p[0])), int(round(q[1])), int(round(q[0])))
    keep = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
    canvas[rr[keep], cc[keep]] = color


def violation_pixels(report, shape) -> set[tuple[int, int]]:
    """(row, col) pixels used for violation markers; out-of-frame samples are pinned to the border."""
    H, W = shape
    out = set()
    for v in report.violations:
        x, y = v.point
        out.add((int(np.clip(round(y), 0, H - 1)), int(np.clip(round(x), 0, W - 1))))
    return out


def render_overlay(image: np.ndarray, guides=None, report=None) -> np.ndarray:
    """Return the annotated image.

    With neither guides nor a report the grayscale image comes back
    unchanged. Otherwise an (H, W, 3) uint8 raster: inter-guides red,
    intra-guides yellow, spline samples blue, violating samples magenta
    (one pixel each) and the anterior chain as green 3x3 squares.
    """
    img = np.asarray(image, dtype=np.float64)
    if guides is None and report is None:
        return img.copy()
    H, W = img.shape
    canvas = _to_rgb(img)
    if guides is not None:
        for seg in guides.inter_guides:
            _segment(canvas, seg[0], seg[1], INTER_COLOR)
        for seg in guides.intra_guides:
            _segment(canvas, seg[0], seg[1], INTRA_COLOR)
    if report is not None:
        for x, y in report.samples:
            r, c = int(round(y)), int(round(x))
            if 0 <= r < H and 0 <= c < W:
                canvas[r, c] = SPLINE_COLOR
        for r, c in violation_pixels(report, (H, W)):
            canvas[r, c] = VIOLATION_COLOR
    if guides is not None:
        for x, y in guides.anterior_chain:
            r, c = int(round(y)), int(round(x))
            canvas[max(r - 1, 0):min(r + 2, H), max(c - 1, 0):min(c + 2, W)] = CHAIN_COLOR
    return canvas

"""Synthetic lateral-spine images with exact corner ground truth."""

from __future__ import annotations

import numpy as np
from skimage.draw import polygon

from .landmarks import VERTEBRA_LABELS, LandmarkSet, Vertebra


def _value_noise(rng: np.random.Generator, shape: tuple[int, int], cells: int) -> np.ndarray:
    """Smooth noise: a coarse random lattice, bicubically interpolated (scipy zoom)."""
    from scipy.ndimage import zoom

    H, W = shape
    gh, gw = max(2, H // cells + 2), max(2, W // cells + 2)
    grid = rng.uniform(-1.0, 1.0, size=(gh, gw))
    up = zoom(grid, (H / (gh - 1) + 1e-9, W / (gw - 1) + 1e-9), order=3, mode="nearest")
    return up[:H, :W]


def _vertebra_quad(rng, cx, cy, width, height, angle, wedge):
    """Corners (AS, PS, AI, PI) of a tilted, slightly wedged box, anterior to the right."""
    hw = width / 2.0
    ant_h = height / 2.0 * (1.0 + wedge)
    post_h = height / 2.0 * (1.0 - wedge)
    local = np.array([[hw, -ant_h], [-hw, -post_h], [hw, ant_h], [-hw, post_h]])
    local = local + rng.uniform(-0.6, 0.6, size=local.shape)
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def synth_sample(rng: np.random.Generator, size: tuple[int, int], k: int = 6,
                 black_band: bool | None = None) -> tuple[np.ndarray, LandmarkSet]:
    H, W = size
    img = 0.22 + 0.06 * _value_noise(rng, size, 32) + 0.03 * _value_noise(rng, size, 8)
    # soft-tissue gradient toward the anterior side
    img += np.linspace(0.05, -0.03, W)[None, :]

    top = rng.uniform(0.10, 0.16) * H
    bottom = rng.uniform(0.86, 0.92) * H
    pitch = (bottom - top) / k
    height = pitch * rng.uniform(0.68, 0.78)
    width = W * rng.uniform(0.26, 0.32)
    x0 = W * rng.uniform(0.36, 0.46)
    bend = W * rng.uniform(-0.08, 0.08)
    lean = W * rng.uniform(-0.05, 0.05)

    verts = []
    for i in range(k):
        t = (i + 0.5) / k
        cy = top + (i + 0.5) * pitch + rng.uniform(-0.04, 0.04) * pitch
        cx = x0 + bend * (4 * (t - 0.5) ** 2 - 1 / 3) + lean * (t - 0.5)
        slope = (8 * bend * (t - 0.5) + lean) / (bottom - top)
        angle = -np.arctan(slope) * 0.6 + rng.normal(0.0, 0.04)
        corners = _vertebra_quad(rng, cx, cy, width * rng.uniform(0.95, 1.05), height,
                                 angle, rng.uniform(-0.08, 0.08))
        rr, cc = polygon(corners[[0, 1, 3, 2], 1], corners[[0, 1, 3, 2], 0], shape=size)
        img[rr, cc] = rng.uniform(0.68, 0.82) + 0.04 * _value_noise(rng, size, 6)[rr, cc]
        verts.append(Vertebra(VERTEBRA_LABELS[i] if i < len(VERTEBRA_LABELS) else f"V{i}",
                              corners.mean(axis=0), corners))

    img += rng.normal(0.0, 0.015, size=size)
    img = np.clip(img, 1.0 / 255.0, 1.0)
    if black_band is None:
        black_band = False
    if black_band:
        band = int(W * rng.uniform(0.10, 0.22))
        r0 = int(H * rng.uniform(0.0, 0.5))
        img[r0:, W - band:] = 0.0
    lm = LandmarkSet(verts, (H, W), "anterior-right")
    lm.validate()
    return img, lm


def synth_generate(seed: int, count: int, size: tuple[int, int] = (256, 128), k: int = 6,
                   black_band_fraction: float = 0.0) -> tuple[np.ndarray, list[LandmarkSet]]:
    """``count`` images of shape ``size`` (values in [0, 1]) and their landmark sets.

    Each image is drawn from its own child generator of ``seed``, so any
    prefix of a dataset is identical to the smaller dataset with the same seed.
    """
    H, W = size
    if H < 32 or W < 32 or H % 32 or W % 32:
        raise ValueError(f"synth_generate: size {size} must be >= 32 and divisible by 32")
    if count < 1:
        raise ValueError("synth_generate: count must be >= 1")
    images, sets = [], []
    for child in np.random.SeedSequence(seed).spawn(count):
        rng = np.random.default_rng(child)
        band = rng.random() < black_band_fraction
        img, lm = synth_sample(rng, size, k, band)
        images.append(img)
        sets.append(lm)
    return np.stack(images), sets

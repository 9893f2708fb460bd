"""Abdominal-aorta crop detection from vertebral landmarks and black image regions.

The anterior landmark chain is pushed a distance ``d`` into the soft
tissue along each guide, a natural cubic spline is fitted through the
pushed points and sampled densely, and every sample that leaves the image
on the anterior side or falls into a black (zero-valued) region counts as
a violation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .guides import GuideSet, generate_ivgs, mean_vertebral_width
from .landmarks import LandmarkError, LandmarkSet
from .spline import fit_natural_cubic_spline, sample_spline

log = logging.getLogger(__name__)

DEFAULT_FACTORS = (0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5)
FOUR_CONNECTIVITY = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class CropConfig:
    factor: float = 1.2
    sample_count: int = 500
    black_threshold: float = 0.0
    min_component_area: int | None = None  # None: 0.5% of the image area
    kernel: int = 5

    def __post_init__(self):
        if not (np.isfinite(self.factor) and self.factor > 0):
            raise ValueError(f"factor must be > 0, got {self.factor}")
        if int(self.sample_count) != self.sample_count or self.sample_count < 2:
            raise ValueError(f"sample_count must be an integer >= 2, got {self.sample_count}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be a positive odd size, got {self.kernel}")

    def min_area(self, shape) -> int:
        if self.min_component_area is not None:
            return int(self.min_component_area)
        return int(np.ceil(0.005 * shape[0] * shape[1]))


@dataclass
class BlackRegionMask:
    mask: np.ndarray  # bool (H, W)
    boxes: list[tuple[int, int, int, int]] = field(default_factory=list)  # (row0, col0, row1, col1) inclusive

    @property
    def empty(self) -> bool:
        return not self.mask.any()


@dataclass
class Violation:
    point: tuple[float, float]
    reason: str  # "beyond-width" or "in-black-region"
    level: str


@dataclass
class CropReport:
    cropped: bool
    percent: float
    violations: list[Violation]
    d: float
    samples: np.ndarray  # (count, 2) spline samples (x, y)
    anterior_points: np.ndarray  # pushed chain points (x, y)


def _components(mask: np.ndarray) -> list[tuple[int, int, int, int]]:
    labels, _ = ndimage.label(mask, structure=FOUR_CONNECTIVITY)
    boxes = []
    for sl in ndimage.find_objects(labels):
        boxes.append((sl[0].start, sl[1].start, sl[0].stop - 1, sl[1].stop - 1))
    return boxes


def detect_black_regions(image, cfg: CropConfig = CropConfig()) -> BlackRegionMask:
    """4-connected components of pixels at or below the black threshold, small ones dropped."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"detect_black_regions: expected a 2-D grayscale image, got shape {img.shape}")
    dark = img <= cfg.black_threshold
    labels, n = ndimage.label(dark, structure=FOUR_CONNECTIVITY)
    if n == 0:
        return BlackRegionMask(np.zeros(img.shape, dtype=bool))
    areas = np.bincount(labels.ravel())
    keep = areas >= cfg.min_area(img.shape)
    keep[0] = False
    mask = keep[labels]
    return BlackRegionMask(mask, _components(mask))


def smooth_mask(mask, kernel: int = 5):
    """Morphological closing with a square ``kernel``.

    Outside the image counts as background for the dilation and as
    foreground for the erosion, which keeps regions that touch the border
    attached to it and makes the operation idempotent.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"smooth_mask: kernel size must be odd and positive, got {kernel}")
    wrap = isinstance(mask, BlackRegionMask)
    m = np.asarray(mask.mask if wrap else mask, dtype=bool)
    se = np.ones((kernel, kernel), dtype=bool)
    closed = ndimage.binary_erosion(ndimage.binary_dilation(m, se, border_value=0), se, border_value=1)
    return BlackRegionMask(closed, _components(closed)) if wrap else closed


def crop_distance(factor: float, mean_width: float) -> float:
    return factor * (1.0 + mean_width)


def anterior_points_at_d(guides: GuideSet, d: float, allow_zero: bool = False) -> np.ndarray:
    """Step each anterior-chain point ``d`` px further along its guide, posterior to anterior."""
    if not np.isfinite(d) or d < 0 or (d == 0 and not allow_zero):
        raise ValueError(f"anterior_points_at_d: d must be > 0, got {d}")
    ant = guides.chain_guides[:, 0]
    vec = ant - guides.chain_guides[:, 1]
    length = np.linalg.norm(vec, axis=1)
    bad = np.flatnonzero(length == 0)
    if bad.size:
        raise LandmarkError(f"guide {bad[0]} ({guides.chain_labels[bad[0]]}) has zero length")
    pts = ant + d * vec / length[:, None]
    return pts[np.argsort(pts[:, 1], kind="stable")]


def _as_mask(mask, dims) -> np.ndarray | None:
    if mask is None:
        return None
    m = np.asarray(mask.mask if isinstance(mask, BlackRegionMask) else mask, dtype=bool)
    if m.shape != tuple(dims):
        raise ValueError(f"mask shape {m.shape} does not match image dims {tuple(dims)}")
    return m


def detect_crop(image_dims, mask, landmarks: LandmarkSet, cfg: CropConfig = CropConfig(),
                orientation: str | None = None) -> CropReport:
    """Decide whether the soft-tissue band anterior to the spine is cut off.

    ``mask`` is the (already smoothed) black-region mask or None. Samples
    are tested against the pixel-center range [0, W-1] on the anterior side
    and, when inside the frame, against the mask pixel they round to.
    """
    H, W = image_dims
    orientation = orientation or landmarks.orientation
    m = _as_mask(mask, (H, W))
    guides = generate_ivgs(landmarks, orientation)
    d = crop_distance(cfg.factor, mean_vertebral_width(landmarks, orientation))
    pts = anterior_points_at_d(guides, d)
    if np.any(np.diff(pts[:, 1]) <= 0):
        raise LandmarkError("pushed anterior points are not strictly increasing in y")
    samples = sample_spline(fit_natural_cubic_spline(pts), cfg.sample_count)
    xs, ys = samples[:, 0], samples[:, 1]
    beyond = xs > W - 1 if orientation == "anterior-right" else xs < 0
    inside = (xs >= 0) & (xs <= W - 1) & (ys >= 0) & (ys <= H - 1)
    black = np.zeros(len(samples), dtype=bool)
    if m is not None:
        r = np.rint(ys[inside]).astype(int)
        c = np.rint(xs[inside]).astype(int)
        black[inside] = m[r, c]
    centers_y = landmarks.centers[:, 1]
    labels = [v.label for v in landmarks.vertebrae]
    violations = []
    for j in np.flatnonzero(beyond | black):
        level = labels[int(np.argmin(np.abs(centers_y - ys[j])))]
        violations.append(Violation((float(xs[j]), float(ys[j])),
                                    "beyond-width" if beyond[j] else "in-black-region", level))
    percent = 100.0 * len(violations) / len(samples)
    return CropReport(bool(violations), percent, violations, d, samples, pts)


def analyze_image(image, landmarks: LandmarkSet, cfg: CropConfig = CropConfig(),
                  orientation: str | None = None) -> tuple[CropReport, BlackRegionMask]:
    """Full per-image pipeline: black regions, closing, then the crop test.

    An image whose smoothed mask is empty takes the width-only path.
    """
    img = np.asarray(image)
    regions = smooth_mask(detect_black_regions(img, cfg), cfg.kernel)
    report = detect_crop(img.shape, None if regions.empty else regions, landmarks, cfg, orientation)
    return report, regions


# ---------------------------------------------------------------- evaluation

@dataclass
class CropCase:
    case_id: str
    image_dims: tuple[int, int]
    mask: np.ndarray | None
    landmarks: LandmarkSet
    label: bool | None


@dataclass
class SweepRow:
    factor: float
    FP: int
    FN: int
    TP: int
    TN: int

    @property
    def total(self) -> int:
        return self.FP + self.FN + self.TP + self.TN

    @property
    def accuracy(self) -> float:
        return accuracy_percent(self.TP, self.TN, self.FP, self.FN)


def accuracy_percent(tp: int, tn: int, fp: int, fn: int) -> float:
    total = tp + tn + fp + fn
    if total == 0:
        raise ValueError("accuracy of an empty confusion table is undefined")
    return 100.0 * (tp + tn) / total


def factor_sweep(cases: list[CropCase], factors=DEFAULT_FACTORS,
                 cfg: CropConfig = CropConfig()) -> tuple[list[SweepRow], list[str]]:
    """Confusion counts per factor; cases without a label are skipped and returned by id."""
    skipped = [c.case_id for c in cases if c.label is None]
    for cid in skipped:
        log.warning("case %s has no crop label; skipped", cid)
    usable = [c for c in cases if c.label is not None]
    rows = []
    for f in factors:
        run = CropConfig(float(f), cfg.sample_count, cfg.black_threshold, cfg.min_component_area, cfg.kernel)
        fp = fn = tp = tn = 0
        for c in usable:
            pred = detect_crop(c.image_dims, c.mask, c.landmarks, run).cropped
            if pred and c.label:
                tp += 1
            elif pred:
                fp += 1
            elif c.label:
                fn += 1
            else:
                tn += 1
        rows.append(SweepRow(float(f), fp, fn, tp, tn))
    return rows, skipped


def parse_factor_range(text: str) -> list[float]:
    """``"0.8:1.5:0.1"`` (inclusive) or a comma list ``"1.0,1.2"``."""
    try:
        if ":" in text:
            lo, hi, step = (float(t) for t in text.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            n = int(np.floor((hi - lo) / step + 1e-9)) + 1
            vals = [round(lo + i * step, 10) for i in range(n)]
        else:
            vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ValueError(f"bad factor list {text!r}; use lo:hi:step or comma-separated values") from None
    if not vals or any(not (v > 0) for v in vals):
        raise ValueError(f"factors must be positive: {text!r}")
    return vals


@dataclass
class Metrics:
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    f1: float | None


def classification_metrics(tp: int, tn: int, fp: int, fn: int) -> Metrics:
    """Accuracy (percent), sensitivity, specificity and F1; undefined ratios come back as None."""
    if min(tp, tn, fp, fn) < 0:
        raise ValueError("confusion counts must be non-negative")

    def ratio(num, den):
        return num / den if den else None

    total = tp + tn + fp + fn
    acc = 100.0 * (tp + tn) / total if total else None
    return Metrics(acc, ratio(tp, tp + fn), ratio(tn, tn + fp), ratio(2 * tp, 2 * tp + fp + fn))


# Experiment-1 rows as printed: factor, FP, FN, TP, TN, accuracy (%).
PRINTED_SWEEP_TABLE = (
    (0.8, 8, 0, 27, 35, 88.57),
    (0.9, 3, 0, 32, 35, 95.71),
    (1.0, 2, 0, 33, 35, 97.14),
    (1.1, 1, 0, 34, 35, 98.57),
    (1.2, 0, 0, 35, 35, 100.0),
    (1.3, 0, 1, 35, 34, 98.57),
    (1.4, 0, 3, 35, 32, 95.74),
    (1.5, 0, 8, 35, 27, 88.57),
)


def check_printed_table(rows=PRINTED_SWEEP_TABLE) -> list[dict]:
    """Recompute each printed accuracy from its counts; mismatches are flagged, not hidden."""
    out = []
    for factor, fp, fn, tp, tn, printed in rows:
        computed = round(accuracy_percent(tp, tn, fp, fn), 2)
        out.append({"factor": factor, "printed": printed, "computed": computed,
                    "total": fp + fn + tp + tn, "match": abs(computed - printed) < 5e-3})
    return out

"""Inter- and intra-vertebral guide segments and the anterior landmark chain."""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .landmarks import ORIENTATIONS, LandmarkError, LandmarkSet, is_simple_quad, quad_ring


@dataclass
class GuideSet:
    """Guide segments stored as (n, 2, 2) arrays of [anterior_xy, posterior_xy].

    ``chain_guides`` holds the guide behind each ``anterior_chain`` point,
    in the same (top-down) order.
    """

    inter_guides: np.ndarray
    intra_guides: np.ndarray
    anterior_chain: np.ndarray
    chain_guides: np.ndarray
    chain_labels: list[str]
    orientation: str = "anterior-right"

    def to_json(self) -> list[dict]:
        out = []
        for kind, segs in (("inter", self.inter_guides), ("intra", self.intra_guides)):
            for seg in segs:
                out.append({"kind": kind, "anterior": seg[0].tolist(), "posterior": seg[1].tolist()})
        return out


def _check_orientation(orientation: str) -> None:
    if orientation not in ORIENTATIONS:
        raise LandmarkError(f"unknown orientation {orientation!r}; expected one of {ORIENTATIONS}")


def classify_corners(quad, orientation: str = "anterior-right") -> np.ndarray:
    """Label four corner points, returning them in CORNER_LABELS order.

    The superior pair is the two points with the smallest y (ties broken by
    x); inside each pair the anterior point is the one further toward the
    anterior side. Raises LandmarkError when the labelled ring
    AS-PS-PI-AI self-intersects.
    """
    _check_orientation(orientation)
    q = np.asarray(quad, dtype=np.float64)
    if q.shape != (4, 2) or not np.all(np.isfinite(q)):
        raise LandmarkError(f"classify_corners: expected 4 finite (x, y) points, got shape {q.shape}")
    order = np.lexsort((q[:, 0], q[:, 1]))
    sup, inf = q[order[:2]], q[order[2:]]
    sign = 1.0 if orientation == "anterior-right" else -1.0

    def split(pair):
        a, b = pair
        return (a, b) if sign * a[0] > sign * b[0] else (b, a)

    a_s, p_s = split(sup)
    a_i, p_i = split(inf)
    labeled = np.array([a_s, p_s, a_i, p_i])
    if not is_simple_quad(quad_ring(labeled)):
        raise LandmarkError("classify_corners: corners form a self-intersecting quadrilateral")
    return labeled


def _labeled(landmarks: LandmarkSet, orientation: str) -> np.ndarray:
    if len(landmarks) == 0:
        raise LandmarkError("landmark set has no vertebrae")
    return np.array([classify_corners(v.corners, orientation) for v in landmarks.vertebrae])


def mean_vertebral_width(landmarks: LandmarkSet, orientation: str | None = None) -> float:
    """Mean distance between the anterior-edge and posterior-edge midpoints."""
    c = _labeled(landmarks, orientation or landmarks.orientation)
    ant = 0.5 * (c[:, 0] + c[:, 2])
    post = 0.5 * (c[:, 1] + c[:, 3])
    return float(np.linalg.norm(ant - post, axis=1).mean())


def generate_ivgs(landmarks: LandmarkSet, orientation: str | None = None) -> GuideSet:
    orientation = orientation or landmarks.orientation
    c = _labeled(landmarks, orientation)
    labels = [v.label for v in landmarks.vertebrae]
    intra = np.stack([0.5 * (c[:, 0] + c[:, 2]), 0.5 * (c[:, 1] + c[:, 3])], axis=1)
    inter = np.stack([0.5 * (c[:-1, 2] + c[1:, 0]), 0.5 * (c[:-1, 3] + c[1:, 1])], axis=1)
    segs = np.concatenate([intra, inter]) if len(inter) else intra
    seg_labels = labels + [f"{a}/{b}" for a, b in zip(labels[:-1], labels[1:])]
    order = np.argsort(segs[:, 0, 1], kind="stable")
    chain = segs[order, 0]
    if np.any(np.diff(chain[:, 1]) <= 0):
        raise LandmarkError("anterior chain is not strictly increasing in y; vertebrae overlap")
    return GuideSet(inter, intra, chain, segs[order], [seg_labels[i] for i in order], orientation)

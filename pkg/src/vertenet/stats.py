"""Inter-reader agreement on per-region AAC scores."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

REGIONS = ("L1", "L2", "L3", "L4")
SCORE_RANGE = (0, 6)


class ScoreError(ValueError):
    pass


@dataclass
class ScoreSheet:
    """One reader's integer scores keyed by (image_id, region)."""

    reader: str
    scores: dict[tuple[str, str], int] = field(default_factory=dict)

    def add(self, image_id: str, region: str, score: int) -> None:
        if region not in REGIONS:
            raise ScoreError(f"{image_id}: unknown region {region!r}; expected one of {REGIONS}")
        if int(score) != score or not SCORE_RANGE[0] <= score <= SCORE_RANGE[1]:
            raise ScoreError(f"{image_id}/{region}: score {score!r} outside {SCORE_RANGE[0]}..{SCORE_RANGE[1]}")
        self.scores[(image_id, region)] = int(score)

    def region(self, region: str) -> dict[str, int]:
        return {img: s for (img, r), s in self.scores.items() if r == region}


def read_scoresheets(path) -> dict[str, ScoreSheet]:
    """Parse ``image_id,region,reader,score`` rows into one sheet per reader."""
    sheets: dict[str, ScoreSheet] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"image_id", "region", "reader", "score"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ScoreError(f"{path}: header must contain {sorted(need)}")
        for line, row in enumerate(reader, start=2):
            try:
                score = int(row["score"])
            except ValueError:
                raise ScoreError(f"{path}:{line}: score {row['score']!r} is not an integer") from None
            sheet = sheets.setdefault(row["reader"], ScoreSheet(row["reader"]))
            sheet.add(row["image_id"], row["region"], score)
    return sheets


def write_scoresheets(path, sheets) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "region", "reader", "score"])
        for sheet in sheets:
            for (img, region), s in sorted(sheet.scores.items()):
                w.writerow([img, region, sheet.reader, s])


def quadratic_weighted_kappa(a, b, categories: int = SCORE_RANGE[1] + 1) -> float | None:
    """Cohen's kappa with squared-distance weights over a fixed 0..categories-1 scale.

    Returns 1.0 when both readers put every item in one shared category,
    and None when expected disagreement is zero but observed is not.
    """
    a = np.asarray(a, dtype=int)
    b = np.asarray(b, dtype=int)
    obs = np.zeros((categories, categories))
    np.add.at(obs, (a, b), 1.0)
    obs /= obs.sum()
    exp = np.outer(obs.sum(axis=1), obs.sum(axis=0))
    idx = np.arange(categories)
    w = (idx[:, None] - idx[None, :]) ** 2
    num, den = float((w * obs).sum()), float((w * exp).sum())
    if den == 0:
        return 1.0 if num == 0 else None
    return 1.0 - num / den


def pearson_with_ci(a, b, level: float = 0.95):
    """Pearson r and its Fisher-z interval; (None, None, reason) for a constant reader."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.std() == 0 or b.std() == 0:
        return None, None, "zero variance for at least one reader"
    ac, bc = a - a.mean(), b - b.mean()
    # sqrt(s*s) == s in IEEE arithmetic, so identical readers give exactly 1
    r = float(np.clip(ac @ bc / np.sqrt((ac @ ac) * (bc @ bc)), -1.0, 1.0))
    n = len(a)
    if n <= 3:
        return r, None, "interval needs more than 3 images"
    if abs(r) == 1.0:
        return r, (r, r), None
    z = np.arctanh(r)
    half = norm.ppf(0.5 + level / 2) / np.sqrt(n - 3)
    return r, (float(np.tanh(z - half)), float(np.tanh(z + half))), None


def bootstrap_kappa_ci(a, b, resamples: int = 2000, seed: int = 0, level: float = 0.95):
    """Percentile interval over image resamples; resamples with undefined kappa are dropped."""
    a = np.asarray(a, dtype=int)
    b = np.asarray(b, dtype=int)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(a), size=(resamples, len(a)))
    vals = [quadratic_weighted_kappa(a[i], b[i]) for i in idx]
    vals = np.array([v for v in vals if v is not None])
    if vals.size == 0:
        return None
    tail = 100 * (1 - level) / 2
    lo, hi = np.percentile(vals, [tail, 100 - tail])
    return float(lo), float(hi)


@dataclass
class RegionAgreement:
    region: str
    n: int
    correlation: float | None
    correlation_ci: tuple[float, float] | None
    correlation_note: str | None
    kappa: float | None
    kappa_ci: tuple[float, float] | None


def agreement_stats(a: ScoreSheet, b: ScoreSheet, resamples: int = 2000, seed: int = 0,
                    regions=REGIONS) -> list[RegionAgreement]:
    out = []
    for region in regions:
        ra, rb = a.region(region), b.region(region)
        if set(ra) != set(rb):
            missing = sorted(set(ra) ^ set(rb))
            raise ScoreError(f"region {region}: image sets differ between readers ({missing[:5]})")
        if len(ra) < 3:
            raise ScoreError(f"region {region}: need at least 3 images, got {len(ra)}")
        ids = sorted(ra)
        xa = np.array([ra[i] for i in ids])
        xb = np.array([rb[i] for i in ids])
        r, rci, note = pearson_with_ci(xa, xb)
        out.append(RegionAgreement(region, len(ids), r, rci, note, quadratic_weighted_kappa(xa, xb),
                                   bootstrap_kappa_ci(xa, xb, resamples, seed)))
    return out

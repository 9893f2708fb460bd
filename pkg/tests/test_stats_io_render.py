import json

import numpy as np
import pytest
from scipy import ndimage

from conftest import stacked_rects
from oracles import ShearedCase, hand_qwk
from vertenet.cropdetect import detect_crop
from vertenet.guides import generate_ivgs
from vertenet.io import (LandmarkDocument, ManifestEntry, dumps_landmarks, load_landmarks, load_manifest,
                         read_image, save_landmarks, write_image, write_manifest)
from vertenet.landmarks import LandmarkError
from vertenet.render import CHAIN_COLOR, VIOLATION_COLOR, render_overlay, violation_pixels
from vertenet.stats import (REGIONS, ScoreError, ScoreSheet, agreement_stats, bootstrap_kappa_ci, pearson_with_ci,
                            quadratic_weighted_kappa, read_scoresheets, write_scoresheets)


def sheet(reader, table):
    """``table`` maps region -> list of scores for images i0, i1, ..."""
    s = ScoreSheet(reader)
    for region, scores in table.items():
        for i, v in enumerate(scores):
            s.add(f"i{i}", region, v)
    return s


# ---------------------------------------------------------------- agreement statistics

def test_identical_sheets_agree_perfectly():
    table = {r: [0, 2, 3, 5, 6, 1] for r in REGIONS}
    for row in agreement_stats(sheet("a", table), sheet("b", table), resamples=200):
        assert row.correlation == 1.0 and row.kappa == 1.0


def test_shift_by_one_fixture():
    a, b = [0, 1, 2, 3], [1, 2, 3, 4]
    r, _, _ = pearson_with_ci(a, b)
    assert r == pytest.approx(1.0, abs=1e-12)
    assert quadratic_weighted_kappa(a, b) == pytest.approx(5 / 7, abs=1e-12)
    assert hand_qwk(a, b) == pytest.approx(5 / 7, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_kappa_matches_hand_formula(seed):
    rng = np.random.default_rng(seed)
    a = list(rng.integers(0, 7, size=4))
    b = list(rng.integers(0, 7, size=4))
    if len(set(a)) == 1 and len(set(b)) == 1:
        return
    assert quadratic_weighted_kappa(a, b) == pytest.approx(hand_qwk(a, b), abs=1e-12)


def test_point_estimates_are_symmetric(rng):
    a, b = rng.integers(0, 7, size=20), rng.integers(0, 7, size=20)
    assert quadratic_weighted_kappa(a, b) == pytest.approx(quadratic_weighted_kappa(b, a), abs=1e-15)
    assert pearson_with_ci(a, b)[0] == pytest.approx(pearson_with_ci(b, a)[0], abs=1e-15)


def test_zero_variance_region_reports_reason():
    r, ci, note = pearson_with_ci([2, 2, 2, 2], [1, 2, 3, 4])
    assert r is None and ci is None and "variance" in note


def test_fisher_interval_brackets_estimate(rng):
    a = rng.integers(0, 7, size=30)
    b = np.clip(a + rng.integers(-1, 2, size=30), 0, 6)
    r, (lo, hi), _ = pearson_with_ci(a, b)
    assert lo < r < hi


def test_bootstrap_interval_depends_only_on_seed(rng):
    a = rng.integers(0, 7, size=25)
    b = np.clip(a + rng.integers(-2, 3, size=25), 0, 6)
    assert bootstrap_kappa_ci(a, b, 500, seed=3) == bootstrap_kappa_ci(a, b, 500, seed=3)
    assert bootstrap_kappa_ci(a, b, 500, seed=3) != bootstrap_kappa_ci(a, b, 500, seed=4)


def test_sheet_validation():
    s = ScoreSheet("a")
    with pytest.raises(ScoreError):
        s.add("x", "L1", 7)
    with pytest.raises(ScoreError):
        s.add("x", "L6", 1)
    a = sheet("a", {r: [1, 2, 3] for r in REGIONS})
    with pytest.raises(ScoreError):
        agreement_stats(a, sheet("b", {r: [1, 2, 3, 4] for r in REGIONS}))
    with pytest.raises(ScoreError):
        agreement_stats(sheet("a", {r: [1, 2] for r in REGIONS}), sheet("b", {r: [1, 2] for r in REGIONS}))


def test_scoresheet_csv_round_trip(tmp_path):
    a = sheet("a", {r: [1, 2, 3] for r in REGIONS})
    b = sheet("b", {r: [0, 6, 3] for r in REGIONS})
    write_scoresheets(tmp_path / "s.csv", [a, b])
    back = read_scoresheets(tmp_path / "s.csv")
    assert back["a"].scores == a.scores and back["b"].scores == b.scores
    (tmp_path / "bad.csv").write_text("image_id,region,reader,score\ni0,L1,a,x\n")
    with pytest.raises(ScoreError):
        read_scoresheets(tmp_path / "bad.csv")


# ---------------------------------------------------------------- landmark documents and images

def test_landmark_json_round_trip(tmp_path):
    lm = stacked_rects()
    guides = generate_ivgs(lm).to_json()
    doc = LandmarkDocument("img7", lm, guides)
    save_landmarks(tmp_path / "a.json", doc)
    back = load_landmarks(tmp_path / "a.json")
    assert back.to_dict() == doc.to_dict()
    assert dumps_landmarks(back) == dumps_landmarks(doc)
    assert set(doc.to_dict()) == {"schema_version", "image_id", "image_dims", "orientation", "complete",
                                  "vertebrae", "guides"}


def test_landmark_document_rejections(tmp_path):
    d = LandmarkDocument("x", stacked_rects()).to_dict()
    d["vertebrae"][0]["label"] = "C7"
    (tmp_path / "bad.json").write_text(json.dumps(d))
    with pytest.raises(LandmarkError):
        load_landmarks(tmp_path / "bad.json")
    d = LandmarkDocument("x", stacked_rects()).to_dict()
    d["vertebrae"][0]["center"] = [1000.0, 5.0]
    (tmp_path / "out.json").write_text(json.dumps(d))
    with pytest.raises(LandmarkError):
        load_landmarks(tmp_path / "out.json")
    (tmp_path / "junk.json").write_text("{")
    with pytest.raises(LandmarkError):
        load_landmarks(tmp_path / "junk.json")


@pytest.mark.parametrize("suffix,bits,tol", [(".pgm", 8, 0.5 / 255), (".pgm", 16, 0.5 / 65535),
                                             (".png", 8, 0.5 / 255), (".png", 16, 0.5 / 65535)])
def test_image_round_trip(tmp_path, rng, suffix, bits, tol):
    img = rng.uniform(size=(20, 12))
    write_image(tmp_path / f"a{suffix}", img, bits)
    back = read_image(tmp_path / f"a{suffix}")
    assert back.shape == img.shape and np.max(np.abs(back - img)) <= tol + 1e-12


def test_manifest_round_trip(tmp_path):
    entries = [ManifestEntry("a", tmp_path / "a.pgm", tmp_path / "a.json", True),
               ManifestEntry("b", tmp_path / "b.pgm", tmp_path / "b.json", None)]
    write_manifest(tmp_path / "m.json", entries)
    back = load_manifest(tmp_path / "m.json")
    assert [(e.entry_id, e.image, e.landmarks, e.crop_label) for e in back] == \
        [(e.entry_id, e.image, e.landmarks, e.crop_label) for e in entries]
    (tmp_path / "one.json").write_text(json.dumps({"image": "c.pgm", "landmarks": "c.json", "crop_label": 0}))
    (tmp_path / "set.json").write_text(json.dumps({"entries": ["one.json"]}))
    (e,) = load_manifest(tmp_path / "set.json")
    assert e.entry_id == "c" and e.crop_label is False


# ---------------------------------------------------------------- overlays

def test_overlay_without_annotations_is_a_copy(rng):
    img = rng.uniform(size=(30, 20))
    out = render_overlay(img)
    np.testing.assert_array_equal(out, img)
    assert out is not img


def test_overlay_draws_eleven_chain_markers():
    lm = stacked_rects()
    img = np.full(lm.image_size, 0.3)
    out = render_overlay(img, generate_ivgs(lm))
    green = np.all(out == CHAIN_COLOR, axis=2)
    _, n = ndimage.label(green)
    assert n == 11


def test_overlay_violation_markers_match_report():
    case = ShearedCase(np.random.default_rng(11))
    report = detect_crop(case.dims, case.mask, case.landmarks, __import__("vertenet").CropConfig(factor=3.0))
    assert report.cropped
    out = render_overlay(np.full(case.dims, 0.5), report=report)
    magenta = {tuple(p) for p in np.argwhere(np.all(out == VIOLATION_COLOR, axis=2))}
    assert magenta == violation_pixels(report, case.dims)
    assert 0 < len(magenta) <= len(report.violations)

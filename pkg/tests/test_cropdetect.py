import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import stacked_rects
from oracles import ShearedCase, flood_fill_components, loop_closing
from vertenet.cropdetect import (DEFAULT_FACTORS, BlackRegionMask, CropCase, CropConfig, analyze_image,
                                 anterior_points_at_d, check_printed_table, classification_metrics,
                                 crop_distance, detect_black_regions, detect_crop, factor_sweep,
                                 parse_factor_range, smooth_mask)
from vertenet.guides import GuideSet
from vertenet.landmarks import LandmarkError, LandmarkSet, Vertebra
from vertenet.synth import synth_generate


# ---------------------------------------------------------------- black regions

def test_all_zero_image_is_one_component():
    m = detect_black_regions(np.zeros((20, 30)))
    assert m.mask.all() and m.boxes == [(0, 0, 19, 29)]


def test_bright_image_has_empty_mask():
    m = detect_black_regions(np.full((20, 30), 255.0))
    assert m.empty and m.boxes == []


def test_two_rectangles_split_by_a_bright_column():
    img = np.full((40, 50), 0.6)
    img[5:20, 3:20] = 0.0
    img[10:35, 21:45] = 0.0
    m = detect_black_regions(img)
    assert sorted(m.boxes) == flood_fill_components(img == 0) == [(5, 3, 19, 19), (10, 21, 34, 44)]


def test_small_specks_are_dropped():
    img = np.full((100, 100), 0.5)
    img[10, 10] = 0.0  # area 1 < ceil(0.5% of 10000) = 50
    img[50:60, 50:60] = 0.0
    m = detect_black_regions(img)
    assert m.boxes == [(50, 50, 59, 59)]
    assert CropConfig().min_area((100, 100)) == 50
    assert detect_black_regions(img, CropConfig(min_component_area=1)).boxes == [(10, 10, 10, 10), (50, 50, 59, 59)]


def test_threshold_is_configurable():
    img = np.full((10, 10), 0.5)
    img[:5] = 0.02
    assert detect_black_regions(img).empty
    assert detect_black_regions(img, CropConfig(black_threshold=0.05)).mask[:5].all()


# ---------------------------------------------------------------- closing

def test_closing_examples():
    assert not smooth_mask(np.zeros((10, 10), bool), 5).any()
    m = np.zeros((12, 12), bool)
    m[3:9, 3:9] = True
    m[5, 6] = False
    out = smooth_mask(m, 3)
    assert out[5, 6] and out.sum() == 36
    with pytest.raises(ValueError):
        smooth_mask(m, 4)


def test_closing_accepts_and_returns_region_masks():
    regions = detect_black_regions(np.pad(np.ones((6, 6)), 4, constant_values=0.0), CropConfig(min_component_area=1))
    out = smooth_mask(regions, 3)
    assert isinstance(out, BlackRegionMask)


@settings(max_examples=60, deadline=None)
@given(arrays(np.bool_, st.tuples(st.integers(1, 14), st.integers(1, 14))), st.sampled_from([1, 3, 5]))
def test_closing_matches_loops_and_is_idempotent(mask, k):
    once = smooth_mask(mask, k)
    np.testing.assert_array_equal(once, loop_closing(mask, k))
    np.testing.assert_array_equal(smooth_mask(once, k), once)
    assert np.all(once[mask])  # closing is extensive


# ---------------------------------------------------------------- anterior points

def _guides(segments):
    segs = np.asarray(segments, float)
    return GuideSet(segs[:0], segs, segs[:, 0], segs, [f"g{i}" for i in range(len(segs))])


def test_anterior_point_examples():
    g = _guides([[[10, 0], [0, 0]]])
    np.testing.assert_allclose(anterior_points_at_d(g, 5.0), [[15.0, 0.0]])
    np.testing.assert_allclose(anterior_points_at_d(g, 0.0, allow_zero=True), [[10.0, 0.0]])
    g45 = _guides([[[10, 10], [0, 0]]])
    np.testing.assert_allclose(anterior_points_at_d(g45, np.sqrt(2.0)), [[11.0, 11.0]], atol=1e-12)
    with pytest.raises(ValueError):
        anterior_points_at_d(g, 0.0)


def test_zero_length_guide_reported_with_index():
    g = _guides([[[10, 0], [0, 0]], [[5, 5], [5, 5]]])
    with pytest.raises(LandmarkError, match="guide 1"):
        anterior_points_at_d(g, 1.0)


# ---------------------------------------------------------------- detect_crop

def test_distance_formula():
    assert crop_distance(1.2, 30.0) == pytest.approx(37.2, abs=1e-12)
    report = detect_crop((256, 256), None, stacked_rects(width=30.0, image_size=(256, 256)), CropConfig(1.2))
    assert report.d == pytest.approx(37.2, abs=1e-12)


def test_far_spine_empty_mask_is_not_cropped():
    report = detect_crop((256, 256), None, stacked_rects(x0=20, width=30.0, image_size=(256, 256)))
    assert not report.cropped and report.percent == 0.0 and report.violations == []
    assert report.samples.shape == (500, 2)


def test_three_inferior_chain_points_leave_the_frame():
    # sheared stack: x = a + k*y on the posterior edge; pushed points lie on x = a + w + d + k*y
    k, w, height, gap, top = 0.2, 20.0, 24.0, 10.0, 10.0
    tops = top + np.arange(6) * (height + gap)
    chain_y = np.sort(np.concatenate([tops + height / 2, tops[:-1] + height + gap / 2]))
    d = 1.2 * (1 + w)
    W = 160
    a = (W - 1) - w - d - k * 0.5 * (chain_y[7] + chain_y[8])
    verts = []
    for i, t in enumerate(tops):
        b = t + height
        c = np.array([[a + w + k * t, t], [a + k * t, t], [a + w + k * b, b], [a + k * b, b]])
        verts.append(Vertebra(["T12", "L1", "L2", "L3", "L4", "L5"][i], c.mean(axis=0), c))
    lm = LandmarkSet(verts, (256, W))
    lm.validate()
    report = detect_crop((256, W), None, lm, CropConfig(1.2))
    beyond = report.anterior_points[:, 0] > W - 1
    assert beyond.tolist() == [False] * 8 + [True] * 3
    assert report.cropped
    assert {v.level for v in report.violations} <= {"L4", "L5"}
    assert all(v.reason == "beyond-width" for v in report.violations)


def test_posterior_black_components_do_not_change_the_report():
    case = ShearedCase(np.random.default_rng(7))
    H, W = case.dims
    base = detect_crop(case.dims, case.mask, case.landmarks)
    extra = case.mask.copy()
    posterior_edge = int(np.floor((case.a + case.shear * np.arange(H)).min()))
    extra[:, :max(posterior_edge - 1, 1)] = True
    again = detect_crop(case.dims, extra, case.landmarks)
    assert again.percent == base.percent
    assert [(v.point, v.reason, v.level) for v in again.violations] == \
        [(v.point, v.reason, v.level) for v in base.violations]


@pytest.mark.parametrize("seed", range(25))
def test_percent_consistent_with_flag(seed):
    rng = np.random.default_rng(seed)
    case = ShearedCase(rng)
    r = detect_crop(case.dims, case.mask, case.landmarks, CropConfig(factor=rng.uniform(0.5, 2.0)))
    assert 0.0 <= r.percent <= 100.0
    assert (r.percent == 0.0) == (not r.cropped)
    assert r.percent == pytest.approx(100.0 * len(r.violations) / 500)


@pytest.mark.parametrize("seed", range(10))
def test_mirrored_case_gives_the_same_violations(seed):
    case = ShearedCase(np.random.default_rng(100 + seed))
    H, W = case.dims
    flip = lambda p: np.column_stack([(W - 1) - p[:, 0], p[:, 1]])  # noqa: E731
    verts = [Vertebra(v.label, flip(v.center[None])[0], flip(v.corners)) for v in case.landmarks.vertebrae]
    mirrored = LandmarkSet(verts, (H, W), "anterior-left")
    a = detect_crop(case.dims, case.mask, case.landmarks)
    b = detect_crop(case.dims, case.mask[:, ::-1], mirrored)
    assert [(v.reason, v.level) for v in a.violations] == [(v.reason, v.level) for v in b.violations]


def test_mask_shape_must_match():
    with pytest.raises(ValueError):
        detect_crop((256, 128), np.zeros((10, 10), bool), stacked_rects())


def test_analyze_image_finds_a_black_band():
    images, sets = synth_generate(3, 6, black_band_fraction=1.0)
    for img, lm in zip(images, sets):
        report, regions = analyze_image(img, lm)
        assert not regions.empty
        assert regions.mask[img == 0].all()
        if report.cropped and any(v.reason == "in-black-region" for v in report.violations):
            return
    pytest.fail("no synthetic black band produced an in-black-region violation")


# ---------------------------------------------------------------- sweep and metrics

def test_factor_range_parsing():
    assert parse_factor_range("0.8:1.5:0.1") == list(DEFAULT_FACTORS)
    assert parse_factor_range("1.0, 1.2") == [1.0, 1.2]
    for bad in ("1.5:0.8:0.1", "a,b", "0:1:0", "-1"):
        with pytest.raises(ValueError):
            parse_factor_range(bad)


def test_config_validation():
    for kw in ({"factor": 0.0}, {"factor": -1.0}, {"sample_count": 1}, {"kernel": 4}):
        with pytest.raises(ValueError):
            CropConfig(**kw)


def test_sweep_counts_and_skips_unlabelled_cases():
    rng = np.random.default_rng(0)
    cases = []
    for i in range(6):
        c = ShearedCase(rng)
        truth = detect_crop(c.dims, c.mask, c.landmarks, CropConfig(1.2)).cropped
        cases.append(CropCase(f"c{i}", c.dims, c.mask, c.landmarks, truth))
    cases.append(CropCase("nolabel", cases[0].image_dims, None, cases[0].landmarks, None))
    rows, skipped = factor_sweep(cases)
    assert skipped == ["nolabel"] and len(rows) == 8
    assert all(r.total == 6 for r in rows)
    row12 = next(r for r in rows if r.factor == 1.2)
    assert row12.FP == row12.FN == 0 and row12.accuracy == 100.0


def test_metrics_examples():
    m = classification_metrics(tp=35, tn=35, fp=0, fn=0)
    assert (m.accuracy, m.sensitivity, m.specificity, m.f1) == (100.0, 1.0, 1.0, 1.0)
    m = classification_metrics(tp=0, tn=5, fp=0, fn=5)
    assert (m.sensitivity, m.specificity, m.f1) == (0.0, 1.0, 0.0)
    m = classification_metrics(0, 0, 0, 0)
    assert (m.accuracy, m.sensitivity, m.specificity, m.f1) == (None, None, None, None)
    with pytest.raises(ValueError):
        classification_metrics(-1, 0, 0, 0)


def test_printed_rows_reproduce_from_counts():
    rows = {r["factor"]: r for r in check_printed_table()}
    assert rows[0.8]["computed"] == 88.57 and rows[1.1]["computed"] == 98.57 and rows[1.2]["computed"] == 100.0
    assert [f for f, r in rows.items() if not r["match"]] == [1.4]
    assert rows[1.4]["computed"] == 95.71 and rows[1.4]["printed"] == 95.74

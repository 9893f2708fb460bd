import inspect

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import CubicSpline

from conftest import rect_vertebra, stacked_rects
from oracles import brute_force_labels, dense_natural_spline
from vertenet.guides import classify_corners, generate_ivgs, mean_vertebral_width
from vertenet.landmarks import LandmarkError, LandmarkSet, Vertebra
from vertenet.spline import NaturalCubicSpline, fit_natural_cubic_spline, sample_spline, solve_tridiagonal


# ---------------------------------------------------------------- corner labelling

def test_square_labels():
    got = classify_corners([(0, 0), (10, 0), (0, 10), (10, 10)])
    np.testing.assert_array_equal(got, [[10, 0], [0, 0], [10, 10], [0, 10]])


def test_mirror_orientation_swaps_anterior_and_posterior():
    q = [(0, 0), (10, 1), (1, 10), (9, 12)]
    right = classify_corners(q, "anterior-right")
    left = classify_corners(q, "anterior-left")
    np.testing.assert_array_equal(left, right[[1, 0, 3, 2]])


@pytest.mark.parametrize("seed", range(40))
def test_rotated_quads_agree_with_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    w, h = rng.uniform(20, 40), rng.uniform(10, 25)
    local = np.array([[w, -h], [-w, -h], [w, h], [-w, h]]) / 2 + rng.uniform(-1, 1, size=(4, 2))
    a = rng.uniform(-0.5, 0.5)
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    quad = (local @ rot.T + rng.uniform(50, 100, size=2))[rng.permutation(4)]
    for orientation in ("anterior-right", "anterior-left"):
        np.testing.assert_array_equal(classify_corners(quad, orientation), brute_force_labels(quad, orientation))


def test_self_intersecting_labelling_rejected():
    with pytest.raises(LandmarkError):
        classify_corners([(10, 0), (0, 2), (-8, 3), (-20, 4)])
    with pytest.raises(LandmarkError):
        classify_corners([(0, 0), (1, 1), (2, np.nan), (3, 3)])


# ---------------------------------------------------------------- widths and guides

def test_mean_width_examples():
    assert mean_vertebral_width(stacked_rects(width=30.0)) == pytest.approx(30.0, abs=1e-12)
    lm = LandmarkSet([rect_vertebra("T12", 10, 10, 20, 10), rect_vertebra("L1", 10, 30, 40, 10)], (100, 100))
    assert mean_vertebral_width(lm) == pytest.approx(30.0, abs=1e-12)
    with pytest.raises(LandmarkError):
        mean_vertebral_width(LandmarkSet([], (10, 10)))


@pytest.mark.parametrize("angle", [-0.4, -0.1, 0.2, 0.45])
def test_width_invariant_under_rotation(angle):
    base = stacked_rects(k=3, x0=200, y0=150, width=26, height=14, gap=40, image_size=(600, 600))
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    c0 = np.array([300.0, 300.0])
    verts = [Vertebra(v.label, (v.center - c0) @ rot.T + c0, (v.corners - c0) @ rot.T + c0)
             for v in base.vertebrae]
    assert mean_vertebral_width(LandmarkSet(verts, (600, 600))) == pytest.approx(26.0, abs=1e-10)


def test_stacked_unit_squares_gap_two():
    lm = LandmarkSet([rect_vertebra("T12", 0, 0, 1, 1), rect_vertebra("L1", 0, 3, 1, 1)], (10, 10))
    g = generate_ivgs(lm)
    np.testing.assert_allclose(g.inter_guides[0], [[1.0, 2.0], [0.0, 2.0]])
    np.testing.assert_allclose(g.intra_guides, [[[1.0, 0.5], [0.0, 0.5]], [[1.0, 3.5], [0.0, 3.5]]])


def test_guide_counts_and_chain_order():
    g = generate_ivgs(stacked_rects())
    assert g.inter_guides.shape == (5, 2, 2) and g.intra_guides.shape == (6, 2, 2)
    assert g.anterior_chain.shape == (11, 2)
    assert np.all(np.diff(g.anterior_chain[:, 1]) > 0)
    assert g.chain_labels[:3] == ["T12", "T12/L1", "L1"] and g.chain_labels[-1] == "L5"


def test_inter_guide_endpoints_lie_between_anterior_corners():
    g = generate_ivgs(stacked_rects(gap=4.0))
    lm = stacked_rects(gap=4.0)
    for i, seg in enumerate(g.inter_guides):
        ai = lm.vertebrae[i].corner("anterior_inferior")[1]
        as_next = lm.vertebrae[i + 1].corner("anterior_superior")[1]
        assert ai < seg[0, 1] < as_next


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.3, 4.0))
def test_guides_commute_with_translation_and_scaling(tx, ty, s):
    base = stacked_rects(x0=100, y0=100, image_size=(1000, 1000))
    moved = LandmarkSet([Vertebra(v.label, v.center * s + (tx, ty), v.corners * s + (tx, ty))
                         for v in base.vertebrae], (1000, 1000))
    g0, g1 = generate_ivgs(base), generate_ivgs(moved)
    np.testing.assert_allclose(g1.inter_guides, g0.inter_guides * s + (tx, ty), atol=1e-9)
    np.testing.assert_allclose(g1.intra_guides, g0.intra_guides * s + (tx, ty), atol=1e-9)
    np.testing.assert_allclose(g1.anterior_chain, g0.anterior_chain * s + (tx, ty), atol=1e-9)


# ---------------------------------------------------------------- spline

def test_tridiagonal_solver_matches_dense(rng):
    n = 9
    # full-length bands: lower[0] and upper[-1] are unused
    lower, upper = rng.normal(size=n), rng.normal(size=n)
    diag = 4.0 + rng.uniform(size=n)
    rhs = rng.normal(size=n)
    dense = np.diag(diag) + np.diag(lower[1:], -1) + np.diag(upper[:-1], 1)
    np.testing.assert_allclose(solve_tridiagonal(lower, diag, upper, rhs), np.linalg.solve(dense, rhs), atol=1e-12)


def test_collinear_knots_give_a_line(rng):
    y = np.sort(rng.uniform(0, 300, size=11))
    x = 4.0 - 0.37 * y
    s = fit_natural_cubic_spline(np.column_stack([x, y]))
    probe = np.linspace(y[0], y[-1], 2000)
    assert np.max(np.abs(s(probe) - (4.0 - 0.37 * probe))) < 1e-10


def test_two_knots_give_a_segment():
    s = NaturalCubicSpline([0.0, 10.0], [2.0, 7.0])
    np.testing.assert_allclose(s(np.linspace(0, 10, 11)), np.linspace(2, 7, 11), atol=1e-12)


@pytest.mark.parametrize("y", [[0.0, 1.0, 1.0], [0.0, 2.0, 1.0], [0.0]])
def test_bad_knots_rejected(y):
    with pytest.raises(ValueError):
        NaturalCubicSpline(y, np.zeros(len(y)))


def test_matches_dense_solve_and_scipy(rng):
    y = np.cumsum(rng.uniform(1, 20, size=11))
    x = rng.normal(0, 30, size=11)
    probe = np.linspace(y[0], y[-1], 1000)
    s = NaturalCubicSpline(y, x)
    np.testing.assert_allclose(s(probe), dense_natural_spline(y, x)(probe), atol=1e-10)
    np.testing.assert_allclose(s(probe), CubicSpline(y, x, bc_type="natural")(probe), atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.5, 40), min_size=1, max_size=20), st.integers(0, 2**31 - 1))
def test_spline_interpolates_every_knot(steps, seed):
    y = np.concatenate([[0.0], np.cumsum(steps)])
    x = np.random.default_rng(seed).normal(0, 50, size=len(y))
    np.testing.assert_allclose(NaturalCubicSpline(y, x)(y), x, atol=1e-10)


def test_sample_spline_contract():
    s = NaturalCubicSpline([1.0, 4.0, 9.0], [0.0, 2.0, 1.0])
    ends = sample_spline(s, 2)
    np.testing.assert_allclose(ends, [[0.0, 1.0], [1.0, 9.0]], atol=1e-12)
    pts = sample_spline(s)
    assert pts.shape == (500, 2)
    assert inspect.signature(sample_spline).parameters["count"].default == 500
    np.testing.assert_allclose(np.diff(pts[:, 1]), 8.0 / 499, atol=1e-12)
    with pytest.raises(ValueError):
        sample_spline(s, 1)

"""Unit and property tests for landmarks, hulls, masks, and affine jitter."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forgelab import geometry
from forgelab.geometry import (AffineParams, ForgeryRegion, GeometryError,
                               LandmarkSet, convex_hull, load_landmarks,
                               rasterize_hull, sample_affine_jitter,
                               save_landmarks, select_regions)
from forgelab.simulate import generate_toy_face


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


points_strategy = st.lists(
    st.tuples(st.floats(0, 100, allow_nan=False, width=32),
              st.floats(0, 100, allow_nan=False, width=32)),
    min_size=3, max_size=40).map(np.array)


@settings(max_examples=50, deadline=None)
@given(points_strategy)
def test_convex_hull_contains_all_points(pts):
    try:
        hull = convex_hull(pts)
    except GeometryError:
        return  # degenerate input (collinear/duplicate) is allowed to fail
    n = len(hull)
    for p in pts:
        # inside or on every edge of the CCW hull
        for i in range(n):
            assert _cross(hull[i], hull[(i + 1) % n], p) >= -1e-6 * 10000


def test_convex_hull_of_square_is_corners():
    pts = np.array([[0, 0], [4, 0], [4, 4], [0, 4], [2, 2], [1, 3]])
    hull = convex_hull(pts)
    assert len(hull) == 4
    assert {tuple(p) for p in hull} == {(0, 0), (4, 0), (4, 4), (0, 4)}


def test_rasterize_hull_triangle_area():
    tri = np.array([[0.0, 0.0], [40.0, 0.0], [0.0, 40.0]])
    mask = rasterize_hull(tri, 64, 64)
    assert mask.dtype == np.float32 or mask.dtype == np.uint8 or mask.dtype == bool \
        or np.issubdtype(mask.dtype, np.floating)
    area = float(np.asarray(mask, np.float64).sum())
    assert abs(area - 800.0) / 800.0 < 0.1  # half of 40x40, rasterization slack


def test_rasterize_hull_empty_outside():
    tri = np.array([[1.0, 1.0], [5.0, 1.0], [1.0, 5.0]])
    mask = rasterize_hull(tri, 32, 32)
    assert np.asarray(mask)[20:, 20:].sum() == 0


def test_affine_inverse_round_trip():
    p = AffineParams(np.array([[1.1, 0.05, 3.0], [-0.02, 0.93, -2.0]]))
    q = p.inverse()
    pts = np.array([[1.0, 2.0], [-4.0, 7.5], [0.0, 0.0]])
    fwd = pts @ p.matrix[:, :2].T + p.matrix[:, 2]
    back = fwd @ q.matrix[:, :2].T + q.matrix[:, 2]
    np.testing.assert_allclose(back, pts, atol=1e-4)
    assert p.determinant > 0


def test_affine_identity_warp_preserves_image():
    img, _ = generate_toy_face(0)
    out = geometry.affine_warp(img, AffineParams.identity())
    np.testing.assert_allclose(out, img, atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_affine_jitter_translation_never_pixel_aligned(seed):
    rng = np.random.default_rng(seed)
    p = sample_affine_jitter(rng, 224, 224)
    # rotation/scale are about the center, so the displacement of the center
    # pixel is exactly the sampled translation
    center = np.array([112.0, 112.0])
    moved = p.matrix[:, :2] @ center + p.matrix[:, 2]
    shift = moved - center
    assert abs(shift[0]) >= 0.008 * 224 - 1e-3
    assert abs(shift[1]) >= 0.008 * 224 - 1e-3
    assert abs(shift[0]) <= 0.02 * 224 + 1e-3
    assert p.determinant > 0


def test_select_regions_bounds_and_uniqueness():
    _, lms = generate_toy_face(1)
    for seed in range(20):
        regions = select_regions(lms, 3, np.random.default_rng(seed))
        assert 1 <= len(regions) <= 3
        assert len(set(regions)) == len(regions)
        assert all(isinstance(r, ForgeryRegion) for r in regions)


def test_region_points_shapes():
    _, lms = generate_toy_face(2)
    for region in ForgeryRegion:
        pts = lms.region_points(region)
        assert pts.ndim == 2 and pts.shape[1] == 2 and len(pts) >= 3


def test_landmarks_save_load_round_trip(tmp_path):
    _, lms = generate_toy_face(3)
    path = tmp_path / "lm.json"
    save_landmarks(lms, path)
    loaded = load_landmarks(path, 224, 224)
    np.testing.assert_allclose(loaded.points, lms.points, atol=1e-6)


def test_landmarks_out_of_bounds_rejected(tmp_path):
    _, lms = generate_toy_face(4)
    path = tmp_path / "lm.json"
    save_landmarks(lms, path)
    with pytest.raises(GeometryError):
        load_landmarks(path, 32, 32)


def test_display_names_are_prose():
    assert ForgeryRegion.CENTER_FACE.display_name == "center face"
    assert ForgeryRegion.LEFT_EYE.display_name == "left eye"

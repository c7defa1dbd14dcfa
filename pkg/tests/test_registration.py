import numpy as np
import pytest
from scipy.spatial import cKDTree

from dispfield.errors import DegenerateConfigurationError, ImageTooSmallError, NoConsensusError
from dispfield.imgcore import apply_homography, warp_perspective
from dispfield.registration import (
    DetectorParams,
    brute_force_2nn,
    build_kdtree,
    detect_features,
    dlt_homography,
    homography_from_4,
    match_features,
    ransac_points,
)

from conftest import random_homography, speckle_image


# ---------------------------------------------------------------- kd-tree

@pytest.mark.parametrize("dim,leaf", [(2, 1), (8, 4), (128, 16)])
def test_kdtree_agrees_with_scipy(dim, leaf):
    r = np.random.default_rng(dim)
    pts = r.random((400, dim))
    tree = build_kdtree(pts, leaf_size=leaf)
    oracle = cKDTree(pts)
    for q in r.random((60, dim)):
        (i1, d1), (i2, d2) = tree.query2(q)
        dd, ii = oracle.query(q, k=2)
        assert (i1, i2) == tuple(ii)
        assert d1 == pytest.approx(dd[0], rel=1e-12)
        assert d2 == pytest.approx(dd[1], rel=1e-12)


def test_kdtree_ties_and_duplicates():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tree = build_kdtree(pts, leaf_size=1)
    q = np.array([0.5, 0.0])
    assert tree.query2(q) == brute_force_2nn(pts, q)
    (i1, _), (i2, d2) = build_kdtree(pts[:1]).query2(q)
    assert i1 == 0 and i2 == -1 and np.isinf(d2)


def test_ratio_test_filters_ambiguous():
    a = np.array([[0.0, 0.0], [10.0, 0.0]])
    b = np.array([[0.1, 0.0], [5.0, 0.0]])
    ms = match_features(build_kdtree(a), b, 0.75)
    assert [(m.index_a, m.index_b) for m in ms] == [(0, 0)]


# ---------------------------------------------------------------- homographies

def test_four_point_exact(rng):
    h = random_homography(rng)
    src = np.array([[0, 0], [100, 0], [100, 80], [0, 80]], dtype=float)
    est = homography_from_4(src, apply_homography(h, src))
    assert np.allclose(est, h, rtol=1e-9, atol=1e-9)


def test_four_point_rejects_collinear():
    src = np.array([[0, 0], [1, 1], [2, 2], [0, 5]], dtype=float)
    with pytest.raises(DegenerateConfigurationError):
        homography_from_4(src, src)


def test_dlt_least_squares_with_noise(rng):
    h = random_homography(rng)
    src = rng.uniform(0, 300, (200, 2))
    dst = apply_homography(h, src) + rng.normal(0, 0.2, (200, 2))
    est = dlt_homography(src, dst)
    err = np.hypot(*(apply_homography(est, src) - apply_homography(h, src)).T)
    assert err.max() < 0.2


def test_dlt_needs_four():
    with pytest.raises(DegenerateConfigurationError):
        dlt_homography(np.zeros((3, 2)), np.zeros((3, 2)))


def test_ransac_no_consensus():
    with pytest.raises(NoConsensusError):
        ransac_points(np.zeros((3, 2)), np.zeros((3, 2)))


def test_ransac_is_seeded(rng):
    h = random_homography(rng)
    src = rng.uniform(0, 300, (60, 2))
    dst = apply_homography(h, src)
    dst[:15] += rng.uniform(20, 60, (15, 2))
    a = ransac_points(src, dst, seed=5, max_iters=300)
    b = ransac_points(src, dst, seed=5, max_iters=300)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


# ---------------------------------------------------------------- features

def test_detector_rejects_tiny_image():
    with pytest.raises(ImageTooSmallError):
        detect_features(np.zeros((20, 40)))


def test_flat_image_has_no_features():
    kp, desc = detect_features(np.full((64, 64), 0.5))
    assert kp == [] and desc.shape == (0, 128)


def test_descriptors_unit_length_and_deterministic():
    img = speckle_image((96, 128), 3, blur=2.0)
    kp1, d1 = detect_features(img)
    kp2, d2 = detect_features(img)
    assert len(kp1) > 20
    assert kp1 == kp2 and np.array_equal(d1, d2)
    assert np.allclose(np.linalg.norm(d1, axis=1), 1.0)
    kp3, _ = detect_features(img, DetectorParams(max_features=10))
    assert len(kp3) == 10


def test_features_register_a_known_shift():
    img = speckle_image((140, 180), 9, blur=2.0)
    h = np.array([[1.0, 0.0, 7.0], [0.0, 1.0, -4.0], [0.0, 0.0, 1.0]])
    moved = warp_perspective(img, h, 180, 140)
    kp_a, da = detect_features(img)
    kp_b, db = detect_features(moved)
    ms = match_features(build_kdtree(db), da)
    src = np.array([kp_a[m.index_a].position for m in ms])
    dst = np.array([kp_b[m.index_b].position for m in ms])
    est, inl = ransac_points(src, dst)
    assert len(inl) >= 10
    assert np.allclose(apply_homography(est, [[90.0, 70.0]]), [[97.0, 66.0]], atol=0.3)

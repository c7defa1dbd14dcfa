import numpy as np
import pytest
from scipy import ndimage

from dispfield.errors import DimensionMismatchError, InvalidHomographyError
from dispfield.imgcore import (
    apply_homography,
    as_gray,
    bilinear_sample,
    bilinear_sample_many,
    dilate3x3,
    invert_homography,
    load_image,
    load_mask,
    mask_and,
    normalize_homography,
    save_image,
    save_mask,
    threshold,
    translation,
    warp_perspective,
)


def test_gray_conversion_uses_luma_weights():
    img = np.zeros((2, 2, 3))
    img[..., 1] = 1.0
    assert np.allclose(as_gray(img), 0.587)


def test_bilinear_matches_map_coordinates(rng):
    img = rng.random((20, 30))
    xs = rng.uniform(0, 29, 500)
    ys = rng.uniform(0, 19, 500)
    ours, inside = bilinear_sample_many(img, xs, ys)
    oracle = ndimage.map_coordinates(img, [ys, xs], order=1)
    assert inside.all()
    assert np.allclose(ours, oracle, atol=1e-12)
    assert bilinear_sample(img, (xs[0], ys[0])) == pytest.approx(oracle[0], abs=1e-12)


def test_bilinear_out_of_bounds():
    img = np.ones((5, 5))
    assert bilinear_sample(img, (4.0001, 2)) is None
    assert bilinear_sample(img, (4.0, 4.0)) == 1.0
    _, inside = bilinear_sample_many(img, np.array([-0.1, 0.0]), np.array([0.0, 0.0]))
    assert inside.tolist() == [False, True]


def test_dilate_matches_scipy(rng):
    m = rng.random((40, 50)) > 0.93
    assert np.array_equal(dilate3x3(m), ndimage.binary_dilation(m, np.ones((3, 3), bool)))


def test_mask_and_shape_check():
    with pytest.raises(DimensionMismatchError):
        mask_and(np.zeros((2, 2), bool), np.zeros((2, 3), bool))
    with pytest.raises(ValueError):
        threshold(np.zeros((2, 2)), 1.5)


def test_homography_helpers():
    h = np.array([[2.0, 0.1, 3], [0.0, 1.5, -2], [1e-3, 0, 1]]) * 4.0
    hn = normalize_homography(h)
    assert hn[2, 2] == 1.0
    pts = np.array([[3.0, 4.0], [10.0, -5.0]])
    back = apply_homography(invert_homography(hn), apply_homography(hn, pts))
    assert np.allclose(back, pts)
    with pytest.raises(InvalidHomographyError):
        invert_homography(np.zeros((3, 3)))
    with pytest.raises(InvalidHomographyError):
        normalize_homography(np.full((3, 3), np.nan))


def test_warp_integer_translation_is_a_shift(rng):
    img = rng.random((30, 40))
    out, valid = warp_perspective(img, translation(3, 2), 40, 30, return_validity=True)
    assert np.allclose(out[2:, 3:], img[:-2, :-3])
    assert not valid[:2].any() and not valid[:, :3].any()
    assert valid[2:, 3:].all()


def test_image_roundtrip(tmp_path, rng):
    img = rng.random((8, 9, 3))
    save_image(tmp_path / "a.png", img)
    back = load_image(tmp_path / "a.png")
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12
    gray = rng.random((6, 7))
    save_image(tmp_path / "g.pgm", gray)
    assert load_image(tmp_path / "g.pgm").shape == gray.shape
    m = rng.random((6, 7)) > 0.5
    save_mask(tmp_path / "m.png", m)
    assert np.array_equal(load_mask(tmp_path / "m.png"), m)

import numpy as np
import pytest

from dispfield.errors import InvalidHomographyError
from dispfield.imgcore import apply_homography, translation
from dispfield.stitch import (
    CameraPose,
    blend_average,
    canvas_layout,
    compose_chain,
    conversion_coefficient,
    find_dots,
    foreshortening_correct,
    read_pose_csv,
    rotation_homography,
    stitch_all,
)

from conftest import speckle_image


def test_rotation_homography_identity_and_inverse():
    pose = CameraPose((0.0, 0.0, 0.0), (0, 0, 0), 800.0, 100.0, 80.0)
    assert np.allclose(rotation_homography(pose), np.eye(3))
    fwd = rotation_homography(CameraPose((0.0, 0.05, 0.0), (0, 0, 0), 800.0, 100.0, 80.0))
    back = rotation_homography(CameraPose((0.0, -0.05, 0.0), (0, 0, 0), 800.0, 100.0, 80.0))
    assert np.allclose(fwd @ back / (fwd @ back)[2, 2], np.eye(3), atol=1e-12)
    # K R K^-1 keeps the principal point fixed only for rotations about the optical axis
    roll = rotation_homography(CameraPose((0.0, 0.0, 0.3), (0, 0, 0), 800.0, 100.0, 80.0))
    assert np.allclose(apply_homography(roll, [100.0, 80.0]), [100.0, 80.0])


def test_foreshortening_identity_pose_is_noop(rng):
    img = rng.random((20, 30))
    pose = CameraPose((0.0, 0.0, 0.0), (0, 0, 0), 500.0, 15.0, 10.0)
    assert np.allclose(foreshortening_correct(img, pose), img)


def test_pose_requires_positive_focal():
    with pytest.raises(ValueError):
        CameraPose((0, 0, 0), (0, 0, 0), 0.0, 0, 0)


def test_pose_csv_sorted_by_view(tmp_path):
    p = tmp_path / "poses.csv"
    p.write_text("view,rx,ry,rz,tx,ty,tz,f,cx,cy\n1,0,0.1,0,0,0,0,900,5,6\n0,0,0,0,0,0,0,800,5,6\n")
    poses = read_pose_csv(p)
    assert [pp.focal for pp in poses] == [800.0, 900.0]


def test_compose_chain_and_layout():
    chain = compose_chain([translation(50, 0), translation(45, 2)])
    assert np.allclose(chain[2], translation(95, 2))
    (ox, oy), w, h = canvas_layout([np.eye(3), translation(-3, -2)], [(10, 8), (10, 8)])
    assert (ox, oy) == (3, 2) and (w, h) == (13, 10)
    with pytest.raises(InvalidHomographyError):
        compose_chain([np.zeros((3, 3))])


def test_blend_average_counts():
    a = (np.full((2, 3), 1.0), np.array([[1, 1, 0], [1, 1, 0]], bool))
    b = (np.full((2, 3), 3.0), np.array([[0, 1, 1], [0, 1, 1]], bool))
    pano = blend_average([a, b])
    assert np.allclose(pano.image, [[1, 2, 3], [1, 2, 3]])
    assert pano.overlap_count.tolist() == [[1, 2, 1], [1, 2, 1]]


def test_stitch_translated_views_roundtrip():
    master = speckle_image((120, 300), 21, blur=2.0)
    views = [master[:, 0:140], master[:, 80:220], master[:, 160:300]]
    pano = stitch_all(views)
    ox, oy = pano.offset
    assert max(ox, oy) <= 1
    assert abs(pano.shape[1] - 300 - ox) <= 1 and abs(pano.shape[0] - 120 - oy) <= 1
    for t, start in zip(pano.transforms, (0, 80, 160)):
        assert np.allclose(apply_homography(t, [10.0, 60.0]), [10.0 + start + ox, 60.0 + oy], atol=0.1)
    inner = pano.image[5 + oy:115 + oy, 5 + ox:295 + ox]
    assert np.abs(inner - master[5:115, 5:295]).mean() < 0.01


def _dot_image(diam, centres, size=(200, 300)):
    img = np.full(size, 0.8)
    yy, xx = np.mgrid[0:size[0], 0:size[1]]
    for cx, cy in centres:
        cover = np.clip(diam / 2 - np.hypot(xx - cx, yy - cy) + 0.5, 0, 1)
        img = img * (1 - cover) + 0.05 * cover
    return img


def test_find_dots_diameter_and_centre():
    centres = [(50.3, 60.7), (150.0, 100.0), (240.6, 140.2)]
    dots = find_dots(_dot_image(24.0, centres))
    assert len(dots) == 3
    for d, (cx, cy) in zip(sorted(dots, key=lambda d: d.x), centres):
        assert d.x == pytest.approx(cx, abs=0.05)
        assert d.y == pytest.approx(cy, abs=0.05)
        assert d.diameter_px == pytest.approx(24.0, rel=0.01)
    coef, spread = conversion_coefficient(dots, 30.0)
    assert coef == pytest.approx(1.25, rel=0.01)
    assert spread < 0.01


def test_find_dots_exclusion_and_empty():
    img = _dot_image(20.0, [(100.0, 100.0)])
    excl = np.zeros(img.shape, bool)
    excl[80:120, 80:120] = True
    assert find_dots(img, exclude=excl) == []
    with pytest.raises(ValueError):
        conversion_coefficient([], 30.0)

import numpy as np
import pytest

from dispfield.errors import DegenerateConfigurationError
from dispfield.imgcore import apply_homography
from dispfield.synth import (
    BeamModel,
    BeamSpec,
    SceneSpec,
    analytic_field,
    beam_extent_px,
    cantilever_deflection,
    random_distortions,
    render_beam,
    slice_views,
    tip_load_for,
    true_mask,
    truth_at,
    view_layout,
    warp_by_field,
)

from conftest import speckle_image


def test_deflection_closed_form():
    b = BeamSpec(load=120.0)
    x = np.linspace(0, b.length, 11)
    ei = b.modulus * b.inertia
    expected = b.load * x ** 2 * (3 * b.length - x) / (6 * ei)
    assert np.allclose(cantilever_deflection(x, b), expected, rtol=1e-14)
    assert cantilever_deflection(b.length, b) == pytest.approx(b.load * b.length ** 3 / (3 * ei))
    with pytest.raises(ValueError):
        cantilever_deflection(-1.0, b)
    with pytest.raises(ValueError):
        cantilever_deflection(b.length + 1, b)


def test_beam_validation():
    with pytest.raises(ValueError):
        BeamSpec(length=0.0)
    with pytest.raises(ValueError):
        BeamSpec(load=-1.0)
    with pytest.raises(ValueError):
        SceneSpec(background="plaid")


def test_tip_load_hits_target():
    scene = SceneSpec()
    base = BeamSpec()
    for tip in (5.0, 20.0):
        beam = BeamSpec(load=tip_load_for(tip, base, scene))
        assert cantilever_deflection(beam.length, beam) / scene.mm_per_px == pytest.approx(tip, rel=1e-12)


def test_beam_model_extension():
    scene = SceneSpec()
    beam = BeamSpec(load=tip_load_for(10.0, BeamSpec(), scene))
    m = BeamModel(beam, scene)
    assert m.v_px(scene.beam_x - 20) == 0.0
    tip = m.x_fixed + m.length_px
    assert m.v_px(tip) == pytest.approx(10.0)
    # tangent continuation past the free end
    slope = beam.load * beam.length ** 2 / (2 * beam.modulus * beam.inertia)
    assert m.v_px(tip + 8) - m.v_px(tip) == pytest.approx(8 * slope, rel=1e-9)


def test_truth_field_and_mask():
    scene = SceneSpec()
    beam = BeamSpec(load=tip_load_for(20.0, BeamSpec(), scene))
    x0, y0, w, h = beam_extent_px(beam, scene)
    assert (w, h) == (1800, 200)
    mask = true_mask(beam, scene)
    assert mask.sum() == w * h
    gt = analytic_field(beam, scene, spacing=10)
    assert gt.field.valid.sum() == mask[::10, ::10].sum()
    assert np.abs(gt.field.u).max() == 0.0
    u, v, inside = truth_at(beam, scene, [50.0, 1000.0], [300.0, 300.0])
    assert inside.tolist() == [False, True]


def test_render_beam_mask_and_determinism():
    scene = SceneSpec(width=400, height=200, beam_x=20, beam_y=60, seed=3)
    beam = BeamSpec(length=400.0, height=100.0)
    a, ma = render_beam(beam, scene)
    b, mb = render_beam(beam, scene)
    assert np.array_equal(a, b) and np.array_equal(ma, mb)
    assert np.array_equal(ma, true_mask(beam, scene))
    with pytest.raises(DegenerateConfigurationError):
        render_beam(BeamSpec(length=2000.0), scene)


def test_view_layout():
    vw, starts = view_layout(2000, 4, 0.3)
    assert starts[0] == 0 and starts[-1] + vw == 2000
    ov = [(a + vw - b) / vw for a, b in zip(starts, starts[1:])]
    assert all(o == pytest.approx(0.3, abs=0.01) for o in ov)
    assert view_layout(500, 1, 0.5) == (500, [0])
    with pytest.raises(ValueError):
        view_layout(500, 3, 0.95)
    with pytest.raises(ValueError):
        view_layout(500, 0, 0.3)


def test_slice_views_match_master():
    pano = speckle_image((80, 300), 4, blur=2.0)
    dist = random_distortions(3, (130, 80), seed=1, max_shift=3.0)
    vs = slice_views(pano, 3, 0.3, dist)
    assert np.allclose(vs.distortions[0], np.eye(3))
    assert np.array_equal(vs.views[0], pano[:, :vs.view_width])
    # a view pixel shows the master at view_to_master(p)
    from scipy.ndimage import map_coordinates

    for i in range(3):
        p = np.array([[40.0, 30.0], [90.0, 50.0]])
        q = apply_homography(vs.view_to_master(i), p)
        expect = map_coordinates(pano, [q[:, 1], q[:, 0]], order=1)
        got = vs.views[i][p[:, 1].astype(int), p[:, 0].astype(int)]
        assert np.allclose(got, expect, atol=1e-9)
    with pytest.raises(ValueError):
        slice_views(pano, 3, 0.3, dist[:2])


def test_warp_by_field():
    img = speckle_image((40, 50), 1)
    assert np.array_equal(warp_by_field(img, 0.0, 0.0), img)
    out = warp_by_field(img, 2.0, -1.0)
    assert np.allclose(out[5:30, 5:40], img[6:31, 3:38])

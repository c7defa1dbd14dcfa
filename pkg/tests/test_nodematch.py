import numpy as np
import pytest

from dispfield.errors import UndefinedCorrelationError
from dispfield.mesh import GridSpec, mesh_structure
from dispfield.nodematch import (
    MatchParams,
    NodeDisplacement,
    correlate,
    correlate_naive,
    extract_template,
    fill_invalid,
    match_node,
    nodal_arrays,
    node_displacements,
    peak,
    read_nodes_csv,
    subpixel_refine,
    write_nodes_csv,
    zncc,
    zncc_naive,
)
from dispfield.synth import warp_by_field

from conftest import speckle_image


def corrcoef(a, b):
    return float(np.corrcoef(np.ravel(a), np.ravel(b))[0, 1])


def test_zncc_matches_corrcoef(rng):
    for _ in range(50):
        t = rng.random((9, 7))
        s = rng.random((9, 7))
        assert zncc(t, s) == pytest.approx(corrcoef(t, s), abs=1e-12)
        assert zncc_naive(t.tolist(), s.tolist()) == pytest.approx(corrcoef(t, s), abs=1e-12)


def test_zncc_flat_operand():
    with pytest.raises(UndefinedCorrelationError):
        zncc(np.ones((5, 5)), np.random.default_rng(0).random((5, 5)))
    with pytest.raises(UndefinedCorrelationError):
        zncc_naive([[1, 1], [1, 1]], [[0, 1], [2, 3]])
    with pytest.raises(ValueError):
        zncc(np.ones((3, 3)), np.ones((3, 4)))


def test_extract_template_bounds():
    img = np.arange(100.0).reshape(10, 10)
    t = extract_template(img, (5, 5), 5)
    assert t.patch.shape == (5, 5) and t.center == (5, 5) and t.half == (2, 2)
    assert extract_template(img, (1, 5), 5) is None
    with pytest.raises(ValueError):
        extract_template(img, (5, 5), 4)


def test_fft_surface_equals_naive():
    img = speckle_image((60, 70), 2)
    dfm = speckle_image((60, 70), 3)
    t = extract_template(img, (30, 28), 11)
    fast = correlate(t, dfm, 6)
    slow = correlate_naive(t, dfm, 6)
    assert np.array_equal(fast.defined, slow.defined)
    assert np.abs(fast.values[fast.defined] - slow.values[slow.defined]).max() < 1e-10


def test_clipped_search_region():
    img = speckle_image((40, 40), 4)
    t = extract_template(img, (8, 20), 9)
    surf = correlate(t, img, 8)
    assert surf.clipped
    assert not surf.defined[:, 0].any()
    assert surf.at(0, 0) == pytest.approx(1.0, abs=1e-12)
    assert surf.at(-8, 0) is None


def test_peak_tie_break():
    from dispfield.nodematch import CorrelationSurface

    vals = np.zeros((5, 5))
    vals[1, 3] = vals[3, 1] = vals[4, 4] = 0.9
    surf = CorrelationSurface(vals, np.ones((5, 5), bool), 2)
    # (1, -1) and (-1, 1) tie on magnitude; row-major order picks the upper one
    assert peak(surf) == ((1, -1), 0.9)


def test_subpixel_parabola_exact_on_quadratic():
    from dispfield.nodematch import CorrelationSurface

    r = 3
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    vals = 1.0 - 0.01 * ((dx - 0.3) ** 2 + (dy + 0.2) ** 2)
    surf = CorrelationSurface(vals, np.ones_like(vals, bool), r)
    (du, dv), ok = subpixel_refine(surf, (0, 0))
    assert ok
    assert du == pytest.approx(0.3, abs=1e-12) and dv == pytest.approx(-0.2, abs=1e-12)
    assert subpixel_refine(surf, (r, 0)) == ((0.0, 0.0), False)


def test_match_node_recovers_shift():
    ref = speckle_image((120, 120), 8, blur=2.0)
    dfm = np.roll(ref, (3, -5), axis=(0, 1))
    res = match_node(ref, dfm, 0, (60.0, 60.0), MatchParams(template_size=31, search_radius=10))
    assert res.valid and (res.u, res.v) == (-5, 3)
    assert res.peak_r == pytest.approx(1.0, abs=1e-12)
    edge = match_node(ref, dfm, 1, (5.0, 60.0), MatchParams(template_size=31, search_radius=10))
    assert not edge.valid and edge.note == "template outside reference"


def test_subpixel_matching_on_smooth_shift():
    ref = speckle_image((140, 140), 11, blur=3.0)
    u = np.full(ref.shape, 0.4)
    v = np.full(ref.shape, -1.3)
    dfm = warp_by_field(ref, u, v)
    res = match_node(ref, dfm, 0, (70, 70), MatchParams(template_size=41, search_radius=6, subpixel=True))
    assert res.subpixel
    assert res.u == pytest.approx(0.4, abs=0.1) and res.v == pytest.approx(-1.3, abs=0.1)


def test_threads_do_not_change_results():
    ref = speckle_image((150, 150), 12, blur=2.0)
    dfm = np.roll(ref, (2, 1), axis=(0, 1))
    mask = np.zeros(ref.shape, bool)
    mask[30:120, 30:120] = True
    mesh = mesh_structure(mask, GridSpec(30))
    params = MatchParams(template_size=21, search_radius=5)
    a = node_displacements(ref, dfm, mesh, params, workers=1)
    b = node_displacements(ref, dfm, mesh, params, workers=3)
    assert a == b
    assert [r.node_id for r in a] == list(range(mesh.n_nodes))


def test_fill_invalid_and_csv(tmp_path):
    mask = np.ones((40, 40), bool)
    mesh = mesh_structure(mask, GridSpec(20))
    res = [NodeDisplacement(i, *mesh.nodes[i], u=float(i), v=0.0, peak_r=0.9, valid=True)
           for i in range(mesh.n_nodes)]
    res[4].valid = False  # centre node touches every element
    fill_invalid(res, mesh)
    assert res[4].filled
    others = [r.u for r in res if r.node_id != 4]
    assert res[4].u == pytest.approx(np.mean(others))
    uv, ok = nodal_arrays(res)
    assert ok.all() and uv.shape == (9, 2)
    write_nodes_csv(tmp_path / "n.csv", res)
    back = read_nodes_csv(tmp_path / "n.csv")
    assert [r.filled for r in back] == [r.filled for r in res]
    assert back[4].u == pytest.approx(res[4].u, abs=1e-4)

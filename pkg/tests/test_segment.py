import itertools

import numpy as np
import pytest
from scipy import sparse
from scipy.sparse.csgraph import maximum_flow
from scipy.stats import multivariate_normal

from dispfield.errors import DimensionMismatchError, EmptyForegroundError
from dispfield.segment import apply_mask, compute_beta, fit_gmm, grabcut, iou, max_flow
from dispfield.segment.gmm import kmeans

from conftest import two_colour_scene


def random_network(r, n, density=0.4, integer=False):
    pairs = [(a, b) for a, b in itertools.combinations(range(n), 2) if r.random() < density]
    ea = np.array([p[0] for p in pairs], dtype=np.int64)
    eb = np.array([p[1] for p in pairs], dtype=np.int64)
    draw = (lambda k: r.integers(0, 10, k).astype(float)) if integer else (lambda k: r.random(k) * 5)
    return ea, eb, draw(len(pairs)), draw(len(pairs)), draw(n), draw(n)


def scipy_flow(n, ea, eb, cab, cba, cs, ct):
    """Integer max-flow through scipy's csgraph solver (source n, sink n + 1)."""
    rows, cols, caps = [], [], []
    for a, b, c1, c2 in zip(ea, eb, cab, cba):
        rows += [a, b]
        cols += [b, a]
        caps += [c1, c2]
    for i in range(n):
        rows += [n, i]
        cols += [i, n + 1]
        caps += [cs[i], ct[i]]
    g = sparse.coo_matrix((np.array(caps, dtype=np.int32), (rows, cols)), shape=(n + 2, n + 2)).tocsr()
    g.sum_duplicates()
    return maximum_flow(g, n, n + 1).flow_value


def test_maxflow_matches_scipy_on_integer_networks():
    r = np.random.default_rng(3)
    for _ in range(100):
        n = int(r.integers(2, 30))
        ea, eb, cab, cba, cs, ct = random_network(r, n, 0.3, integer=True)
        flow, side = max_flow(n, cs, ct, ea, eb, cab, cba)
        assert flow == scipy_flow(n, ea, eb, cab, cba, cs, ct)


def test_maxflow_cut_value_equals_flow():
    r = np.random.default_rng(4)
    n = 400
    ea, eb, cab, cba, cs, ct = random_network(r, n, 0.02)
    flow, side = max_flow(n, cs, ct, ea, eb, cab, cba)
    cut = cs[~side].sum() + ct[side].sum() + cab[side[ea] & ~side[eb]].sum() + cba[side[eb] & ~side[ea]].sum()
    assert flow == pytest.approx(cut, rel=1e-9)


def test_maxflow_rejects_negative():
    with pytest.raises(ValueError):
        max_flow(2, [1.0, -1.0], [0.0, 0.0])


def test_maxflow_terminals_only():
    flow, side = max_flow(3, [2.0, 0.0, 5.0], [1.0, 3.0, 5.0])
    assert flow == 6.0
    assert side.tolist() == [True, False, False]


def test_gmm_cost_matches_scipy(rng):
    x = np.vstack([rng.normal(0.2, 0.05, (300, 3)), rng.normal(0.7, 0.08, (300, 3))])
    g = fit_gmm(x, k=2, seed=0)
    c = g.component_costs(x[:50])
    for k in range(2):
        oracle = (-np.log(g.weights[k]) - multivariate_normal(g.means[k], g.covs[k]).logpdf(x[:50])
                  + 0.5 * g.eps * np.trace(np.linalg.inv(g.covs[k])))
        assert np.allclose(c[:, k], oracle, atol=1e-9)
    assert np.isclose(g.weights.sum(), 1.0)


def test_kmeans_is_seeded(rng):
    x = rng.random((200, 3))
    assert np.array_equal(kmeans(x, 4, seed=2), kmeans(x, 4, seed=2))


def test_fit_gmm_few_pixels():
    g = fit_gmm(np.array([[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]), k=5)
    assert g.k == 2


def test_beta_oracle(rng):
    img = rng.random((6, 7, 3))
    diffs = []
    for y, x in itertools.product(range(6), range(7)):
        for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
            if 0 <= y + dy < 6 and 0 <= x + dx < 7:
                diffs.append(np.sum((img[y, x] - img[y + dy, x + dx]) ** 2))
    assert compute_beta(img) == pytest.approx(1 / (2 * np.mean(diffs)), rel=1e-12)


def test_grabcut_two_colour_and_monotone():
    img, truth, rect = two_colour_scene()
    res = grabcut(img, rect, iterations=5)
    assert iou(res.mask, truth) >= 0.99
    e = res.energies
    assert all(b <= a + 1e-9 * abs(a) for a, b in zip(e, e[1:]))
    x, y, w, h = rect
    outside = np.ones_like(truth)
    outside[y:y + h, x:x + w] = False
    assert not res.mask[outside].any()


def test_grabcut_errors():
    img, _, _ = two_colour_scene()
    with pytest.raises(ValueError):
        grabcut(img, (70, 50, 30, 30))
    # a rectangle holding only background collapses to an empty foreground
    with pytest.raises(EmptyForegroundError):
        grabcut(img, (0, 0, 6, 6), iterations=3)


def test_apply_mask_and_iou():
    img = np.ones((3, 3, 3))
    m = np.eye(3, dtype=bool)
    assert apply_mask(img, m)[..., 0].tolist() == m.astype(float).tolist()
    with pytest.raises(DimensionMismatchError):
        apply_mask(img, np.ones((2, 2), bool))
    assert iou(m, m) == 1.0
    assert iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0

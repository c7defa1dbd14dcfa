"""Shared fixtures and generators for the test suite."""

import numpy as np
import pytest
from scipy import ndimage

# criterion id -> (passed, detail); filled by test_acceptance and echoed at the end of the run
ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"criterion {cid:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def speckle_image(shape, seed, blur=1.5):
    """Smoothed random texture in [0, 1]."""
    r = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(r.random(shape), blur)
    img -= img.min()
    return img / img.max()


def random_mask(shape, seed, smooth=6.0, level=0.55):
    """Blobby random foreground made by thresholding smoothed noise."""
    r = np.random.default_rng(seed)
    f = ndimage.gaussian_filter(r.random(shape), smooth)
    f = (f - f.min()) / (np.ptp(f) + 1e-12)
    return f > level


def random_homography(r, jitter=0.2, persp=1e-3):
    h = np.eye(3)
    h[:2, :2] += r.uniform(-jitter, jitter, (2, 2))
    h[:2, 2] = r.uniform(-40, 40, 2)
    h[2, :2] = r.uniform(-persp, persp, 2)
    return h / h[2, 2]


def two_colour_scene(h=60, w=80, seed=0, noise=0.02):
    """Red square on a blue background plus mild noise; returns (img, truth, rect)."""
    r = np.random.default_rng(seed)
    img = np.zeros((h, w, 3))
    img[...] = (0.1, 0.2, 0.8)
    truth = np.zeros((h, w), dtype=bool)
    truth[18:42, 25:55] = True
    img[truth] = (0.85, 0.15, 0.1)
    img = np.clip(img + r.normal(0, noise, img.shape), 0, 1)
    return img, truth, (15, 12, 48, 38)

"""Raster primitives shared by every stage.

Images are plain numpy arrays:

* gray image: ``float64`` array of shape ``(height, width)`` with values in [0, 1]
* RGB image: ``float64`` array of shape ``(height, width, 3)``
* binary mask: ``bool`` array of shape ``(height, width)``

Pixel coordinates are ``(x, y)`` with ``x`` the column and ``y`` the row
(downward). Integer coordinates address pixel centers.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionMismatchError, InvalidHomographyError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def as_gray(img):
    """Coerce to a float64 gray image, converting RGB input."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return to_grayscale(img)
    return img


def to_grayscale(img):
    img = np.asarray(img, dtype=np.float64)
    return img[..., 0] * LUMA_WEIGHTS[0] + img[..., 1] * LUMA_WEIGHTS[1] + img[..., 2] * LUMA_WEIGHTS[2]


def bilinear_sample(img, p):
    """Sample ``img`` at the real-valued pixel coordinate ``p = (x, y)``.

    Returns ``None`` when ``p`` falls outside ``[0, w-1] x [0, h-1]``.
    """
    x, y = float(p[0]), float(p[1])
    h, w = img.shape[:2]
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        return None
    x0 = min(int(np.floor(x)), max(w - 2, 0))
    y0 = min(int(np.floor(y)), max(h - 2, 0))
    fx, fy = x - x0, y - y0
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    return ((1 - fx) * (1 - fy) * img[y0, x0] + fx * (1 - fy) * img[y0, x1]
            + (1 - fx) * fy * img[y1, x0] + fx * fy * img[y1, x1])


def bilinear_sample_many(img, xs, ys):
    """Vectorised :func:`bilinear_sample`.

    Returns ``(values, inside)``; samples outside the image are 0 and flagged
    false in ``inside``.
    """
    h, w = img.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.where(inside, xs, 0.0)
    yc = np.where(inside, ys, 0.0)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    fx = xc - x0
    fy = yc - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    out = ((1 - fx) * (1 - fy) * img[y0, x0] + fx * (1 - fy) * img[y0, x1]
           + (1 - fx) * fy * img[y1, x0] + fx * fy * img[y1, x1])
    if img.ndim == 3:
        out = out * inside[..., None]
    else:
        out = out * inside
    return out, inside


# --------------------------------------------------------------------------
# projective helpers

def normalize_homography(h):
    """Scale ``h`` so that ``h[2, 2] == 1``, or to unit Frobenius norm when it is ~0."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (3, 3) or not np.all(np.isfinite(h)):
        raise InvalidHomographyError("homography must be a finite 3x3 matrix")
    if abs(h[2, 2]) > 1e-12 * np.linalg.norm(h):
        return h / h[2, 2]
    return h / np.linalg.norm(h)


def check_invertible(h, tol=1e-12):
    h = np.asarray(h, dtype=np.float64)
    scale = np.abs(h).max()
    if scale == 0 or abs(np.linalg.det(h / scale)) < tol:
        raise InvalidHomographyError("homography is singular")


def invert_homography(h):
    check_invertible(h)
    return normalize_homography(np.linalg.inv(h))


def apply_homography(h, pts):
    """Map an ``(n, 2)`` array (or a single ``(x, y)``) through ``h``."""
    pts = np.asarray(pts, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    hom = pts @ h[:, :2].T + h[:, 2]
    out = hom[:, :2] / hom[:, 2:3]
    return out[0] if single else out


def translation(tx, ty):
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def warp_perspective(img, h, out_width, out_height, return_validity=False):
    """Inverse-map ``img`` through ``h`` onto an ``out_height x out_width`` canvas.

    Output pixel ``q`` takes ``bilinear_sample(img, h^-1 q)``; pixels whose
    preimage lies outside the source are 0 and false in the validity mask.
    Works for gray and multi-channel arrays.
    """
    h = np.asarray(h, dtype=np.float64)
    check_invertible(h)
    hinv = np.linalg.inv(h)
    ys, xs = np.mgrid[0:out_height, 0:out_width].astype(np.float64)
    hx = hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]
    hy = hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]
    hw = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = np.where(hw > 0, hx / hw, -1.0)
        sy = np.where(hw > 0, hy / hw, -1.0)
    out, valid = bilinear_sample_many(np.asarray(img, dtype=np.float64), sx, sy)
    if return_validity:
        return out, valid
    return out


# --------------------------------------------------------------------------
# masks

def threshold(img, t):
    if not 0.0 <= t <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return np.asarray(img) > t


def dilate3x3(mask):
    """Binary dilation with a 3x3 square; outside the image counts as false."""
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = m
    out = np.zeros_like(m)
    for dy in range(3):
        for dx in range(3):
            out |= padded[dy:dy + h, dx:dx + w]
    return out


def mask_and(a, b):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a & b


# --------------------------------------------------------------------------
# file I/O

def load_image(path):
    """Load PNG / PGM as float64 in [0, 1]; gray files give 2-D arrays, colour gives RGB."""
    with Image.open(path) as im:
        if im.mode in ("L", "P", "1", "I", "I;16"):
            if im.mode in ("I", "I;16"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
                return np.clip(arr, 0.0, 1.0)
            return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def to_uint8(img):
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_image(path, img):
    """Save a gray or RGB float image as 8-bit. ``.pgm`` paths are written as P5."""
    path = Path(path)
    arr = to_uint8(img)
    if path.suffix.lower() == ".pgm" and arr.ndim != 2:
        raise ValueError("PGM output requires a gray image")
    Image.fromarray(arr).save(path)


def load_mask(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def save_mask(path, mask):
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr).save(path)

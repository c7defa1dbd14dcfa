"""Scale-invariant keypoints and 128-D gradient-histogram descriptors.

Difference-of-Gaussians extrema are refined by a quadratic fit, rejected
on low contrast and on principal-curvature ratio, assigned one or more
dominant orientations and described by a 4x4 grid of 8-bin orientation
histograms.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import ImageTooSmallError
from ..imgcore import as_gray

TWO_PI = 2.0 * math.pi
DESC_GRID = 4
DESC_BINS = 8
DESC_DIM = DESC_GRID * DESC_GRID * DESC_BINS
DESC_CLIP = 0.2
ORI_BINS = 36
ORI_PEAK_RATIO = 0.8
ORI_SIGMA_FACTOR = 1.5
ORI_RADIUS_FACTOR = 3.0 * ORI_SIGMA_FACTOR
DESC_SCALE_FACTOR = 3.0
IMG_BORDER = 5
MAX_INTERP_STEPS = 5


@dataclass
class DetectorParams:
    n_octaves: int | None = None  # None: derived from image size, never below 3
    scales_per_octave: int = 3
    sigma: float = 1.6
    assumed_blur: float = 0.5
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    max_features: int | None = None


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float
    response: float
    octave: int = 0
    layer: float = 0.0

    @property
    def position(self):
        return (self.x, self.y)


def _octave_count(shape, params):
    if params.n_octaves is not None:
        return max(int(params.n_octaves), 1)
    return max(3, int(math.log2(min(shape))) - 3)


def build_pyramid(img, params):
    """Gaussian and DoG pyramids: lists (per octave) of ``(s+3, h, w)`` and ``(s+2, h, w)`` stacks."""
    s = params.scales_per_octave
    k = 2.0 ** (1.0 / s)
    sig_prev = [params.sigma * k ** (i - 1) for i in range(s + 3)]
    increments = [math.sqrt(max(params.sigma ** 2 - params.assumed_blur ** 2, 0.01))]
    for i in range(1, s + 3):
        increments.append(math.sqrt(sig_prev[i] ** 2 * k * k - sig_prev[i] ** 2))
    base = ndimage.gaussian_filter(img, increments[0], mode="nearest")
    gauss, dogs = [], []
    for o in range(_octave_count(img.shape, params)):
        if o > 0:
            base = gauss[-1][s][::2, ::2]
        if min(base.shape) < 2 * IMG_BORDER + 3:
            break
        layers = [base]
        for i in range(1, s + 3):
            layers.append(ndimage.gaussian_filter(layers[-1], increments[i], mode="nearest"))
        stack = np.stack(layers)
        gauss.append(stack)
        dogs.append(stack[1:] - stack[:-1])
    return gauss, dogs


def _derivs(d, l, y, x):
    dx = (d[l, y, x + 1] - d[l, y, x - 1]) * 0.5
    dy = (d[l, y + 1, x] - d[l, y - 1, x]) * 0.5
    ds = (d[l + 1, y, x] - d[l - 1, y, x]) * 0.5
    v2 = d[l, y, x] * 2
    dxx = d[l, y, x + 1] + d[l, y, x - 1] - v2
    dyy = d[l, y + 1, x] + d[l, y - 1, x] - v2
    dss = d[l + 1, y, x] + d[l - 1, y, x] - v2
    dxy = (d[l, y + 1, x + 1] - d[l, y + 1, x - 1] - d[l, y - 1, x + 1] + d[l, y - 1, x - 1]) * 0.25
    dxs = (d[l + 1, y, x + 1] - d[l + 1, y, x - 1] - d[l - 1, y, x + 1] + d[l - 1, y, x - 1]) * 0.25
    dys = (d[l + 1, y + 1, x] - d[l + 1, y - 1, x] - d[l - 1, y + 1, x] + d[l - 1, y - 1, x]) * 0.25
    grad = np.array([dx, dy, ds])
    hess = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
    return grad, hess


def _refine(dog, l, y, x, params):
    """Quadratic sub-pixel/sub-scale localisation; None when rejected."""
    s = params.scales_per_octave
    n_layers, h, w = dog.shape
    for _ in range(MAX_INTERP_STEPS):
        grad, hess = _derivs(dog, l, y, x)
        try:
            off = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(off) < 0.5):
            break
        if not np.all(np.isfinite(off)) or np.any(np.abs(off) > 1e6):
            return None
        x += int(round(off[0]))
        y += int(round(off[1]))
        l += int(round(off[2]))
        if l < 1 or l > s or x < IMG_BORDER or x >= w - IMG_BORDER or y < IMG_BORDER or y >= h - IMG_BORDER:
            return None
    else:
        return None
    contrast = dog[l, y, x] + 0.5 * float(grad @ off)
    if abs(contrast) * s < params.contrast_threshold:
        return None
    dxx, dyy, dxy = hess[0, 0], hess[1, 1], hess[0, 1]
    tr = dxx + dyy
    det = dxx * dyy - dxy * dxy
    r = params.edge_ratio
    if det <= 0 or tr * tr * r >= (r + 1) ** 2 * det:
        return None
    return x + off[0], y + off[1], l, off[2], abs(contrast)


def _gradients(g):
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    gx[:, 1:-1] = g[:, 2:] - g[:, :-2]
    gy[1:-1, :] = g[2:, :] - g[:-2, :]
    return np.hypot(gx, gy), np.mod(np.arctan2(gy, gx), TWO_PI)


def _orientations(mag, ang, xi, yi, sigma_oct):
    h, w = mag.shape
    radius = int(round(ORI_RADIUS_FACTOR * sigma_oct))
    x0, x1 = max(xi - radius, 1), min(xi + radius, w - 2)
    y0, y1 = max(yi - radius, 1), min(yi + radius, h - 2)
    if x0 > x1 or y0 > y1:
        return []
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    wsig = ORI_SIGMA_FACTOR * sigma_oct
    weight = np.exp(-((xx - xi) ** 2 + (yy - yi) ** 2) / (2 * wsig * wsig))
    m = mag[y0:y1 + 1, x0:x1 + 1] * weight
    bins = np.rint(ang[y0:y1 + 1, x0:x1 + 1] * ORI_BINS / TWO_PI).astype(int) % ORI_BINS
    hist = np.bincount(bins.ravel(), weights=m.ravel(), minlength=ORI_BINS)
    smooth = (6 * hist + 4 * (np.roll(hist, 1) + np.roll(hist, -1))
              + np.roll(hist, 2) + np.roll(hist, -2)) / 16.0
    peak = smooth.max()
    if peak <= 0:
        return []
    out = []
    for b in range(ORI_BINS):
        left, right = smooth[(b - 1) % ORI_BINS], smooth[(b + 1) % ORI_BINS]
        c = smooth[b]
        if c > left and c > right and c >= ORI_PEAK_RATIO * peak:
            denom = left - 2 * c + right
            shift = 0.5 * (left - right) / denom if denom != 0 else 0.0
            theta = ((b + shift) * TWO_PI / ORI_BINS) % TWO_PI
            out.append(theta)
    return out


def _descriptor(mag, ang, x, y, sigma_oct, theta):
    h, w = mag.shape
    d, n = DESC_GRID, DESC_BINS
    hist_width = DESC_SCALE_FACTOR * sigma_oct
    radius = int(round(hist_width * math.sqrt(2) * (d + 1) * 0.5))
    radius = min(radius, int(math.hypot(w, h)))
    xi, yi = int(round(x)), int(round(y))
    x0, x1 = max(xi - radius, 1), min(xi + radius, w - 2)
    y0, y1 = max(yi - radius, 1), min(yi + radius, h - 2)
    if x0 > x1 or y0 > y1:
        return None
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    dx = (xx - xi).ravel().astype(np.float64)
    dy = (yy - yi).ravel().astype(np.float64)
    cos_t, sin_t = math.cos(theta) / hist_width, math.sin(theta) / hist_width
    x_rot = dx * cos_t + dy * sin_t
    y_rot = -dx * sin_t + dy * cos_t
    rbin = y_rot + d / 2 - 0.5
    cbin = x_rot + d / 2 - 0.5
    keep = (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d)
    if not np.any(keep):
        return None
    rbin, cbin = rbin[keep], cbin[keep]
    weight = np.exp(-(x_rot[keep] ** 2 + y_rot[keep] ** 2) / (0.5 * d * d))
    m = mag[y0:y1 + 1, x0:x1 + 1].ravel()[keep] * weight
    obin = np.mod(ang[y0:y1 + 1, x0:x1 + 1].ravel()[keep] - theta, TWO_PI) * (n / TWO_PI)

    r0 = np.floor(rbin).astype(int)
    c0 = np.floor(cbin).astype(int)
    o0 = np.floor(obin).astype(int)
    fr, fc, fo = rbin - r0, cbin - c0, obin - o0
    hist = np.zeros((d + 2) * (d + 2) * n)
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            for do, wo in ((0, 1 - fo), (1, fo)):
                idx = ((r0 + dr + 1) * (d + 2) + (c0 + dc + 1)) * n + (o0 + do) % n
                hist += np.bincount(idx, weights=m * wr * wc * wo, minlength=hist.size)
    vec = hist.reshape(d + 2, d + 2, n)[1:d + 1, 1:d + 1].ravel()
    norm = np.linalg.norm(vec)
    if norm <= 0:
        return None
    vec = np.minimum(vec / norm, DESC_CLIP)
    norm = np.linalg.norm(vec)
    return vec / norm


def detect_features(img, params=None):
    """Detect keypoints and compute descriptors.

    Returns ``(keypoints, descriptors)`` with ``descriptors`` an ``(n, 128)``
    array of unit vectors. An empty result is valid.
    """
    params = params or DetectorParams()
    img = as_gray(img)
    if min(img.shape) < 32:
        raise ImageTooSmallError(f"image must be at least 32x32, got {img.shape[1]}x{img.shape[0]}")
    s = params.scales_per_octave
    gauss, dogs = build_pyramid(img, params)
    threshold = 0.5 * params.contrast_threshold / s
    keypoints, descs = [], []
    for o, (gstack, dog) in enumerate(zip(gauss, dogs)):
        scale_up = 2.0 ** o
        maxf = ndimage.maximum_filter(dog, size=3, mode="nearest")
        minf = ndimage.minimum_filter(dog, size=3, mode="nearest")
        cand = ((dog == maxf) & (dog > threshold)) | ((dog == minf) & (dog < -threshold))
        cand[0] = cand[-1] = False
        cand[:, :IMG_BORDER] = cand[:, -IMG_BORDER:] = False
        cand[:, :, :IMG_BORDER] = cand[:, :, -IMG_BORDER:] = False
        grads = {}
        seen = set()
        for l, y, x in zip(*np.nonzero(cand)):
            res = _refine(dog, int(l), int(y), int(x), params)
            if res is None:
                continue
            xr, yr, lr, ls, resp = res
            key = (int(round(xr * 4)), int(round(yr * 4)), lr)
            if key in seen:
                continue
            seen.add(key)
            sigma_oct = params.sigma * 2.0 ** ((lr + ls) / s)
            if lr not in grads:
                grads[lr] = _gradients(gstack[lr])
            mag, ang = grads[lr]
            for theta in _orientations(mag, ang, int(round(xr)), int(round(yr)), sigma_oct):
                vec = _descriptor(mag, ang, xr, yr, sigma_oct, theta)
                if vec is None:
                    continue
                keypoints.append(Keypoint(
                    x=float(xr * scale_up), y=float(yr * scale_up),
                    scale=float(sigma_oct * scale_up), orientation=float(theta),
                    response=float(resp), octave=o, layer=float(lr + ls)))
                descs.append(vec)
    desc = np.array(descs).reshape(-1, DESC_DIM)
    if params.max_features is not None and len(keypoints) > params.max_features:
        order = sorted(range(len(keypoints)), key=lambda i: (-keypoints[i].response, i))
        order = sorted(order[:params.max_features])
        keypoints = [keypoints[i] for i in order]
        desc = desc[order]
    return keypoints, desc


def write_keypoints_csv(path, keypoints):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "scale", "orientation"])
        for k in keypoints:
            w.writerow([f"{k.x:.4f}", f"{k.y:.4f}", f"{k.scale:.4f}", f"{k.orientation:.6f}"])


def write_matches_csv(path, matches):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index_a", "index_b", "distance", "ratio"])
        for m in matches:
            w.writerow([m.index_a, m.index_b, f"{m.distance:.6f}", f"{m.ratio:.6f}"])

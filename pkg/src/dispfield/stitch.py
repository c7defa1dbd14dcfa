"""Multi-view stitching into one full-field image.

Each view may first be re-projected to remove foreshortening (pure-rotation
model ``H = K R K^-1``). Adjacent views are registered pairwise, the pairwise
maps are chained into the first view's frame, every view is inverse-warped
onto a common canvas and overlapping pixels are averaged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .errors import InvalidHomographyError, NoConsensusError, RegistrationError, DegenerateConfigurationError
from .imgcore import (
    apply_homography,
    as_gray,
    check_invertible,
    normalize_homography,
    translation,
    warp_perspective,
)
from .registration import DetectorParams, build_kdtree, detect_features, match_features, ransac_homography


@dataclass
class CameraPose:
    rotation: tuple  # axis-angle, radians
    translation: tuple  # mm; absorbed by registration
    focal: float  # px
    cx: float
    cy: float

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError("focal length must be positive")

    def intrinsics(self):
        return np.array([[self.focal, 0.0, self.cx], [0.0, self.focal, self.cy], [0.0, 0.0, 1.0]])


@dataclass
class RegistrationParams:
    detector: DetectorParams = field(default_factory=DetectorParams)
    ratio_threshold: float = 0.75
    ransac_threshold_px: float = 3.0
    ransac_iters: int = 2000
    seed: int = 0


@dataclass
class Panorama:
    image: np.ndarray
    validity: np.ndarray
    transforms: list  # per view, into panorama canvas
    overlap_count: np.ndarray
    offset: tuple = (0, 0)  # canvas position of the first view's origin
    pair_inliers: list = field(default_factory=list)

    @property
    def shape(self):
        return self.image.shape[:2]

    def transforms_json(self):
        return {
            "width": int(self.image.shape[1]),
            "height": int(self.image.shape[0]),
            "offset": [int(self.offset[0]), int(self.offset[1])],
            "transforms": [np.asarray(t).tolist() for t in self.transforms],
            "pair_inliers": [int(n) for n in self.pair_inliers],
        }


def rotation_homography(pose):
    k = pose.intrinsics()
    r = Rotation.from_rotvec(np.asarray(pose.rotation, dtype=np.float64)).as_matrix()
    try:
        kinv = np.linalg.inv(k)
    except np.linalg.LinAlgError as exc:
        raise InvalidHomographyError("singular intrinsics") from exc
    return normalize_homography(k @ r @ kinv)


def foreshortening_correct(img, pose):
    """Re-project ``img`` onto an imaging plane rotated by the pose's rotation."""
    h = rotation_homography(pose)
    return warp_perspective(img, h, img.shape[1], img.shape[0])


def register_pair(a, b, params=None):
    """Homography mapping view ``b``'s pixel frame into view ``a``'s frame.

    Returns ``(H, n_inliers)``.
    """
    params = params or RegistrationParams()
    kp_a, desc_a = detect_features(as_gray(a), params.detector)
    kp_b, desc_b = detect_features(as_gray(b), params.detector)
    if len(kp_a) < 4 or len(kp_b) < 4:
        raise NoConsensusError("too few keypoints to register")
    # query b against a tree over a: Match.index_a indexes b, index_b indexes a
    matches = match_features(build_kdtree(desc_a), desc_b, params.ratio_threshold)
    h, inliers = ransac_homography(matches, kp_b, kp_a, threshold_px=params.ransac_threshold_px,
                                   max_iters=params.ransac_iters, seed=params.seed)
    return h, len(inliers)


def compose_chain(pairwise):
    """Chain adjacent maps ``H_{i,i+1}`` (view i+1 -> view i) into maps to view 0."""
    out = [np.eye(3)]
    for i, h in enumerate(pairwise):
        try:
            check_invertible(h)
        except InvalidHomographyError as exc:
            raise InvalidHomographyError(f"pairwise map {i} is singular") from exc
        out.append(normalize_homography(out[-1] @ np.asarray(h, dtype=np.float64)))
    return out


def canvas_layout(transforms, sizes):
    """Integer canvas offset and size covering every warped view.

    ``sizes`` holds ``(width, height)`` per view. Returns
    ``(offset_xy, width, height)`` such that all warped corners land at
    non-negative coordinates once shifted by ``offset_xy``.
    """
    corners = []
    for t, (w, h) in zip(transforms, sizes):
        c = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)
        corners.append(apply_homography(t, c))
    corners = np.vstack(corners)
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    ox = int(math.ceil(-lo[0] - 1e-9)) if lo[0] < 0 else 0
    oy = int(math.ceil(-lo[1] - 1e-9)) if lo[1] < 0 else 0
    width = int(math.floor(hi[0] + ox + 1e-9)) + 1
    height = int(math.floor(hi[1] + oy + 1e-9)) + 1
    return (ox, oy), width, height


def blend_average(warped):
    """Average overlapping sources; ``warped`` is a list of ``(image, validity)``."""
    if not warped:
        raise ValueError("nothing to blend")
    shape = warped[0][0].shape
    total = np.zeros(shape, dtype=np.float64)
    count = np.zeros(shape[:2], dtype=np.int64)
    for img, valid in warped:
        if img.shape != shape:
            raise ValueError("all warped views must share canvas dimensions")
        v = np.asarray(valid, dtype=bool)
        total += img * (v[..., None] if img.ndim == 3 else v)
        count += v
    denom = np.maximum(count, 1)
    image = total / (denom[..., None] if total.ndim == 3 else denom)
    return Panorama(image=image, validity=count >= 1, transforms=[], overlap_count=count)


def render_views(views, transforms, width, height):
    """Warp views through known canvas transforms and blend them."""
    warped = [warp_perspective(np.asarray(v, dtype=np.float64), t, width, height, return_validity=True)
              for v, t in zip(views, transforms)]
    pano = blend_average(warped)
    pano.transforms = [np.asarray(t) for t in transforms]
    return pano


def stitch_all(views, poses=None, params=None):
    """Stitch an ordered list of overlapping views (gray or RGB) into a panorama.

    Registration runs on luminance; the blend keeps the input channels.
    """
    if not views:
        raise ValueError("need at least one view")
    views = [np.asarray(v, dtype=np.float64) for v in views]
    if poses is not None:
        views = [foreshortening_correct(v, p) for v, p in zip(views, poses)]
    pairwise, inliers = [], []
    for i in range(len(views) - 1):
        try:
            h, n = register_pair(views[i], views[i + 1], params)
        except (NoConsensusError, DegenerateConfigurationError) as exc:
            raise RegistrationError(i, exc) from exc
        pairwise.append(h)
        inliers.append(n)
    chain = compose_chain(pairwise)
    sizes = [(v.shape[1], v.shape[0]) for v in views]
    (ox, oy), width, height = canvas_layout(chain, sizes)
    shift = translation(ox, oy)
    transforms = [normalize_homography(shift @ t) for t in chain]
    pano = render_views(views, transforms, width, height)
    pano.offset = (ox, oy)
    pano.pair_inliers = inliers
    return pano


def save_transforms(path, pano):
    with open(path, "w") as fh:
        json.dump(pano.transforms_json(), fh, indent=2)


def load_transforms(path):
    with open(path) as fh:
        data = json.load(fh)
    data["transforms"] = [np.array(t, dtype=np.float64) for t in data["transforms"]]
    return data


def read_pose_csv(path):
    """Pose file rows: ``view, rx, ry, rz, tx, ty, tz, f, cx, cy``; returned in view order."""
    import csv

    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append((int(rec["view"]), CameraPose(
                rotation=(float(rec["rx"]), float(rec["ry"]), float(rec["rz"])),
                translation=(float(rec["tx"]), float(rec["ty"]), float(rec["tz"])),
                focal=float(rec["f"]), cx=float(rec["cx"]), cy=float(rec["cy"]))))
    rows.sort(key=lambda r: r[0])
    return [p for _, p in rows]


# --------------------------------------------------------------------------
# fiducial targets and the conversion coefficient

@dataclass
class Dot:
    x: float
    y: float
    diameter_px: float


def find_dots(img, dark_threshold=0.3, min_area=40, max_area=5000, exclude=None):
    """Locate dark circular targets.

    Centre and equivalent diameter come from a darkness-weighted area that
    is insensitive to edge blur. ``exclude`` is an optional mask of pixels
    to ignore (e.g. the structure).
    """
    img = as_gray(img)
    dark = img < dark_threshold
    if exclude is not None:
        dark &= ~np.asarray(exclude, dtype=bool)
    labels, n = ndimage.label(dark)
    dots = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        comp = labels[sl] == i
        area = int(comp.sum())
        hh = sl[0].stop - sl[0].start
        ww = sl[1].stop - sl[1].start
        if not min_area <= area <= max_area:
            continue
        if max(hh, ww) > 1.3 * min(hh, ww) or area < 0.6 * hh * ww:
            continue
        pad = max(hh, ww) // 2 + 3
        y0, y1 = max(sl[0].start - pad, 0), min(sl[0].stop + pad, img.shape[0])
        x0, x1 = max(sl[1].start - pad, 0), min(sl[1].stop + pad, img.shape[1])
        patch = img[y0:y1, x0:x1]
        full = np.zeros(patch.shape, dtype=bool)
        full[sl[0].start - y0:sl[0].stop - y0, sl[1].start - x0:sl[1].stop - x0] = comp
        grown = ndimage.binary_dilation(full, iterations=3)
        ring = ndimage.binary_dilation(grown, iterations=3) & ~grown
        if not ring.any():
            continue
        bg = float(np.median(patch[ring]))
        core = ndimage.binary_erosion(full, iterations=2)
        fg = float(np.median(patch[core])) if core.any() else float(patch[full].min())
        if bg - fg <= 0.05:
            continue
        wgt = np.clip((bg - patch) / (bg - fg), 0.0, 1.0) * grown
        total = wgt.sum()
        yy, xx = np.mgrid[y0:y1, x0:x1]
        dots.append(Dot(x=float((wgt * xx).sum() / total), y=float((wgt * yy).sum() / total),
                        diameter_px=float(2.0 * math.sqrt(total / math.pi))))
    dots.sort(key=lambda d: (round(d.y / 10), d.x))
    return dots


def conversion_coefficient(dots, diameter_mm):
    """Global mm/px coefficient (median over targets) and its relative spread."""
    if not dots:
        raise ValueError("no fiducial targets found")
    per_dot = np.array([diameter_mm / d.diameter_px for d in dots])
    coef = float(np.median(per_dot))
    spread = float((per_dot.max() - per_dot.min()) / coef)
    return coef, spread

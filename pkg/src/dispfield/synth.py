"""Synthetic cantilever scenes with exact ground truth.

A speckled beam is drawn on a smooth background, deflected by the
Euler-Bernoulli cantilever curve and cut into overlapping, slightly
distorted views. Every stage of the pipeline can then be checked against a
closed form.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegenerateConfigurationError
from .field import DisplacementField
from .imgcore import apply_homography, bilinear_sample_many
from .registration.homography import homography_from_4

SPECKLE_BLUR = 2.0  # px; gives speckle grains of roughly 5-7 px
BEAM_BAND = 0.5  # half-width of the anti-aliased edge ramp, px


@dataclass
class BeamSpec:
    length: float = 2250.0  # mm
    height: float = 250.0  # mm
    modulus: float = 3000.0  # N/mm^2
    inertia: float = 20.0 * 250.0 ** 3 / 12.0  # mm^4, 20 mm thick section
    load: float = 0.0  # N, tip load

    def __post_init__(self):
        for name in ("length", "height", "modulus", "inertia"):
            if not getattr(self, name) > 0:
                raise ValueError(f"beam {name} must be positive")
        if self.load < 0:
            raise ValueError("tip load must be non-negative")

    @property
    def stiffness(self):
        return self.modulus * self.inertia


@dataclass
class SceneSpec:
    width: int = 2000
    height: int = 600
    mm_per_px: float = 1.25
    beam_x: int = 100  # first beam pixel column
    beam_y: int = 200  # first beam pixel row
    seed: int = 7
    background: str = "gradient"  # or "noise"
    noise_sigma: float = 0.0  # optional luminance noise on rendered images
    dot_diameter_mm: float = 30.0
    dot_rows: tuple = (70, 530)
    dot_spacing: int = 250

    def __post_init__(self):
        if not self.mm_per_px > 0:
            raise ValueError("scene scale must be positive")
        if self.background not in ("gradient", "noise"):
            raise ValueError("background must be 'gradient' or 'noise'")


def cantilever_deflection(x, spec):
    """Downward deflection (mm) at ``x`` mm from the fixed end."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0) or np.any(x > spec.length):
        raise ValueError("x must lie within [0, L]")
    return spec.load * x * x * (3.0 * spec.length - x) / (6.0 * spec.stiffness)


def tip_load_for(tip_px, beam, scene):
    """Tip load that produces a tip deflection of ``tip_px`` pixels."""
    tip_mm = tip_px * scene.mm_per_px
    return tip_mm * 3.0 * beam.stiffness / beam.length ** 3


def beam_extent_px(beam, scene):
    """Beam rectangle ``(x0, y0, w, h)`` in integer pixels."""
    w = int(round(beam.length / scene.mm_per_px))
    h = int(round(beam.height / scene.mm_per_px))
    return scene.beam_x, scene.beam_y, w, h


class BeamModel:
    """Deflection in pixels along the beam with a smooth extension past its ends.

    The fixed end sits at the left pixel edge ``beam_x - 0.5``. Left of it
    the deflection is 0; right of the tip the curve continues along its
    tangent.
    """

    def __init__(self, beam, scene):
        self.beam, self.scene = beam, scene
        self.x_fixed = scene.beam_x - 0.5
        self.length_px = beam.length / scene.mm_per_px

    def v_px(self, x):
        s = self.scene.mm_per_px
        t = (np.asarray(x, dtype=np.float64) - self.x_fixed) * s
        tc = np.clip(t, 0.0, self.beam.length)
        w = cantilever_deflection(tc, self.beam)
        slope = self.beam.load * self.beam.length ** 2 / (2.0 * self.beam.stiffness)
        w = w + np.where(t > self.beam.length, (t - self.beam.length) * slope, 0.0)
        return w / s


# --------------------------------------------------------------------------
# rendering

def speckle(shape, seed, blur=SPECKLE_BLUR):
    """Seeded binary noise, smoothed and stretched to [0.05, 0.95]."""
    rng = np.random.default_rng(seed)
    raw = (rng.random(shape) > 0.5).astype(np.float64)
    s = ndimage.gaussian_filter(raw, blur, mode="reflect")
    lo, hi = np.percentile(s, [1, 99])
    return np.clip(0.05 + 0.9 * (s - lo) / (hi - lo), 0.0, 1.0)


def background_image(scene):
    h, w = scene.height, scene.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    gx, gy = xx / max(w - 1, 1), yy / max(h - 1, 1)
    if scene.background == "gradient":
        r = 0.15 + 0.15 * gx
        g = 0.35 + 0.15 * gy
        b = 0.75 + 0.15 * (1.0 - gx)
    else:
        rng = np.random.default_rng(scene.seed + 1)
        n = ndimage.gaussian_filter(rng.random((h, w)), 6.0)
        n = (n - n.mean()) / (n.std() + 1e-12)
        r = np.clip(0.2 + 0.05 * n, 0, 1)
        g = np.clip(0.4 + 0.05 * n, 0, 1)
        b = np.clip(0.8 + 0.05 * n, 0, 1)
    img = np.stack([r, g, b], axis=-1)
    _draw_dots(img, scene)
    return img


def dot_centres(scene):
    out = []
    for y in scene.dot_rows:
        for x in range(scene.dot_spacing // 2, scene.width, scene.dot_spacing):
            out.append((float(x), float(y)))
    return out


def _draw_dots(img, scene):
    """Dark anti-aliased discs of the configured physical diameter."""
    rad = 0.5 * scene.dot_diameter_mm / scene.mm_per_px
    h, w = img.shape[:2]
    for cx, cy in dot_centres(scene):
        x0, x1 = max(int(cx - rad - 2), 0), min(int(cx + rad + 3), w)
        y0, y1 = max(int(cy - rad - 2), 0), min(int(cy + rad + 3), h)
        if x1 <= x0 or y1 <= y0:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        d = np.hypot(xx - cx, yy - cy)
        cover = np.clip(rad - d + 0.5, 0.0, 1.0)[..., None]
        img[y0:y1, x0:x1] = img[y0:y1, x0:x1] * (1 - cover) + 0.03 * cover


def _coverage(t, lo, hi):
    """Box-filter coverage of a pixel centred at ``t`` by the interval ``[lo, hi]``."""
    return np.clip(np.minimum(t - lo, hi - t) + BEAM_BAND, 0.0, 1.0)


class BeamRenderer:
    """Draws the beam in its reference or deflected state.

    The texture is a smooth function of material coordinates (cubic spline
    of a speckle raster), so the deflected beam is rendered directly rather
    than by resampling the reference image.
    """

    def __init__(self, beam, scene):
        self.beam, self.scene = beam, scene
        self.model = BeamModel(beam, scene)
        x0, y0, w, h = beam_extent_px(beam, scene)
        if x0 < 0 or y0 < 0 or x0 + w > scene.width or y0 + h > scene.height:
            raise DegenerateConfigurationError("beam does not fit on the canvas")
        self.rect = (x0, y0, w, h)
        self.pad = 8
        tex = speckle((h + 2 * self.pad, w + 2 * self.pad), scene.seed)
        self.coeffs = ndimage.spline_filter(tex, order=3, mode="mirror")
        self.bg = background_image(scene)

    def texture(self, mx, my):
        x0, y0 = self.rect[:2]
        coords = np.array([my - y0 + self.pad, mx - x0 + self.pad])
        return ndimage.map_coordinates(self.coeffs, coords, order=3, prefilter=False, mode="mirror")

    def render(self, deflected=True):
        """RGB image and the beam's coverage in ``[0, 1]``."""
        x0, y0, w, h = self.rect
        sc = self.scene
        xs = np.arange(sc.width, dtype=np.float64)
        ys = np.arange(sc.height, dtype=np.float64)
        shift = self.model.v_px(xs) if deflected else np.zeros_like(xs)
        # material row of each canvas pixel
        my = ys[:, None] - shift[None, :]
        mx = np.broadcast_to(xs[None, :], my.shape)
        alpha = _coverage(mx, x0 - 0.5, x0 + w - 0.5) * _coverage(my, y0 - 0.5, y0 + h - 0.5)
        img = self.bg.copy()
        rows, cols = np.nonzero(alpha > 0)
        tex = self.texture(mx[rows, cols], my[rows, cols])
        a = alpha[rows, cols][:, None]
        img[rows, cols] = a * tex[:, None] + (1 - a) * img[rows, cols]
        if sc.noise_sigma > 0:
            rng = np.random.default_rng(sc.seed + (101 if deflected else 100) + int(self.beam.load * 1000) % 997)
            img = np.clip(img + rng.normal(0.0, sc.noise_sigma, img.shape), 0.0, 1.0)
        return img, alpha


def render_beam(beam, scene, deflected=False):
    """``(rgb, mask)`` of the beam; the mask holds pixel centres inside the beam."""
    img, alpha = BeamRenderer(beam, scene).render(deflected=deflected)
    return img, alpha >= 0.5


@dataclass
class GroundTruth:
    field: DisplacementField
    mask: np.ndarray
    coefficient: float


def true_mask(beam, scene):
    x0, y0, w, h = beam_extent_px(beam, scene)
    m = np.zeros((scene.height, scene.width), dtype=bool)
    m[y0:y0 + h, x0:x0 + w] = True
    return m


def analytic_field(beam, scene, spacing=10):
    """Exact displacement (px) on the sample grid, defined on the beam mask."""
    mask = true_mask(beam, scene)
    xs = np.arange(0, scene.width, spacing, dtype=np.float64)
    ys = np.arange(0, scene.height, spacing, dtype=np.float64)
    valid = mask[np.ix_(ys.astype(int), xs.astype(int))]
    model = BeamModel(beam, scene)
    v = np.broadcast_to(model.v_px(xs)[None, :], valid.shape) * valid
    u = np.zeros_like(v)
    return GroundTruth(DisplacementField(xs, ys, u, np.array(v), valid, units="px"), mask, scene.mm_per_px)


def truth_at(beam, scene, x, y):
    """Exact ``(u, v, inside)`` in px at master-frame points."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x0, y0, w, h = beam_extent_px(beam, scene)
    inside = (x >= x0 - 0.5) & (x <= x0 + w - 0.5) & (y >= y0 - 0.5) & (y <= y0 + h - 0.5)
    v = BeamModel(beam, scene).v_px(x)
    return np.zeros_like(v), v, inside


def warp_by_field(img, u, v):
    """Output pixel ``q`` samples ``img`` at ``q - d(q)`` (bilinear).

    ``u`` and ``v`` are per-pixel displacement arrays (or scalars); where
    they vanish the output equals the input exactly.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = np.clip(xx - np.broadcast_to(u, (h, w)), 0, w - 1)
    sy = np.clip(yy - np.broadcast_to(v, (h, w)), 0, h - 1)
    out, _ = bilinear_sample_many(img, sx, sy)
    return out


# --------------------------------------------------------------------------
# views

def view_layout(width, n, overlap):
    """``(view_width, starts)`` for ``n`` crops overlapping by ``overlap``."""
    if n < 1:
        raise ValueError("need at least one view")
    if n == 1:
        return width, [0]
    if not 0.1 < overlap < 0.9:
        raise ValueError("overlap must lie in (0.1, 0.9)")
    vw = int(math.floor(width / (n - (n - 1) * overlap)))
    step = vw * (1.0 - overlap)
    starts = [int(round(i * step)) for i in range(n - 1)] + [width - vw]
    if vw < 32 or any(b <= a for a, b in zip(starts, starts[1:])):
        raise DegenerateConfigurationError("views cannot be laid out")
    return vw, starts


def random_distortions(n, view_size, seed, max_shift=4.0):
    """Small projective warps (corner jitter up to ``max_shift`` px); view 0 stays identity."""
    rng = np.random.default_rng(seed)
    w, h = view_size
    corners = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)
    out = [np.eye(3)]
    for _ in range(n - 1):
        moved = corners + rng.uniform(-max_shift, max_shift, corners.shape)
        out.append(homography_from_4(corners, moved))
    return out


@dataclass
class ViewSet:
    views: list
    starts: list
    view_width: int
    distortions: list = field(default_factory=list)

    def view_to_master(self, i):
        """Homography from view ``i`` pixels to master pixels."""
        t = np.array([[1.0, 0.0, self.starts[i]], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        return t @ np.linalg.inv(self.distortions[i])


def slice_views(panorama, n, overlap, distortions=None):
    """Crop ``n`` overlapping full-height views and warp each by its distortion.

    View ``i`` pixel ``p`` shows master position ``start_i + D_i^-1 p``;
    samples falling off the master are clamped to its edge.
    """
    pano = np.asarray(panorama, dtype=np.float64)
    h, w = pano.shape[:2]
    vw, starts = view_layout(w, n, overlap)
    if distortions is None:
        distortions = [np.eye(3)] * n
    if len(distortions) != n:
        raise ValueError("one distortion per view is required")
    vs = ViewSet([], starts, vw, [np.asarray(d, dtype=np.float64) for d in distortions])
    yy, xx = np.mgrid[0:h, 0:vw].astype(np.float64)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    for i in range(n):
        src = apply_homography(vs.view_to_master(i), pts)
        sx = np.clip(src[:, 0], 0, w - 1).reshape(h, vw)
        sy = np.clip(src[:, 1], 0, h - 1).reshape(h, vw)
        view, _ = bilinear_sample_many(pano, sx, sy)
        vs.views.append(view)
    return vs


# --------------------------------------------------------------------------
# load cases

DEFAULT_TIPS_PX = (5.0, 10.0, 15.0, 20.0)


@dataclass
class SynthCase:
    name: str
    tip_px: float
    beam: BeamSpec
    image: np.ndarray


def load_cases(scene, tips_px=DEFAULT_TIPS_PX, base=None):
    """Reference image plus one deflected image per tip deflection."""
    base = base or BeamSpec()
    ref, _ = BeamRenderer(base, scene).render(deflected=False)
    cases = []
    for k, tip in enumerate(tips_px, start=1):
        beam = BeamSpec(base.length, base.height, base.modulus, base.inertia, tip_load_for(tip, base, scene))
        img, _ = BeamRenderer(beam, scene).render(deflected=True)
        cases.append(SynthCase(f"case{k}", float(tip), beam, img))
    return ref, cases


def scene_json(scene, beam, tips_px, extra=None):
    data = {"scene": asdict(scene), "beam": asdict(beam), "tips_px": list(tips_px),
            "beam_rect_px": list(beam_extent_px(beam, scene))}
    data["scene"]["dot_rows"] = list(scene.dot_rows)
    if extra:
        data.update(extra)
    return json.dumps(data, indent=2, sort_keys=True)

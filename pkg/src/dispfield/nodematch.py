"""Node displacement by zero-mean normalised cross-correlation (ZNCC).

A square template around each mesh node in the reference panorama is slid
over a search region in the deformed panorama. The correlation surface is
computed with one FFT cross-correlation for the numerator and integral
images for the window means and variances; ``zncc_naive`` is the direct
double loop used to check it.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import UndefinedCorrelationError
from .imgcore import as_gray

# a window whose luminance variance is below this counts as flat
VAR_EPS = 1e-12


@dataclass
class Template:
    patch: np.ndarray
    center: tuple  # integer (x, y) in the reference image

    @property
    def mean(self):
        return float(self.patch.mean())

    @property
    def half(self):
        return self.patch.shape[1] // 2, self.patch.shape[0] // 2


def extract_template(img, center, size):
    """Template of odd ``size`` (int or ``(w, h)``) centred on integer ``center``.

    Returns ``None`` when the patch would leave the image.
    """
    img = as_gray(img)
    tw, th = (size, size) if np.isscalar(size) else size
    if tw % 2 == 0 or th % 2 == 0:
        raise ValueError("template dimensions must be odd")
    cx, cy = int(center[0]), int(center[1])
    hx, hy = tw // 2, th // 2
    if cx - hx < 0 or cy - hy < 0 or cx + hx >= img.shape[1] or cy + hy >= img.shape[0]:
        return None
    return Template(img[cy - hy:cy + hy + 1, cx - hx:cx + hx + 1].copy(), (cx, cy))


def zncc(template, window):
    """Correlation of two equal-size patches; raises on a flat operand."""
    t = np.asarray(template.patch if isinstance(template, Template) else template, dtype=np.float64)
    s = np.asarray(window, dtype=np.float64)
    if t.shape != s.shape:
        raise ValueError("window and template dimensions differ")
    dt = t - t.mean()
    ds = s - s.mean()
    nt = np.sqrt(np.sum(dt * dt))
    ns = np.sqrt(np.sum(ds * ds))
    if nt ** 2 <= VAR_EPS * t.size or ns ** 2 <= VAR_EPS * s.size:
        raise UndefinedCorrelationError("zero-variance operand")
    return float(np.sum(ds * dt) / (ns * nt))


def zncc_naive(t, s):
    """Direct double-loop evaluation; reference for the fast path."""
    m, n = len(t), len(t[0])
    t_av = sum(t[i][j] for i in range(m) for j in range(n)) / (m * n)
    s_av = sum(s[i][j] for i in range(m) for j in range(n)) / (m * n)
    num = st = ss = 0.0
    for i in range(m):
        for j in range(n):
            a = s[i][j] - s_av
            b = t[i][j] - t_av
            num += a * b
            ss += a * a
            st += b * b
    if st <= VAR_EPS * m * n or ss <= VAR_EPS * m * n:
        raise UndefinedCorrelationError("zero-variance operand")
    return num / (np.sqrt(ss) * np.sqrt(st))


@dataclass
class CorrelationSurface:
    """``values[dy + radius, dx + radius]`` is R at integer offset ``(dx, dy)``."""

    values: np.ndarray
    defined: np.ndarray
    radius: int
    clipped: bool = False

    def at(self, dx, dy):
        r = self.radius
        if not self.defined[dy + r, dx + r]:
            return None
        return float(self.values[dy + r, dx + r])


def _box_sum(img, hx, hy):
    """Sum over every ``(2hy+1) x (2hx+1)`` window fully inside ``img`` (valid mode)."""
    sat = np.zeros((img.shape[0] + 1, img.shape[1] + 1))
    sat[1:, 1:] = img.cumsum(0).cumsum(1)
    h, w = 2 * hy + 1, 2 * hx + 1
    return sat[h:, w:] - sat[:-h, w:] - sat[h:, :-w] + sat[:-h, :-w]


def correlate(template, deformed, search_radius):
    """ZNCC at every integer offset within ``search_radius`` of the template centre.

    Offsets whose window would leave the deformed image are undefined and
    ``clipped`` is set.
    """
    img = as_gray(deformed)
    r = int(search_radius)
    hx, hy = template.half
    cx, cy = template.center
    size = 2 * r + 1
    values = np.zeros((size, size))
    defined = np.zeros((size, size), dtype=bool)
    # window centres that keep the full window inside the image
    x_lo, x_hi = max(cx - r, hx), min(cx + r, img.shape[1] - 1 - hx)
    y_lo, y_hi = max(cy - r, hy), min(cy + r, img.shape[0] - 1 - hy)
    clipped = (x_lo, x_hi, y_lo, y_hi) != (cx - r, cx + r, cy - r, cy + r)
    if x_hi < x_lo or y_hi < y_lo:
        return CorrelationSurface(values, defined, r, clipped=True)
    region = img[y_lo - hy:y_hi + hy + 1, x_lo - hx:x_hi + hx + 1]
    region = region - region.mean()  # conditions the variance sums
    t = template.patch - template.mean
    tn = np.sqrt(np.sum(t * t))
    n = t.size
    num = fftconvolve(region, t[::-1, ::-1], mode="valid")
    s1 = _box_sum(region, hx, hy)
    s2 = _box_sum(region * region, hx, hy)
    var = np.maximum(s2 - s1 * s1 / n, 0.0)
    ok = (var > VAR_EPS * n) & (tn * tn > VAR_EPS * n)
    vals = np.zeros_like(num)
    vals[ok] = num[ok] / (np.sqrt(var[ok]) * tn)
    vals = np.clip(vals, -1.0, 1.0)
    sl = (slice(y_lo - cy + r, y_hi - cy + r + 1), slice(x_lo - cx + r, x_hi - cx + r + 1))
    values[sl] = vals
    defined[sl] = ok
    return CorrelationSurface(values, defined, r, clipped=clipped)


def correlate_naive(template, deformed, search_radius):
    """Per-offset loop over :func:`zncc`; the semantic oracle for :func:`correlate`."""
    img = as_gray(deformed)
    r = int(search_radius)
    hx, hy = template.half
    cx, cy = template.center
    size = 2 * r + 1
    values = np.zeros((size, size))
    defined = np.zeros((size, size), dtype=bool)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            x, y = cx + dx, cy + dy
            if x - hx < 0 or y - hy < 0 or x + hx >= img.shape[1] or y + hy >= img.shape[0]:
                continue
            try:
                values[dy + r, dx + r] = zncc(template, img[y - hy:y + hy + 1, x - hx:x + hx + 1])
                defined[dy + r, dx + r] = True
            except UndefinedCorrelationError:
                pass
    return CorrelationSurface(values, defined, r)


def peak(surface):
    """``((dx, dy), R)`` of the maximum defined entry, or ``None``.

    Ties go to the smallest offset magnitude, then row-major order.
    """
    if not surface.defined.any():
        return None
    r = surface.radius
    best = surface.values[surface.defined].max()
    rows, cols = np.nonzero(surface.defined & (surface.values == best))
    dy, dx = rows - r, cols - r
    order = np.lexsort((cols, rows, dx * dx + dy * dy))
    k = order[0]
    return (int(dx[k]), int(dy[k])), float(best)


def _parabola(rm, r0, rp):
    denom = 2.0 * (rm - 2.0 * r0 + rp)
    if not denom < -1e-15:
        return None  # flat or not a maximum
    return float(np.clip((rm - rp) / denom, -0.5, 0.5))


def subpixel_refine(surface, offset):
    """Per-axis parabola fit around an integer peak.

    Returns ``((du, dv), refined)``; ``refined`` is False and the shift is
    ``(0, 0)`` on the border, with undefined neighbours or a flat fit.
    """
    r = surface.radius
    dx, dy = offset
    i, j = dy + r, dx + r
    if not (0 < i < 2 * r and 0 < j < 2 * r):
        return (0.0, 0.0), False
    if not surface.defined[i - 1:i + 2, j - 1:j + 2].all():
        return (0.0, 0.0), False
    v = surface.values
    du = _parabola(v[i, j - 1], v[i, j], v[i, j + 1])
    dv = _parabola(v[i - 1, j], v[i, j], v[i + 1, j])
    if du is None or dv is None:
        return (0.0, 0.0), False
    return (du, dv), True


@dataclass
class NodeDisplacement:
    node_id: int
    x: float
    y: float
    u: float = 0.0
    v: float = 0.0
    peak_r: float | None = None
    subpixel: bool = False
    valid: bool = False
    filled: bool = False
    note: str = ""


@dataclass
class MatchParams:
    template_size: int = 81
    search_radius: int = 50
    quality_threshold: float = 0.8
    subpixel: bool = False


def match_node(reference, deformed, node_id, xy, params):
    res = NodeDisplacement(node_id, float(xy[0]), float(xy[1]))
    center = (int(np.floor(xy[0] + 0.5)), int(np.floor(xy[1] + 0.5)))
    tmpl = extract_template(reference, center, params.template_size)
    if tmpl is None:
        res.note = "template outside reference"
        return res
    if tmpl.patch.var() <= VAR_EPS:
        res.note = "flat template"
        return res
    surf = correlate(tmpl, deformed, params.search_radius)
    pk = peak(surf)
    if pk is None:
        res.note = "no defined correlation"
        return res
    (dx, dy), best = pk
    du = dv = 0.0
    if params.subpixel:
        (du, dv), res.subpixel = subpixel_refine(surf, (dx, dy))
    # the template sits on the rounded node position; the offset carries over unchanged
    res.u, res.v, res.peak_r = dx + du, dy + dv, best
    res.valid = best >= params.quality_threshold
    if not res.valid:
        res.note = "below quality threshold"
    elif surf.clipped:
        res.note = "search region clipped"
    return res


def node_displacements(reference, deformed, mesh, params=None, workers=1):
    """Match every mesh node; results are ordered by node id."""
    params = params or MatchParams()
    ref = as_gray(reference)
    dfm = as_gray(deformed)
    if ref.shape != dfm.shape:
        raise ValueError("reference and deformed panoramas must share a frame")
    jobs = list(enumerate(mesh.nodes))

    def run(job):
        return match_node(ref, dfm, job[0], job[1], params)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, jobs))
    return [run(j) for j in jobs]


def fill_invalid(results, mesh):
    """Give invalid nodes the mean of valid nodes sharing an element with them.

    Nodes without any valid neighbour stay invalid. Filled nodes are flagged.
    """
    neigh = [set() for _ in results]
    for el in mesh.elements:
        for a in el.ids:
            neigh[a].update(el.ids)
    valid = np.array([r.valid for r in results])
    for i, r in enumerate(results):
        if r.valid:
            continue
        src = [j for j in sorted(neigh[i]) if j != i and valid[j]]
        if not src:
            continue
        r.u = float(np.mean([results[j].u for j in src]))
        r.v = float(np.mean([results[j].v for j in src]))
        r.filled = True
    return results


def nodal_arrays(results):
    """``(uv (n, 2), usable (n,))`` where usable is valid or filled."""
    uv = np.array([(r.u, r.v) for r in results], dtype=np.float64).reshape(-1, 2)
    ok = np.array([r.valid or r.filled for r in results], dtype=bool)
    return uv, ok


NODE_COLUMNS = ["node_id", "x", "y", "u_px", "v_px", "peak_r", "subpixel", "valid", "filled"]


def write_nodes_csv(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(NODE_COLUMNS)
        for r in results:
            w.writerow([r.node_id, f"{r.x:g}", f"{r.y:g}", f"{r.u:.4f}", f"{r.v:.4f}",
                        "" if r.peak_r is None else f"{r.peak_r:.6f}",
                        int(r.subpixel), int(r.valid), int(r.filled)])


def read_nodes_csv(path):
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(NodeDisplacement(
                node_id=int(rec["node_id"]), x=float(rec["x"]), y=float(rec["y"]),
                u=float(rec["u_px"]), v=float(rec["v_px"]),
                peak_r=float(rec["peak_r"]) if rec["peak_r"] else None,
                subpixel=bool(int(rec["subpixel"])), valid=bool(int(rec["valid"])),
                filled=bool(int(rec["filled"]))))
    return out

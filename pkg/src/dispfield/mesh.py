"""Rectangle + triangle meshing of a structure foreground.

A full-image lattice is laid down, the 3x3-dilated mask keeps cells that
touch the structure, cells fully inside stay 4-node rectangles and cells
cut by the mask contour are clipped along their edges and fan-split into
triangles.

Boundary clipping: along each cell edge the mask is read pixel by pixel
and every state change becomes an intersection point half-way between the
two pixel centres. Walking the cell perimeter, each run of inside
points (entry point, inside corners, exit point) closes into one convex
polygon; two inside runs in one cell stay separate polygons (the
"separate diagonals" resolution of saddle configurations). All these
points lie on the cell perimeter, in perimeter order, so every polygon is
convex.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import EmptyForegroundError, SelfIntersectionError
from .imgcore import dilate3x3

log = logging.getLogger(__name__)

RECT4 = "Rect4"
TRI3 = "Tri3"
INSIDE, BOUNDARY, OUTSIDE = "inside", "boundary", "outside"
MIN_POLYGON_AREA = 4.0
MAX_VERTICES = 5
SNAP = 0.25


@dataclass(frozen=True)
class GridSpec:
    cell: int
    origin: tuple = (0, 0)

    def __post_init__(self):
        if int(self.cell) != self.cell or self.cell < 8:
            raise ValueError("cell size must be an integer >= 8 px")
        if any(int(o) != o for o in self.origin):
            raise ValueError("grid origin must be integer pixel coordinates")


@dataclass
class Element:
    kind: str
    ids: tuple
    interior: bool = False


@dataclass
class Mesh:
    nodes: np.ndarray  # (n, 2) x, y
    elements: list
    cell: int
    dropped: list = field(default_factory=list)  # (row, col, area) of discarded fragments

    @property
    def n_nodes(self):
        return len(self.nodes)

    def element_xy(self, e):
        return self.nodes[list(self.elements[e].ids)]

    def to_json(self):
        return {
            "cell": int(self.cell),
            "nodes": [[float(x), float(y)] for x, y in self.nodes],
            "elements": [{"kind": el.kind, "ids": [int(i) for i in el.ids], "interior": bool(el.interior)}
                         for el in self.elements],
            "dropped": [list(d) for d in self.dropped],
        }

    @classmethod
    def from_json(cls, data):
        return cls(
            nodes=np.array(data["nodes"], dtype=np.float64).reshape(-1, 2),
            elements=[Element(e["kind"], tuple(e["ids"]), e.get("interior", e["kind"] == RECT4))
                      for e in data["elements"]],
            cell=int(data.get("cell", 0)),
            dropped=[tuple(d) for d in data.get("dropped", [])],
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# --------------------------------------------------------------------------
# lattice

def lattice_lines(extent, cell, origin):
    start = origin % cell
    lines = {0, extent}
    lines.update(range(start, extent, cell))
    return np.array(sorted(lines), dtype=np.int64)


def full_grid(width, height, spec):
    """Lattice nodes (row-major) and rectangular cells over the whole image.

    Returns ``(nodes, cells, xs, ys)``: ``nodes`` is ``(n, 2)``, ``cells`` a
    list of ``(row, col)``; the cell ``(r, c)`` spans ``xs[c]..xs[c+1]`` by
    ``ys[r]..ys[r+1]``. The last line sits at the image width/height so edge
    cells are clipped.
    """
    xs = lattice_lines(int(width), int(spec.cell), int(spec.origin[0]))
    ys = lattice_lines(int(height), int(spec.cell), int(spec.origin[1]))
    gx, gy = np.meshgrid(xs, ys)
    nodes = np.column_stack([gx.ravel(), gy.ravel()]).astype(np.float64)
    cells = [(r, c) for r in range(len(ys) - 1) for c in range(len(xs) - 1)]
    return nodes, cells, xs, ys


def _mask_at(mask, x, y):
    h, w = mask.shape
    # the closing lattice line sits at the image width/height and reads the last pixel
    x = w - 1 if x == w else x
    y = h - 1 if y == h else y
    return 0 <= x < w and 0 <= y < h and bool(mask[y, x])


def _integral(mask):
    sat = np.zeros((mask.shape[0] + 1, mask.shape[1] + 1), dtype=np.int64)
    sat[1:, 1:] = np.cumsum(np.cumsum(mask, axis=0), axis=1)
    return sat


def _count(sat, x0, x1, y0, y1):
    """True pixels with centres in [x0, x1] x [y0, y1] (clipped to the image)."""
    h, w = sat.shape[0] - 1, sat.shape[1] - 1
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, w - 1), min(y1, h - 1)
    if x1 < x0 or y1 < y0:
        return 0, 0
    total = (x1 - x0 + 1) * (y1 - y0 + 1)
    true = sat[y1 + 1, x1 + 1] - sat[y0, x1 + 1] - sat[y1 + 1, x0] + sat[y0, x0]
    return int(true), int(total)


def classify_cells(cells, xs, ys, mask_dilated):
    """Label each cell inside / boundary / outside against the (dilated) mask."""
    mask = np.asarray(mask_dilated, dtype=bool)
    sat = _integral(mask)
    labels = []
    for r, c in cells:
        x0, x1, y0, y1 = int(xs[c]), int(xs[c + 1]), int(ys[r]), int(ys[r + 1])
        true, total = _count(sat, x0, x1, y0, y1)
        corners = [_mask_at(mask, x, y) for x, y in ((x0, y0), (x1, y0), (x1, y1), (x0, y1))]
        if true == 0:
            labels.append(OUTSIDE)
        elif all(corners) and true == total:
            labels.append(INSIDE)
        else:
            labels.append(BOUNDARY)
    return labels


# --------------------------------------------------------------------------
# boundary tracing

def _snap(v):
    return round(v / SNAP) * SNAP


def _edge_crossings(mask, fixed, lo, hi, horizontal):
    """Crossing coordinates along an edge, in increasing order of the free coordinate."""
    if horizontal:
        states = [_mask_at(mask, p, fixed) for p in range(lo, hi + 1)]
    else:
        states = [_mask_at(mask, fixed, p) for p in range(lo, hi + 1)]
    return [_snap(lo + k + 0.5) for k in range(len(states) - 1) if states[k] != states[k + 1]]


def trace_boundary(x0, y0, x1, y1, mask_dilated, refine=True):
    """Clip the cell ``[x0, x1] x [y0, y1]`` against the mask contour.

    Returns a list of polygons (each a list of ``(x, y)`` with positive
    signed area) and a list of ``(polygon, area)`` fragments dropped for
    being smaller than ``MIN_POLYGON_AREA``. With ``refine`` polygons gain
    interior vertices where the mask bulges past a closing chord (see
    :func:`_refine_chords`), and components enclosed by the cell get a
    polygon of their own.
    """
    mask = np.asarray(mask_dilated, dtype=bool)
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    states = [_mask_at(mask, x, y) for x, y in corners]
    # perimeter walk: top L->R, right T->B, bottom R->L, left B->T
    top = [(x, y0) for x in _edge_crossings(mask, y0, x0, x1, True)]
    right = [(x1, y) for y in _edge_crossings(mask, x1, y0, y1, False)]
    bottom = [(x, y1) for x in reversed(_edge_crossings(mask, y1, x0, x1, True))]
    left = [(x0, y) for y in reversed(_edge_crossings(mask, x0, y0, y1, False))]
    walk = []  # (point, is_corner)
    for corner, crossings in zip(corners, (top, right, bottom, left)):
        walk.append((corner, True))
        walk.extend((p, False) for p in crossings)

    n_cross = sum(1 for _, is_corner in walk if not is_corner)
    if n_cross == 0 and all(states):
        return [[tuple(map(float, c)) for c in corners]], []

    # state just after each walk entry
    inside = []
    state = states[0]
    for p, is_corner in walk:
        if is_corner:
            state = states[corners.index(p)]
        else:
            state = not state
        inside.append(state)

    runs = []
    n = len(walk)
    for first in range(n):
        if walk[first][1] or not inside[first]:
            continue  # runs begin at an entry crossing
        run = [walk[first][0]]
        k = (first + 1) % n
        while walk[k][1]:
            run.append(walk[k][0])
            k = (k + 1) % n
        run.append(walk[k][0])
        runs.append([(float(x), float(y)) for x, y in run])

    # runs whose pixels connect inside the cell form one polygon
    win, labels = _cell_labels(mask, x0, y0, x1, y1)
    groups = {}
    for run in runs:
        lab = _label_at_crossing(labels, win, run[0])
        key = lab if lab else ("run", len(groups))
        groups.setdefault(key, []).append(run)

    polygons, dropped = [], []
    for key, members in groups.items():
        poly = []
        for run in members:
            poly.extend(run)
        if refine and not isinstance(key, tuple):
            poly = _refine_chords(labels, win, key, members)
        area = polygon_area(poly)
        if area < MIN_POLYGON_AREA:
            dropped.append((poly, area))
            continue
        polygons.append(poly)
    if refine and labels.size:
        # components that never reach the cell edges are invisible to the perimeter walk
        seen = {k for k in groups if not isinstance(k, tuple)}
        for lab in range(1, int(labels.max()) + 1):
            if lab in seen:
                continue
            poly = _island_polygon(labels, win, lab)
            if poly is None:
                continue
            area = polygon_area(poly)
            if area < MIN_POLYGON_AREA:
                dropped.append((poly, area))
                continue
            polygons.append(poly)
    if refine and _polygons_overlap(polygons):
        # refinement vertices reached into a neighbouring fragment: use plain chords here
        return trace_boundary(x0, y0, x1, y1, mask, refine=False)
    return polygons, dropped


def _point_in_polygon(p, poly):
    x, y = p
    inside = False
    n = len(poly)
    for k in range(n):
        (xa, ya), (xb, yb) = poly[k], poly[(k + 1) % n]
        if (ya > y) != (yb > y) and x < xa + (y - ya) * (xb - xa) / (yb - ya):
            inside = not inside
    return inside


def _polygons_overlap(polys):
    for i in range(len(polys)):
        for j in range(i + 1, len(polys)):
            a, b = polys[i], polys[j]
            for ka in range(len(a)):
                for kb in range(len(b)):
                    if _segments_cross(a[ka], a[(ka + 1) % len(a)], b[kb], b[(kb + 1) % len(b)]):
                        return True
            if _point_in_polygon(a[0], b) or _point_in_polygon(b[0], a):
                return True
    return False


def _cell_labels(mask, x0, y0, x1, y1):
    """4-connected components of the mask pixels with centres inside the cell."""
    h, w = mask.shape
    cx0, cy0 = max(x0, 0), max(y0, 0)
    cx1, cy1 = min(x1, w - 1), min(y1, h - 1)
    win = (cx0, cy0, cx1, cy1, x0, y0, x1, y1)
    if cx1 < cx0 or cy1 < cy0:
        return win, np.zeros((0, 0), dtype=np.int32)
    labels, _ = ndimage.label(mask[cy0:cy1 + 1, cx0:cx1 + 1])
    return win, labels


def _label_at_crossing(labels, win, p):
    cx0, cy0, cx1, cy1 = win[:4]
    for qx in (int(np.floor(p[0])), int(np.ceil(p[0]))):
        for qy in (int(np.floor(p[1])), int(np.ceil(p[1]))):
            if cx0 <= qx <= cx1 and cy0 <= qy <= cy1 and labels[qy - cy0, qx - cx0]:
                return int(labels[qy - cy0, qx - cx0])
    return 0


def _refine_chords(labels, win, label, members):
    """Polygon of the runs in ``members`` with apex vertices on the closing chords.

    Every chord first gets its own apex (when the mask bulges past it);
    after that the deepest remaining sub-chord is split until the polygon
    has ``MAX_VERTICES`` vertices.
    """
    poly, chords = [], []  # chords: index of the vertex starting a closing segment
    for i, run in enumerate(members):
        poly.extend(run)
        nxt = members[(i + 1) % len(members)]
        apex = _chord_apex(labels, win, label, run[-1], nxt[0])
        if apex is not None:
            poly.append(apex)
            chords += [len(poly) - 2, len(poly) - 1]
        else:
            chords.append(len(poly) - 1)
    while len(poly) < MAX_VERTICES:
        best = None
        for c in chords:
            a, b = poly[c], poly[(c + 1) % len(poly)]
            hit = _chord_apex(labels, win, label, a, b, within=True, with_depth=True)
            if hit is not None and (best is None or hit[1] > best[1]):
                best = (c, hit[1], hit[0])
        if best is None:
            break
        c, _, apex = best
        trial = poly[:c + 1] + [apex] + poly[c + 1:]
        if not is_simple(trial):
            break
        poly = trial
        chords = [k if k <= c else k + 1 for k in chords] + [c + 1]
    return poly


def _island_polygon(labels, win, label):
    """Convex hull of an enclosed component's pixel squares, thinned to ``MAX_VERTICES``.

    Vertices are removed smallest-triangle first. Returns ``None`` for
    components touching the cell edges.
    """
    cx0, cy0, _, _, x0, y0, x1, y1 = win
    yy, xx = np.nonzero(labels == label)
    if len(xx) == 0:
        return None
    px, py = xx + cx0, yy + cy0
    if px.min() <= x0 or px.max() >= x1 or py.min() <= y0 or py.max() >= y1:
        return None
    corners = np.concatenate([np.column_stack([px + dx, py + dy])
                              for dx in (-0.5, 0.5) for dy in (-0.5, 0.5)])
    hull = _convex_hull(np.unique(corners, axis=0))
    while len(hull) > MAX_VERTICES:
        n = len(hull)
        costs = [abs(polygon_area([hull[k - 1], hull[k], hull[(k + 1) % n]])) for k in range(n)]
        hull.pop(int(np.argmin(costs)))
    poly = [(float(_snap(x)), float(_snap(y))) for x, y in hull]
    if polygon_area(poly) < 0:
        poly.reverse()
    return poly


def _convex_hull(pts):
    """Monotone-chain hull, counter-clockwise in (x, y), collinear points dropped."""
    pts = sorted(map(tuple, pts))

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and ((out[-1][0] - out[-2][0]) * (p[1] - out[-2][1])
                                     - (out[-1][1] - out[-2][1]) * (p[0] - out[-2][0])) <= 0:
                out.pop()
            out.append(p)
        return out

    lower, upper = half(pts), half(reversed(pts))
    return lower[:-1] + upper[:-1]


def _chord_apex(labels, win, label, exit_pt, entry_pt, min_depth=1.0, within=False, with_depth=False):
    """Point of component ``label`` farthest beyond the chord ``exit_pt -> entry_pt``.

    The point is snapped and must lie strictly inside the cell so that no
    neighbouring cell sees a new node on a shared edge; returns ``None``
    when the bulge is shallower than ``min_depth``.
    """
    cx0, cy0, _, _, x0, y0, x1, y1 = win
    ex, ey = exit_pt
    dx, dy = entry_pt[0] - ex, entry_pt[1] - ey
    length = np.hypot(dx, dy)
    if length == 0:
        return None
    yy, xx = np.nonzero(labels == label)
    if len(xx) == 0:
        return None
    nx, ny = dy / length, -dx / length  # right-hand normal: outside the polygon
    px = xx + cx0 + 0.5 * np.sign(nx)
    py = yy + cy0 + 0.5 * np.sign(ny)
    depth = (px - ex) * nx + (py - ey) * ny
    if within:
        # sub-chords only look at pixels whose foot point falls on the segment
        t = ((px - ex) * dx + (py - ey) * dy) / (length * length)
        depth = np.where((t > 0) & (t < 1), depth, -np.inf)
    k = int(np.argmax(depth))
    if depth[k] < min_depth:
        return None
    ax, ay = _snap(px[k]), _snap(py[k])
    if not (x0 < ax < x1 and y0 < ay < y1):
        return None
    if with_depth:
        return (float(ax), float(ay)), float(depth[k])
    return (float(ax), float(ay))


# --------------------------------------------------------------------------
# triangulation

def polygon_area(poly):
    """Signed shoelace area (positive for the node order used by elements)."""
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(a, b, c, d):
    def orient(p, q, r):
        v = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    def on_seg(p, q, r):
        return min(p[0], q[0]) - 1e-12 <= r[0] <= max(p[0], q[0]) + 1e-12 and \
            min(p[1], q[1]) - 1e-12 <= r[1] <= max(p[1], q[1]) + 1e-12

    o1, o2, o3, o4 = orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b)
    if o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4):
        return True
    return ((o1 == 0 and on_seg(a, b, c)) or (o2 == 0 and on_seg(a, b, d))
            or (o3 == 0 and on_seg(c, d, a)) or (o4 == 0 and on_seg(c, d, b)))


def is_simple(poly):
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_cross(a, b, poly[j], poly[(j + 1) % n]):
                return False
    return True


def triangulate(polygon):
    """Fan-triangulate a simple polygon from its first vertex.

    Returns triangles as index triples into ``polygon`` with positive signed
    area. Zero-area fan slivers (collinear vertices) are skipped. Falls back
    to ear clipping when the fan is not valid (non-convex input).
    """
    poly = [tuple(map(float, p)) for p in polygon]
    n = len(poly)
    if n < 3:
        raise ValueError("polygon needs at least 3 vertices")
    if not is_simple(poly):
        raise SelfIntersectionError("polygon is self-intersecting")
    order = list(range(n))
    if polygon_area(poly) < 0:
        order.reverse()
    # apex 0 first; another apex only when vertex 0 sits on a straight run
    # (a zero-area fan triangle would leave a hanging node on the long edge)
    for apex in range(n):
        rot = order[apex:] + order[:apex]
        areas = [polygon_area([poly[rot[0]], poly[rot[k]], poly[rot[k + 1]]]) for k in range(1, n - 1)]
        if all(a > 1e-12 for a in areas):
            return [(rot[0], rot[k], rot[k + 1]) for k in range(1, n - 1)]
    pts = [poly[i] for i in order]
    return [tuple(order[i] for i in tri) for tri in _ear_clip(pts)]


def _ear_clip(pts):
    idx = list(range(len(pts)))
    tris = []
    guard = 0
    while len(idx) > 3 and guard < 10000:
        guard += 1
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            if polygon_area([pts[i0], pts[i1], pts[i2]]) <= 1e-12:
                continue
            if any(_in_triangle(pts[j], pts[i0], pts[i1], pts[i2]) for j in idx if j not in (i0, i1, i2)):
                continue
            tris.append((i0, i1, i2))
            idx.pop(k)
            break
        else:
            break
    if len(idx) == 3 and polygon_area([pts[i] for i in idx]) > 1e-12:
        tris.append(tuple(idx))
    return tris


def _in_triangle(p, a, b, c):
    d1 = polygon_area([p, a, b])
    d2 = polygon_area([p, b, c])
    d3 = polygon_area([p, c, a])
    return d1 >= 0 and d2 >= 0 and d3 >= 0


# --------------------------------------------------------------------------
# end to end

def mesh_structure(mask, spec):
    """Mesh the foreground of ``mask`` (dilated once with a 3x3 kernel first)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyForegroundError("mask has no foreground pixels")
    h, w = mask.shape
    dil = dilate3x3(mask)
    lattice, cells, xs, ys = full_grid(w, h, spec)
    labels = classify_cells(cells, xs, ys, dil)
    nx = len(xs)

    nodes = [tuple(p) for p in lattice]
    extra = {}  # snapped point -> node id
    raw_elements = []
    dropped = []

    def node_id(p):
        x, y = p
        if float(x).is_integer() and float(y).is_integer():
            cx = np.searchsorted(xs, x)
            cy = np.searchsorted(ys, y)
            if cx < len(xs) and xs[cx] == x and cy < len(ys) and ys[cy] == y:
                return int(cy * nx + cx)
        key = (_snap(x), _snap(y))
        if key not in extra:
            extra[key] = len(nodes)
            nodes.append(key)
        return extra[key]

    for (r, c), label in zip(cells, labels):
        if label == OUTSIDE:
            continue
        ids = (r * nx + c, r * nx + c + 1, (r + 1) * nx + c + 1, (r + 1) * nx + c)
        if label == INSIDE:
            raw_elements.append(Element(RECT4, ids, True))
            continue
        polys, small = trace_boundary(int(xs[c]), int(ys[r]), int(xs[c + 1]), int(ys[r + 1]), dil)
        for _, area in small:
            dropped.append((r, c, area))
        for poly in polys:
            pids = [node_id(p) for p in poly]
            for tri in triangulate(poly):
                raw_elements.append(Element(TRI3, tuple(pids[i] for i in tri), False))
    if dropped:
        log.info("dropped %d boundary fragments below %.1f px^2", len(dropped), MIN_POLYGON_AREA)
    if not raw_elements:
        raise EmptyForegroundError("no mesh elements cover the foreground")

    used = sorted({i for e in raw_elements for i in e.ids})
    remap = {old: new for new, old in enumerate(used)}
    node_arr = np.array([nodes[i] for i in used], dtype=np.float64)
    elements = [Element(e.kind, tuple(remap[i] for i in e.ids), e.interior) for e in raw_elements]
    return Mesh(nodes=node_arr, elements=elements, cell=int(spec.cell), dropped=dropped)


def element_area(mesh, e):
    return polygon_area(mesh.element_xy(e))


def total_area(mesh):
    return sum(element_area(mesh, e) for e in range(len(mesh.elements)))


def conformity_report(mesh, samples_per_px=2):
    """Check conformity: interior overlap, edge multiplicity and hanging nodes.

    Returns a dict with ``overlap_samples`` (sample points covered by more
    than one element interior), ``bad_edges`` (edges used by more than two
    elements) and ``hanging_nodes`` (nodes lying strictly inside another
    element's edge).
    """
    edges = {}
    for k, el in enumerate(mesh.elements):
        ids = el.ids
        for a, b in zip(ids, ids[1:] + ids[:1]):
            edges.setdefault((min(a, b), max(a, b)), []).append(k)
    bad_edges = [e for e, users in edges.items() if len(users) > 2]

    hanging = 0
    pts = mesh.nodes
    for (a, b) in edges:
        pa, pb = pts[a], pts[b]
        lo = np.minimum(pa, pb) - 1e-9
        hi = np.maximum(pa, pb) + 1e-9
        cand = np.flatnonzero(np.all((pts >= lo) & (pts <= hi), axis=1))
        for c in cand:
            if c in (a, b):
                continue
            cross = (pb[0] - pa[0]) * (pts[c][1] - pa[1]) - (pb[1] - pa[1]) * (pts[c][0] - pa[0])
            if abs(cross) < 1e-9:
                hanging += 1

    if len(pts):
        x_lo, y_lo = pts.min(axis=0)
        x_hi, y_hi = pts.max(axis=0)
        step = 1.0 / samples_per_px
        # offset sample lattice so no sample falls on a 0.25-snapped edge
        gx = np.arange(x_lo + 0.1 * step + 0.0137, x_hi, step)
        gy = np.arange(y_lo + 0.1 * step + 0.0291, y_hi, step)
        cover = np.zeros((len(gy), len(gx)), dtype=np.int32)
        for k in range(len(mesh.elements)):
            xy = mesh.element_xy(k)
            c0, c1 = np.searchsorted(gx, [xy[:, 0].min(), xy[:, 0].max()])
            r0, r1 = np.searchsorted(gy, [xy[:, 1].min(), xy[:, 1].max()])
            if c1 <= c0 or r1 <= r0:
                continue
            X, Y = np.meshgrid(gx[c0:c1], gy[r0:r1])
            cover[r0:r1, c0:c1] += _strictly_inside(xy, X, Y)
        overlap = int((cover > 1).sum())
    else:
        overlap = 0
    return {"overlap_samples": overlap, "bad_edges": len(bad_edges), "hanging_nodes": hanging}


def _strictly_inside(poly, X, Y):
    """Points strictly inside a convex polygon with positive orientation."""
    inside = np.ones(X.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        inside &= (bx - ax) * (Y - ay) - (by - ay) * (X - ax) > 1e-9
    return inside

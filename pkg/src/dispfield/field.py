"""Shape-function interpolation of node displacements and field metrics.

Rectangles use the bilinear functions of natural coordinates
``(xi, eta) in [-1, 1]^2``; triangles use area (barycentric) coordinates.
Both reproduce nodal values exactly and any affine field exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateElementError, OutsideElementError, UndefinedMetricError
from .mesh import RECT4, TRI3

# N1 = a (xi-1)(eta-1), N2 = b (xi+1)(eta-1), N3 = c (xi+1)(eta+1), N4 = d (xi-1)(eta+1)
# with the Kronecker property at the corners forcing a = -b = c = -d = 1/4
RECT_COEFFS = (0.25, -0.25, 0.25, -0.25)
RECT_CORNERS = np.array([(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)])
INSIDE_TOL = 1e-9


def rect_shape(xi, eta):
    """Bilinear shape functions ``[N1, N2, N3, N4]``; broadcasts over arrays."""
    a, b, c, d = RECT_COEFFS
    return np.array([
        a * (xi - 1) * (eta - 1),
        b * (xi + 1) * (eta - 1),
        c * (xi + 1) * (eta + 1),
        d * (xi - 1) * (eta + 1),
    ])


def rect_natural(corners, x, y):
    """Natural coordinates of ``(x, y)`` in an axis-aligned rectangle.

    ``corners`` are the four node positions in element order
    ``(x0, y0), (x1, y0), (x1, y1), (x0, y1)``.
    """
    corners = np.asarray(corners, dtype=np.float64)
    x0, y0 = corners[0]
    x1, y1 = corners[2]
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        raise DegenerateElementError("rectangle has zero extent")
    xi = (2.0 * np.asarray(x, dtype=np.float64) - (x0 + x1)) / (x1 - x0)
    eta = (2.0 * np.asarray(y, dtype=np.float64) - (y0 + y1)) / (y1 - y0)
    return xi, eta


def rect_from_natural(corners, xi, eta):
    corners = np.asarray(corners, dtype=np.float64)
    x0, y0 = corners[0]
    x1, y1 = corners[2]
    return 0.5 * ((x1 - x0) * xi + x0 + x1), 0.5 * ((y1 - y0) * eta + y0 + y1)


def tri_coefficients(tri):
    """``(a, b, c, two_delta)`` with ``L_l = (a_l + b_l x + c_l y) / two_delta``.

    Cyclic over ``i -> j -> k -> i``: ``a_i = x_j y_k - x_k y_j``,
    ``b_i = y_j - y_k``, ``c_i = x_k - x_j``.
    """
    p = np.asarray(tri, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    j = [1, 2, 0]
    k = [2, 0, 1]
    a = x[j] * y[k] - x[k] * y[j]
    b = y[j] - y[k]
    c = x[k] - x[j]
    two_delta = (x[1] * y[2] - x[2] * y[1]) - (x[0] * y[2] - x[2] * y[0]) + (x[0] * y[1] - x[1] * y[0])
    if abs(two_delta) <= 2e-9:
        raise DegenerateElementError("triangle is degenerate")
    return a, b, c, two_delta


def tri_area_coords(tri, x, y):
    """Area coordinates ``(L_i, L_j, L_k)`` of ``(x, y)``; broadcasts over arrays."""
    a, b, c, two_delta = tri_coefficients(tri)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.array([(a[l] + b[l] * x + c[l] * y) / two_delta for l in range(3)])


def element_weights(kind, xy, x, y):
    """Shape-function values and an inside flag for points ``(x, y)``."""
    if kind == RECT4:
        xi, eta = rect_natural(xy, x, y)
        inside = (np.abs(xi) <= 1 + INSIDE_TOL) & (np.abs(eta) <= 1 + INSIDE_TOL)
        return rect_shape(xi, eta), inside
    if kind == TRI3:
        lam = tri_area_coords(xy, x, y)
        inside = np.all(lam >= -INSIDE_TOL, axis=0)
        return lam, inside
    raise ValueError(f"unknown element kind {kind!r}")


def interpolate(kind, xy, nodal_uv, p):
    """Displacement ``(u, v)`` at point ``p`` inside one element."""
    weights, inside = element_weights(kind, xy, p[0], p[1])
    if not bool(inside):
        raise OutsideElementError(f"point {tuple(p)} lies outside the element")
    uv = np.asarray(nodal_uv, dtype=np.float64)
    return float(weights @ uv[:, 0]), float(weights @ uv[:, 1])


# --------------------------------------------------------------------------
# dense fields

@dataclass
class DisplacementField:
    """Displacements sampled on a regular grid of pixel positions.

    ``u``/``v`` have shape ``(len(ys), len(xs))``; entries outside
    ``valid`` are meaningless (stored as 0).
    """

    xs: np.ndarray
    ys: np.ndarray
    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray
    units: str = "px"
    coefficient: float | None = None  # mm per px when units == "mm"

    @property
    def spacing(self):
        return float(self.xs[1] - self.xs[0]) if len(self.xs) > 1 else 0.0

    def component(self, name):
        return {"u": self.u, "v": self.v}[name]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x_px", "y_px", "u", "v", "valid", "units"])
            for r, y in enumerate(self.ys):
                for c, x in enumerate(self.xs):
                    ok = bool(self.valid[r, c])
                    w.writerow([f"{x:g}", f"{y:g}",
                                f"{self.u[r, c]:.6f}" if ok else "",
                                f"{self.v[r, c]:.6f}" if ok else "",
                                int(ok), self.units])

    @classmethod
    def from_csv(cls, path):
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(rec)
        if not rows:
            raise ValueError(f"{path}: empty field file")
        xs = np.array(sorted({float(r["x_px"]) for r in rows}))
        ys = np.array(sorted({float(r["y_px"]) for r in rows}))
        xi = {x: i for i, x in enumerate(xs)}
        yi = {y: i for i, y in enumerate(ys)}
        u = np.zeros((len(ys), len(xs)))
        v = np.zeros_like(u)
        valid = np.zeros(u.shape, dtype=bool)
        for r in rows:
            i, j = yi[float(r["y_px"])], xi[float(r["x_px"])]
            if int(r["valid"]):
                u[i, j] = float(r["u"])
                v[i, j] = float(r["v"])
                valid[i, j] = True
        return cls(xs, ys, u, v, valid, units=rows[0]["units"])


def sample_grid(width, height, spacing):
    xs = np.arange(0, width, spacing, dtype=np.float64)
    ys = np.arange(0, height, spacing, dtype=np.float64)
    return xs, ys


def assemble_field(mesh, nodal_uv, spacing, mask, node_ok=None):
    """Interpolate node displacements to every grid sample inside ``mask``.

    Elements are visited in id order and a sample takes the first element
    containing it, so shared edges resolve to the lowest element id.
    Elements touching a node with ``node_ok == False`` are skipped and their
    samples stay invalid.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    xs, ys = sample_grid(w, h, spacing)
    uv = np.asarray(nodal_uv, dtype=np.float64)
    u = np.zeros((len(ys), len(xs)))
    v = np.zeros_like(u)
    done = np.zeros(u.shape, dtype=bool)
    in_mask = mask[np.ix_(ys.astype(int), xs.astype(int))]
    for e, el in enumerate(mesh.elements):
        ids = list(el.ids)
        if node_ok is not None and not np.all(np.asarray(node_ok)[ids]):
            continue
        xy = mesh.nodes[ids]
        c0 = np.searchsorted(xs, xy[:, 0].min() - INSIDE_TOL, side="left")
        c1 = np.searchsorted(xs, xy[:, 0].max() + INSIDE_TOL, side="right")
        r0 = np.searchsorted(ys, xy[:, 1].min() - INSIDE_TOL, side="left")
        r1 = np.searchsorted(ys, xy[:, 1].max() + INSIDE_TOL, side="right")
        if c1 <= c0 or r1 <= r0:
            continue
        X, Y = np.meshgrid(xs[c0:c1], ys[r0:r1])
        weights, inside = element_weights(el.kind, xy, X, Y)
        take = inside & ~done[r0:r1, c0:c1] & in_mask[r0:r1, c0:c1]
        if not take.any():
            continue
        eu = np.tensordot(uv[ids, 0], weights, axes=1)
        ev = np.tensordot(uv[ids, 1], weights, axes=1)
        u[r0:r1, c0:c1][take] = eu[take]
        v[r0:r1, c0:c1][take] = ev[take]
        done[r0:r1, c0:c1] |= take
    return DisplacementField(xs, ys, u, v, done, units="px")


def scale_to_mm(field, coefficient):
    if not coefficient > 0:
        raise ValueError("conversion coefficient must be positive")
    if field.units == "mm":
        raise ValueError("field is already in mm")
    return DisplacementField(field.xs.copy(), field.ys.copy(), field.u * coefficient, field.v * coefficient,
                             field.valid.copy(), units="mm", coefficient=float(coefficient))


# --------------------------------------------------------------------------
# metrics

def _joint(f1, f2):
    a, b = np.asarray(f1, dtype=np.float64), np.asarray(f2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("fields must share one sample grid")
    return a, b


def metric_R(f1, f2, valid=None):
    """Normalised correlation ``sum(F1 F2) / (sqrt(sum F1^2) sqrt(sum F2^2))``.

    Sums run in row-major order over jointly valid samples.
    """
    a, b = _joint(f1, f2)
    sel = np.ones(a.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    a, b = a[sel].ravel(), b[sel].ravel()
    na = np.sqrt(np.sum(a * a))
    nb = np.sqrt(np.sum(b * b))
    if na == 0 or nb == 0:
        raise UndefinedMetricError("R is undefined for an identically zero field")
    return float(np.sum(a * b) / (na * nb))


def metric_D(f1, f2, valid=None):
    """Root-mean-square deviation over jointly valid samples."""
    a, b = _joint(f1, f2)
    sel = np.ones(a.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    a, b = a[sel].ravel(), b[sel].ravel()
    if a.size == 0:
        raise UndefinedMetricError("D is undefined without valid samples")
    return float(np.sqrt(np.sum((a - b) ** 2) / a.size))


def compare_fields(measured, truth):
    """Report dict ``{R_u, R_v, D_u, D_v, units, valid_fraction}``.

    An undefined metric is reported as ``None``. Both fields must share
    units and sample grid.
    """
    if measured.units != truth.units:
        raise ValueError(f"unit mismatch: {measured.units} vs {truth.units}")
    if measured.u.shape != truth.u.shape:
        raise ValueError("fields must share one sample grid")
    joint = measured.valid & truth.valid
    report = {"units": measured.units}
    for comp in ("u", "v"):
        a, b = measured.component(comp), truth.component(comp)
        for name, fn in (("R", metric_R), ("D", metric_D)):
            try:
                report[f"{name}_{comp}"] = fn(a, b, joint)
            except UndefinedMetricError:
                report[f"{name}_{comp}"] = None
    n_truth = int(truth.valid.sum())
    report["valid_fraction"] = float(joint.sum() / n_truth) if n_truth else 0.0
    report["n_samples"] = int(joint.sum())
    return report


def write_report(path, report):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)

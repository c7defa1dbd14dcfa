"""GrabCut foreground extraction from a bounding rectangle.

Energy: per-pixel data cost from the colour mixture of the pixel's label
(best component), plus ``gamma / dist * exp(-beta |z_m - z_n|^2)`` for every
8-neighbour pair with different labels. Each iteration reassigns
components, refits both mixtures and solves the label step exactly by
min-cut, so the energy never increases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..errors import DimensionMismatchError, EmptyForegroundError
from .gmm import EPS, estimate, fit_gmm
from .maxflow import max_flow

GAMMA = 50.0

# trimap labels
SURE_BG, PROB_FG, PROB_BG, SURE_FG = 0, 1, 2, 3

# (dy, dx) offsets visiting each 8-neighbour pair once
NEIGHBOURS = ((0, 1), (1, 0), (1, 1), (1, -1))


@dataclass
class GrabCutResult:
    mask: np.ndarray
    raw_mask: np.ndarray  # before the largest-component step
    energies: list = field(default_factory=list)


def _pairs(h, w, dy, dx):
    """Slices selecting pixel pairs ``(p, p + (dy, dx))`` inside an ``h x w`` grid."""
    ys0, ys1 = slice(0, h - dy), slice(dy, h)
    if dx >= 0:
        xs0, xs1 = slice(0, w - dx), slice(dx, w)
    else:
        xs0, xs1 = slice(-dx, w), slice(0, w + dx)
    return (ys0, xs0), (ys1, xs1)


def compute_beta(img):
    """``1 / (2 <|z_m - z_n|^2>)`` over all 8-neighbour pairs."""
    h, w = img.shape[:2]
    total, count = 0.0, 0
    for dy, dx in NEIGHBOURS:
        a, b = _pairs(h, w, dy, dx)
        d = img[a] - img[b]
        total += float(np.sum(d * d))
        count += d.shape[0] * d.shape[1]
    if total <= 0 or count == 0:
        return 0.0
    return 1.0 / (2.0 * total / count)


def pair_weights(img, beta, gamma=GAMMA):
    """Pairwise weights per neighbour direction, diagonals scaled by ``1/sqrt(2)``."""
    h, w = img.shape[:2]
    out = []
    for dy, dx in NEIGHBOURS:
        a, b = _pairs(h, w, dy, dx)
        d = img[a] - img[b]
        dist = np.hypot(dy, dx)
        out.append((dy, dx, gamma / dist * np.exp(-beta * np.sum(d * d, axis=-1))))
    return out


def energy(labels_fg, data_fg, data_bg, weights):
    """Total energy for a labelling, data costs and pair weights."""
    e = float(np.sum(np.where(labels_fg, data_fg, data_bg)))
    h, w = labels_fg.shape
    for dy, dx, wt in weights:
        a, b = _pairs(h, w, dy, dx)
        e += float(np.sum(wt[labels_fg[a] != labels_fg[b]]))
    return e


def _solve_labels(data_fg, data_bg, weights, fixed_bg, fixed_fg):
    """Exact minimiser of the energy over labels with the hard constraints."""
    h, w = data_fg.shape
    free = ~(fixed_bg | fixed_fg)
    labels = fixed_fg.copy()
    if not free.any():
        return labels
    ids = -np.ones((h, w), dtype=np.int64)
    ids[free] = np.arange(int(free.sum()))
    n = int(free.sum())
    # source side = foreground; cutting s->i assigns background
    cs = data_bg[free].astype(np.float64).copy()
    ct = data_fg[free].astype(np.float64).copy()
    ea, eb, wab = [], [], []
    for dy, dx, wt in weights:
        a, b = _pairs(h, w, dy, dx)
        ia, ib = ids[a], ids[b]
        both = (ia >= 0) & (ib >= 0)
        ea.append(ia[both])
        eb.append(ib[both])
        wab.append(wt[both])
        # a free pixel next to a fixed one pays the weight when labels differ
        for src, dst, fix_sl in ((ia, ib, b), (ib, ia, a)):
            edge = (src >= 0) & (dst < 0)
            if not edge.any():
                continue
            tgt = src[edge]
            wv = wt[edge]
            fg_nb = fixed_fg[fix_sl][edge]
            np.add.at(ct, tgt[~fg_nb], wv[~fg_nb])  # background neighbour: paid when labelled fg
            np.add.at(cs, tgt[fg_nb], wv[fg_nb])
    # shift data costs so both terminal capacities are non-negative
    lo = np.minimum(cs, ct)
    cs -= lo
    ct -= lo
    ea = np.concatenate(ea)
    eb = np.concatenate(eb)
    wab = np.concatenate(wab)
    _, side = max_flow(n, cs, ct, ea, eb, wab, wab)
    labels[free] = side
    return labels


def grabcut(img, rect, iterations=5, k=5, gamma=GAMMA, seed=0, eps=EPS):
    """Segment the object inside ``rect = (x, y, w, h)``.

    Returns a :class:`GrabCutResult`; ``mask`` is the largest 8-connected
    foreground component. Pixels outside the rectangle are never foreground.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    h, w = img.shape[:2]
    x, y, rw, rh = (int(v) for v in rect)
    if rw <= 0 or rh <= 0 or x < 0 or y < 0 or x + rw > w or y + rh > h:
        raise ValueError(f"rectangle {rect} is not inside the {w}x{h} image")
    trimap = np.full((h, w), SURE_BG, dtype=np.int8)
    trimap[y:y + rh, x:x + rw] = PROB_FG
    fixed_bg = trimap == SURE_BG
    fixed_fg = trimap == SURE_FG
    labels = trimap != SURE_BG

    beta = compute_beta(img)
    weights = pair_weights(img, beta, gamma)
    pix = img.reshape(-1, 3)
    if not (~labels).any():
        # rectangle covers the whole image: there is no background sample
        mask = labels.copy()
        return GrabCutResult(_largest_component(mask), mask, [])
    fg = fit_gmm(pix[labels.ravel()], k, seed=seed, eps=eps)
    bg = fit_gmm(pix[~labels.ravel()], k, seed=seed + 1, eps=eps)
    energies = []
    for _ in range(int(iterations)):
        flat = labels.ravel()
        kf, _ = fg.assign(pix[flat])
        kb, _ = bg.assign(pix[~flat])
        if flat.any():
            fg = estimate(pix[flat], kf, fg.k, eps)
        bg = estimate(pix[~flat], kb, bg.k, eps)
        _, data_fg = fg.assign(pix)
        _, data_bg = bg.assign(pix)
        data_fg = data_fg.reshape(h, w)
        data_bg = data_bg.reshape(h, w)
        labels = _solve_labels(data_fg, data_bg, weights, fixed_bg, fixed_fg)
        energies.append(energy(labels, data_fg, data_bg, weights))
        if not labels.any():
            break
    if not labels.any():
        raise EmptyForegroundError("segmentation produced an empty foreground")
    return GrabCutResult(_largest_component(labels), labels, energies)


def _largest_component(mask):
    lab, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n <= 1:
        return mask.copy()
    sizes = np.bincount(lab.ravel())
    sizes[0] = 0
    return lab == int(np.argmax(sizes))


def apply_mask(img, mask):
    """Zero every pixel outside ``mask``."""
    img = np.asarray(img, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if img.shape[:2] != mask.shape:
        raise DimensionMismatchError(f"image {img.shape[:2]} and mask {mask.shape} differ")
    return img * (mask[..., None] if img.ndim == 3 else mask)


def iou(a, b):
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    union = np.sum(a | b)
    return float(np.sum(a & b) / union) if union else 1.0

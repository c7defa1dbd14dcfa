"""Homography estimation: exact 4-point solve, normalised DLT and RANSAC."""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateConfigurationError, NoConsensusError
from ..imgcore import apply_homography, normalize_homography

_COLLINEAR_TOL = 1e-9


def _check_no_three_collinear(pts, what):
    scale = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-300)
    for i in range(4):
        a, b, c = (pts[j] for j in range(4) if j != i)
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(cross) <= _COLLINEAR_TOL * scale * scale:
            raise DegenerateConfigurationError(f"three {what} points are collinear")


def homography_from_4(src, dst):
    """Exact homography through four correspondences (``h33 = 1``).

    ``src`` and ``dst`` are ``(4, 2)`` arrays. Raises
    :class:`DegenerateConfigurationError` when three points on either side
    are collinear.
    """
    src = np.asarray(src, dtype=np.float64).reshape(4, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(4, 2)
    _check_no_three_collinear(src, "source")
    _check_no_three_collinear(dst, "target")
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for k in range(4):
        x, y = src[k]
        u, v = dst[k]
        a[2 * k] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * k + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * k] = u
        b[2 * k + 1] = v
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateConfigurationError(str(exc)) from exc
    return normalize_homography(np.append(h, 1.0).reshape(3, 3))


def _normalizing_transform(pts):
    centroid = pts.mean(axis=0)
    mean_dist = np.mean(np.hypot(*(pts - centroid).T))
    if mean_dist <= 0:
        raise DegenerateConfigurationError("all points coincide")
    s = np.sqrt(2.0) / mean_dist
    return np.array([[s, 0, -s * centroid[0]], [0, s, -s * centroid[1]], [0, 0, 1.0]])


def dlt_homography(src, dst):
    """Least-squares homography from ``n >= 4`` correspondences (Hartley-normalised DLT)."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n < 4 or len(dst) != n:
        raise DegenerateConfigurationError("need at least 4 matched point pairs")
    ts = _normalizing_transform(src)
    td = _normalizing_transform(dst)
    s = apply_homography(ts, src)
    d = apply_homography(td, dst)
    a = np.zeros((2 * n, 9))
    x, y = s[:, 0], s[:, 1]
    u, v = d[:, 0], d[:, 1]
    one = np.ones(n)
    zero = np.zeros(n)
    a[0::2] = np.column_stack([x, y, one, zero, zero, zero, -u * x, -u * y, -u])
    a[1::2] = np.column_stack([zero, zero, zero, x, y, one, -v * x, -v * y, -v])
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] <= 1e-10 * sv[0]:
        raise DegenerateConfigurationError("design matrix has a multi-dimensional null space")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    return normalize_homography(h)


def reprojection_errors(h, src, dst):
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.hypot(*(apply_homography(h, src) - dst).T)
    return np.where(np.isfinite(err), err, np.inf)


def ransac_points(src, dst, threshold_px=3.0, max_iters=2000, seed=0):
    """RANSAC over raw correspondences; returns ``(H, inlier_indices)``.

    The consensus winner is the model with most inliers, then the smallest
    total inlier reprojection error, then the earliest iteration. The winner
    is re-fit by :func:`dlt_homography` on its inliers.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n < 4:
        raise NoConsensusError(f"need at least 4 matches, got {n}")
    rng = np.random.default_rng(seed)
    best_count, best_cost, best_inliers = 0, np.inf, None
    for _ in range(max_iters):
        sample = rng.choice(n, 4, replace=False)
        try:
            h = homography_from_4(src[sample], dst[sample])
        except DegenerateConfigurationError:
            continue
        err = reprojection_errors(h, src, dst)
        inl = err < threshold_px
        count = int(inl.sum())
        if count < best_count:
            continue
        cost = float(err[inl].sum())
        if count > best_count or cost < best_cost:
            best_count, best_cost, best_inliers = count, cost, inl
    if best_inliers is None or best_count < 4:
        raise NoConsensusError("no model is supported by 4 or more inliers")

    inliers = np.flatnonzero(best_inliers)
    h = dlt_homography(src[inliers], dst[inliers])
    for _ in range(5):
        refit = np.flatnonzero(reprojection_errors(h, src, dst) < threshold_px)
        if len(refit) < len(inliers) or np.array_equal(refit, inliers):
            break
        inliers = refit
        h = dlt_homography(src[inliers], dst[inliers])
    return h, inliers


def ransac_homography(matches, keypoints_a, keypoints_b, threshold_px=3.0, max_iters=2000, seed=0):
    """Fit the homography taking ``keypoints_a`` positions onto ``keypoints_b``.

    Returns ``(H, inlier_indices)`` where the indices refer to ``matches``.
    """
    if len(matches) < 4:
        raise NoConsensusError(f"need at least 4 matches, got {len(matches)}")
    src = np.array([keypoints_a[m.index_a].position for m in matches])
    dst = np.array([keypoints_b[m.index_b].position for m in matches])
    return ransac_points(src, dst, threshold_px=threshold_px, max_iters=max_iters, seed=seed)

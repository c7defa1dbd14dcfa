"""Exact KD-tree for 2-nearest-neighbour descriptor queries.

Full backtracking: a subtree is skipped only when its bounding slab is
provably farther than the current second-best distance, so results equal
an exhaustive scan.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF = -1


class KdTree:
    """Axis-aligned binary partition of a point set.

    Node arrays are flat: ``split_dim[i] == LEAF`` marks a leaf holding
    ``perm[start[i]:stop[i]]``.
    """

    def __init__(self, points, leaf_size=16):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or len(points) == 0:
            raise ValueError("KD-tree needs a non-empty (n, d) point array")
        self.points = points
        self.leaf_size = max(int(leaf_size), 1)
        self.perm = np.arange(len(points))
        self.split_dim: list[int] = []
        self.split_val: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.start: list[int] = []
        self.stop: list[int] = []
        self.depth = 0
        self._build()

    def _new_node(self, lo, hi):
        self.split_dim.append(LEAF)
        self.split_val.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.start.append(lo)
        self.stop.append(hi)
        return len(self.split_dim) - 1

    def _build(self):
        root = self._new_node(0, len(self.points))
        stack = [(root, 0)]
        while stack:
            node, depth = stack.pop()
            self.depth = max(self.depth, depth)
            lo, hi = self.start[node], self.stop[node]
            if hi - lo <= self.leaf_size:
                continue
            idx = self.perm[lo:hi]
            sub = self.points[idx]
            spread = sub.max(axis=0) - sub.min(axis=0)
            dim = int(np.argmax(spread))
            if spread[dim] == 0.0:
                continue  # all points identical: keep as one leaf
            mid = (hi - lo) // 2
            order = np.argpartition(sub[:, dim], mid, kind="introselect")
            self.perm[lo:hi] = idx[order]
            self.split_dim[node] = dim
            self.split_val[node] = float(self.points[self.perm[lo + mid], dim])
            left = self._new_node(lo, lo + mid)
            right = self._new_node(lo + mid, hi)
            self.left[node] = left
            self.right[node] = right
            stack.append((right, depth + 1))
            stack.append((left, depth + 1))

    def leaves(self):
        return [i for i, d in enumerate(self.split_dim) if d == LEAF]

    def query2(self, q):
        """Return ``((i1, d1), (i2, d2))``: nearest and second-nearest indices and distances.

        With a single stored point the second neighbour is ``(-1, inf)``.
        Equal distances break toward the lower index.
        """
        q = np.asarray(q, dtype=np.float64)
        b1, b2 = np.inf, np.inf
        i1, i2 = -1, -1
        pts, perm = self.points, self.perm
        split_dim, split_val = self.split_dim, self.split_val
        left, right = self.left, self.right
        stack = [(0, 0.0)]
        while stack:
            node, bound = stack.pop()
            if bound > b2:
                continue
            while split_dim[node] != LEAF:
                dim = split_dim[node]
                diff = q[dim] - split_val[node]
                if diff < 0:
                    near, far = left[node], right[node]
                else:
                    near, far = right[node], left[node]
                far_bound = max(bound, diff * diff)
                if far_bound <= b2:
                    stack.append((far, far_bound))
                node = near
            idx = perm[self.start[node]:self.stop[node]]
            d2 = ((pts[idx] - q) ** 2).sum(axis=1)
            for k in np.argsort(d2, kind="stable")[:2]:
                d, i = float(d2[k]), int(idx[k])
                if d < b1 or (d == b1 and i < i1):
                    b2, i2 = b1, i1
                    b1, i1 = d, i
                elif i != i1 and (d < b2 or (d == b2 and i < i2)):
                    b2, i2 = d, i
        return (i1, float(np.sqrt(b1))), (i2, float(np.sqrt(b2)))


def build_kdtree(descs, leaf_size=16):
    return KdTree(descs, leaf_size=leaf_size)


def brute_force_2nn(points, q):
    """Exhaustive 2-NN with the same tie-break as :meth:`KdTree.query2`."""
    points = np.asarray(points, dtype=np.float64)
    d2 = ((points - np.asarray(q, dtype=np.float64)) ** 2).sum(axis=1)
    order = np.lexsort((np.arange(len(d2)), d2))
    i1 = int(order[0])
    if len(order) == 1:
        return (i1, float(np.sqrt(d2[i1]))), (-1, float("inf"))
    i2 = int(order[1])
    return (i1, float(np.sqrt(d2[i1]))), (i2, float(np.sqrt(d2[i2])))


@dataclass(frozen=True)
class Match:
    index_a: int
    index_b: int
    distance: float
    ratio: float


def match_features(tree_b, descs_a, ratio_threshold=0.75):
    """Match each descriptor of ``descs_a`` to its nearest neighbour in ``tree_b``.

    A match survives when ``nearest / second_nearest < ratio_threshold``.
    """
    matches = []
    for ia, q in enumerate(np.asarray(descs_a, dtype=np.float64)):
        (i1, d1), (_, d2) = tree_b.query2(q)
        if d2 == 0.0:
            ratio = 1.0
        elif np.isinf(d2):
            ratio = 0.0
        else:
            ratio = d1 / d2
        if ratio < ratio_threshold:
            matches.append(Match(ia, i1, d1, ratio))
    return matches

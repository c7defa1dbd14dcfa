"""Boykov-Kolmogorov max-flow on general sparse graphs.

Search trees grow from source and sink, augment along the path joining
them and adopt orphans. The core is compiled with numba; a pixel-grid
graph has hundreds of thousands of nodes.

Graph description (all arrays over nodes or undirected edges):

* ``cap_source[i]`` / ``cap_sink[i]``: terminal capacities
* ``edge_a, edge_b, cap_ab, cap_ba``: one entry per pair of opposite arcs
"""

from __future__ import annotations

import itertools

import numpy as np
from numba import njit

NONE = -1  # free node
TERMINAL = -2
ORPHAN = -3
FREE, SOURCE, SINK = 0, 1, 2
INF_DIST = 1 << 30


def _csr(n, edge_a, edge_b, cap_ab, cap_ba):
    """Arc arrays grouped by tail node: ``(first, head, rcap, sister)``."""
    m = len(edge_a)
    tails = np.concatenate([edge_a, edge_b]).astype(np.int64)
    heads = np.concatenate([edge_b, edge_a]).astype(np.int64)
    caps = np.concatenate([cap_ab, cap_ba]).astype(np.float64)
    sisters = np.concatenate([np.arange(m, 2 * m), np.arange(0, m)])
    order = np.argsort(tails, kind="stable")
    inv = np.empty(2 * m, dtype=np.int64)
    inv[order] = np.arange(2 * m)
    first = np.zeros(n + 1, dtype=np.int64)
    np.add.at(first, tails + 1, 1)
    first = np.cumsum(first)
    return first, heads[order], caps[order].copy(), inv[sisters[order]]


@njit(cache=True)
def _bk(n, first, head, rcap, sister, tr_cap):
    parent = np.full(n, NONE, dtype=np.int64)
    tree = np.zeros(n, dtype=np.int8)
    ts = np.zeros(n, dtype=np.int64)
    dist = np.zeros(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    in_queue = np.zeros(n, dtype=np.bool_)
    q_head = 0
    q_len = 0
    orphans = np.empty(n, dtype=np.int64)
    flow = 0.0

    for i in range(n):
        if tr_cap[i] != 0.0:
            tree[i] = SOURCE if tr_cap[i] > 0 else SINK
            parent[i] = TERMINAL
            dist[i] = 1
            queue[(q_head + q_len) % n] = i
            q_len += 1
            in_queue[i] = True

    time = 0
    current = -1
    while True:
        if current >= 0 and parent[current] != NONE:
            i = current
        else:
            i = -1
            while q_len > 0:
                c = queue[q_head]
                q_head = (q_head + 1) % n
                q_len -= 1
                in_queue[c] = False
                if parent[c] != NONE:
                    i = c
                    break
            if i < 0:
                break
        current = -1

        # growth
        mid = -1
        if tree[i] == SOURCE:
            for a in range(first[i], first[i + 1]):
                if rcap[a] > 0.0:
                    j = head[a]
                    if parent[j] == NONE:
                        tree[j] = SOURCE
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if not in_queue[j]:
                            queue[(q_head + q_len) % n] = j
                            q_len += 1
                            in_queue[j] = True
                    elif tree[j] == SINK:
                        mid = a
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
        else:
            for a in range(first[i], first[i + 1]):
                if rcap[sister[a]] > 0.0:
                    j = head[a]
                    if parent[j] == NONE:
                        tree[j] = SINK
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if not in_queue[j]:
                            queue[(q_head + q_len) % n] = j
                            q_len += 1
                            in_queue[j] = True
                    elif tree[j] == SOURCE:
                        mid = sister[a]
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1

        time += 1
        if mid < 0:
            continue
        current = i

        # augmentation along source-tree path, middle arc, sink-tree path
        bottleneck = rcap[mid]
        k = head[sister[mid]]
        while parent[k] != TERMINAL:
            a = parent[k]
            if rcap[sister[a]] < bottleneck:
                bottleneck = rcap[sister[a]]
            k = head[a]
        if tr_cap[k] < bottleneck:
            bottleneck = tr_cap[k]
        k = head[mid]
        while parent[k] != TERMINAL:
            a = parent[k]
            if rcap[a] < bottleneck:
                bottleneck = rcap[a]
            k = head[a]
        if -tr_cap[k] < bottleneck:
            bottleneck = -tr_cap[k]

        n_orph = 0
        rcap[sister[mid]] += bottleneck
        rcap[mid] -= bottleneck
        k = head[sister[mid]]
        while parent[k] != TERMINAL:
            a = parent[k]
            rcap[a] += bottleneck
            rcap[sister[a]] -= bottleneck
            if rcap[sister[a]] == 0.0:
                parent[k] = ORPHAN
                orphans[n_orph] = k
                n_orph += 1
            k = head[a]
        tr_cap[k] -= bottleneck
        if tr_cap[k] == 0.0:
            parent[k] = ORPHAN
            orphans[n_orph] = k
            n_orph += 1
        k = head[mid]
        while parent[k] != TERMINAL:
            a = parent[k]
            rcap[sister[a]] += bottleneck
            rcap[a] -= bottleneck
            if rcap[a] == 0.0:
                parent[k] = ORPHAN
                orphans[n_orph] = k
                n_orph += 1
            k = head[a]
        tr_cap[k] += bottleneck
        if tr_cap[k] == 0.0:
            parent[k] = ORPHAN
            orphans[n_orph] = k
            n_orph += 1
        flow += bottleneck

        # adoption (orphans are processed as a stack)
        time += 1
        while n_orph > 0:
            n_orph -= 1
            i = orphans[n_orph]
            src = tree[i] == SOURCE
            a_min = -1
            d_min = INF_DIST
            for a0 in range(first[i], first[i + 1]):
                cap = rcap[sister[a0]] if src else rcap[a0]
                if cap <= 0.0:
                    continue
                j = head[a0]
                if tree[j] != tree[i] or parent[j] == NONE:
                    continue
                d = 0
                while True:
                    if ts[j] == time:
                        d += dist[j]
                        break
                    a = parent[j]
                    d += 1
                    if a == TERMINAL:
                        ts[j] = time
                        dist[j] = 1
                        break
                    if a == ORPHAN:
                        d = INF_DIST
                        break
                    j = head[a]
                if d < INF_DIST:
                    if d < d_min:
                        a_min = a0
                        d_min = d
                    j = head[a0]
                    while ts[j] != time:
                        ts[j] = time
                        dist[j] = d
                        d -= 1
                        j = head[parent[j]]
            if a_min >= 0:
                parent[i] = a_min
                ts[i] = time
                dist[i] = d_min + 1
                continue
            parent[i] = NONE
            for a0 in range(first[i], first[i + 1]):
                j = head[a0]
                if tree[j] != tree[i] or parent[j] == NONE:
                    continue
                cap = rcap[sister[a0]] if src else rcap[a0]
                if cap > 0.0 and not in_queue[j]:
                    queue[(q_head + q_len) % n] = j
                    q_len += 1
                    in_queue[j] = True
                pa = parent[j]
                if pa != TERMINAL and pa != ORPHAN and head[pa] == i:
                    parent[j] = ORPHAN
                    orphans[n_orph] = j
                    n_orph += 1
            tree[i] = FREE
    source_side = tree == SOURCE
    return flow, source_side


def max_flow(n, cap_source, cap_sink, edge_a=None, edge_b=None, cap_ab=None, cap_ba=None):
    """Exact max-flow value and the source side of a minimum cut.

    Returns ``(flow, source_side)`` where ``source_side`` is a bool array.
    Nodes not reachable from the source in the final residual graph are on
    the sink side.
    """
    cs = np.asarray(cap_source, dtype=np.float64)
    ct = np.asarray(cap_sink, dtype=np.float64)
    if len(cs) != n or len(ct) != n:
        raise ValueError("terminal capacity arrays must have one entry per node")
    if edge_a is None:
        edge_a = edge_b = np.zeros(0, dtype=np.int64)
        cap_ab = cap_ba = np.zeros(0)
    edge_a = np.asarray(edge_a, dtype=np.int64)
    edge_b = np.asarray(edge_b, dtype=np.int64)
    cap_ab = np.asarray(cap_ab, dtype=np.float64)
    cap_ba = np.asarray(cap_ba, dtype=np.float64)
    if np.any(cs < 0) or np.any(ct < 0) or np.any(cap_ab < 0) or np.any(cap_ba < 0):
        raise ValueError("capacities must be non-negative")
    if n == 0:
        return 0.0, np.zeros(0, dtype=bool)
    # flow through s -> i -> t is pushed directly; only the residual is kept
    base = float(np.minimum(cs, ct).sum())
    tr = cs - ct
    first, head, rcap, sister = _csr(n, edge_a, edge_b, cap_ab, cap_ba)
    flow, side = _bk(n, first, head, rcap, sister, tr.copy())
    return base + flow, side


def cut_value(source_side, cap_source, cap_sink, edge_a, edge_b, cap_ab, cap_ba):
    """Capacity of the cut with the given source side."""
    s = np.asarray(source_side, dtype=bool)
    val = float(np.sum(np.asarray(cap_source)[~s]) + np.sum(np.asarray(cap_sink)[s]))
    a, b = np.asarray(edge_a, dtype=np.int64), np.asarray(edge_b, dtype=np.int64)
    val += float(np.sum(np.asarray(cap_ab)[s[a] & ~s[b]]) + np.sum(np.asarray(cap_ba)[s[b] & ~s[a]]))
    return val


def brute_force_min_cut(n, cap_source, cap_sink, edge_a, edge_b, cap_ab, cap_ba):
    """Minimum over all ``2**n`` source sides; for small test graphs only."""
    if n > 20:
        raise ValueError("exhaustive search is limited to 20 nodes")
    best, best_side = np.inf, None
    for bits in itertools.product((False, True), repeat=n):
        side = np.array(bits, dtype=bool)
        v = cut_value(side, cap_source, cap_sink, edge_a, edge_b, cap_ab, cap_ba)
        if v < best:
            best, best_side = v, side
    return best, best_side

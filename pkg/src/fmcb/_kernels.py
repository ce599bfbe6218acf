"""Numba inner loops: SALS SGD epochs, histogram tree growth, tree scoring.

Everything here is single-threaded and runs in a fixed order, so results
are bit-reproducible across runs and machines with the same inputs.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def sals_epoch(a, order, v, step):
    """One SGD pass over the sampled rows, updating v in place.

    Each visited row i contributes u_i = a_i . v, a per-coordinate update
    v_j -= 2*step*u_i*(v_j*u_i - a_ij), and a projection back to the unit
    sphere. Returns (status, sum of u_i^2); status is -1 if a projection
    hit zero norm, else 0. The projection sum measures how well v aligns
    with the sampled rows over the pass.
    """
    n = a.shape[1]
    u2 = 0.0
    for t in range(order.shape[0]):
        i = order[t]
        u = 0.0
        for j in range(n):
            u += a[i, j] * v[j]
        u2 += u * u
        norm2 = 0.0
        for j in range(n):
            v[j] = v[j] - 2.0 * step * u * (v[j] * u - a[i, j])
            norm2 += v[j] * v[j]
        if not (norm2 > 0.0) or not np.isfinite(norm2):
            return -1, u2
        inv = 1.0 / np.sqrt(norm2)
        for j in range(n):
            v[j] *= inv
    return 0, u2


@njit(cache=True)
def grow_tree(codes, targets, n_thresh, max_depth, min_leaf, min_gain,
              feature, cut, left, right, value, count):
    """Greedy histogram CART growth; fills the preallocated node arrays.

    codes holds per-row bin indices (uint8), n_thresh the per-feature
    threshold count. A split at cut j sends bins <= j left. Children are
    numbered in BFS order. Returns (n_nodes, max_depth_used).
    """
    n_rows, n_feats = codes.shape
    max_bins = 0
    for f in range(n_feats):
        if n_thresh[f] + 1 > max_bins:
            max_bins = n_thresh[f] + 1

    rows = np.arange(n_rows, dtype=np.int64)
    tmp = np.empty(n_rows, dtype=np.int64)
    hcnt = np.empty(max_bins, dtype=np.int64)
    hsum = np.empty(max_bins, dtype=np.float64)
    hss = np.empty(max_bins, dtype=np.float64)

    max_nodes = feature.shape[0]
    node_start = np.empty(max_nodes, dtype=np.int64)
    node_end = np.empty(max_nodes, dtype=np.int64)
    node_depth = np.empty(max_nodes, dtype=np.int64)
    node_start[0] = 0
    node_end[0] = n_rows
    node_depth[0] = 0
    n_nodes = 1
    deepest = 0
    head = 0

    while head < n_nodes:
        nd = head
        head += 1
        s, e = node_start[nd], node_end[nd]
        cnt = e - s
        tsum = 0.0
        tss = 0.0
        for p in range(s, e):
            t = targets[rows[p]]
            tsum += t
            tss += t * t
        value[nd] = tsum / cnt
        count[nd] = cnt
        feature[nd] = -1
        cut[nd] = -1
        left[nd] = -1
        right[nd] = -1
        if node_depth[nd] > deepest:
            deepest = node_depth[nd]
        if node_depth[nd] >= max_depth or cnt < 2 * min_leaf:
            continue

        sse_parent = tss - tsum * tsum / cnt
        best_gain = min_gain
        best_f = -1
        best_cut = -1
        for f in range(n_feats):
            n_th = n_thresh[f]
            if n_th == 0:
                continue
            for b in range(n_th + 1):
                hcnt[b] = 0
                hsum[b] = 0.0
                hss[b] = 0.0
            for p in range(s, e):
                r = rows[p]
                c = codes[r, f]
                t = targets[r]
                hcnt[c] += 1
                hsum[c] += t
                hss[c] += t * t
            cl = 0
            sl = 0.0
            ssl = 0.0
            for j in range(n_th):
                cl += hcnt[j]
                sl += hsum[j]
                ssl += hss[j]
                cr = cnt - cl
                if cl < min_leaf or cr < min_leaf:
                    continue
                sr = tsum - sl
                ssr = tss - ssl
                gain = sse_parent - (ssl - sl * sl / cl) - (ssr - sr * sr / cr)
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_cut = j

        if best_f < 0:
            continue

        # Stable two-buffer partition of rows[s:e).
        nl = 0
        nr = 0
        for p in range(s, e):
            r = rows[p]
            if codes[r, best_f] <= best_cut:
                rows[s + nl] = r
                nl += 1
            else:
                tmp[nr] = r
                nr += 1
        for p in range(nr):
            rows[s + nl + p] = tmp[p]

        feature[nd] = best_f
        cut[nd] = best_cut
        left[nd] = n_nodes
        right[nd] = n_nodes + 1
        node_start[n_nodes] = s
        node_end[n_nodes] = s + nl
        node_depth[n_nodes] = node_depth[nd] + 1
        node_start[n_nodes + 1] = s + nl
        node_end[n_nodes + 1] = e
        node_depth[n_nodes + 1] = node_depth[nd] + 1
        n_nodes += 2

    return n_nodes, deepest


@njit(cache=True)
def predict_rows(x, feature, threshold, left, right, value, out):
    """Route every row of x down one tree; value <= threshold goes left."""
    for i in range(x.shape[0]):
        nd = 0
        while feature[nd] >= 0:
            if x[i, feature[nd]] <= threshold[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[i] = value[nd]


@njit(cache=True)
def score_ensemble(x, feature, threshold, left, right, value, offsets,
                   weights, alpha, out):
    """Accumulate alpha-scaled tree outputs into an N x C score matrix.

    Trees are packed back to back (tree t spans nodes offsets[t]:offsets[t+1],
    child indices relative to its own base). Row weights[t] gives tree t's
    per-column contribution: out[i, c] += alpha * (h_t(x_i) * weights[t, c]).
    The t-outer/i-inner order matches the training-time cursor updates.
    """
    n_trees = offsets.shape[0] - 1
    n_cols = weights.shape[1]
    for t in range(n_trees):
        base = offsets[t]
        for i in range(x.shape[0]):
            nd = base
            while feature[nd] >= 0:
                if x[i, feature[nd]] <= threshold[nd]:
                    nd = base + left[nd]
                else:
                    nd = base + right[nd]
            h = value[nd]
            for c in range(n_cols):
                w = weights[t, c]
                if w != 0.0:
                    out[i, c] += alpha * (h * w)


def warm_up():
    """Compile every kernel on tiny inputs (useful before timing runs)."""
    a = np.array([[1.0, 0.0], [0.0, 1.0]])
    v = np.array([1.0, 0.0])
    order = np.array([0, 1], dtype=np.int64)
    sals_epoch(a, order, v, 0.01)
    codes = np.array([[0], [1]], dtype=np.uint8)
    n_thresh = np.array([1], dtype=np.int64)
    nodes = 3
    f = np.empty(nodes, dtype=np.int32)
    c = np.empty(nodes, dtype=np.int32)
    l = np.empty(nodes, dtype=np.int32)
    r = np.empty(nodes, dtype=np.int32)
    val = np.empty(nodes, dtype=np.float64)
    cnt = np.empty(nodes, dtype=np.int64)
    grow_tree(codes, np.array([0.0, 1.0]), n_thresh, 1, 1, 0.0,
              f, c, l, r, val, cnt)
    thr = np.where(f >= 0, 0.5, np.nan)
    out = np.empty(2)
    predict_rows(a, f, thr, l, r, val, out)
    score_ensemble(a, f, thr, l, r, val, np.array([0, 3], dtype=np.int64),
                   np.array([[1.0]]), 0.1, np.zeros((2, 1)))

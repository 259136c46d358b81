"""Compiled tree-growing and routing kernels.

Trees are grown depth-first over an index array that is partitioned in
place. Rows enter with an integer multiplicity ``w`` (their bootstrap count);
all counts below are multiplicity-weighted. NaN in ``X`` is a missing cell.

Node arrays use ``feature == -1`` for leaves. Child pointers are local to the
tree.
"""

from __future__ import annotations

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True, nogil=True)
def _shuffle(a):
    for i in range(a.size - 1, 0, -1):
        j = np.random.randint(0, i + 1)
        a[i], a[j] = a[j], a[i]


@njit(cache=True, nogil=True)
def _gather(X, y, w, idx, start, end, f, vals, rows):
    """Copy non-missing values of feature f into vals/rows; return count and missing weights."""
    cnt = 0
    miss_real = 0.0
    miss_synth = 0.0
    for i in range(start, end):
        r = idx[i]
        v = X[r, f]
        if np.isnan(v):
            if y[r] == 1:
                miss_real += w[r]
            else:
                miss_synth += w[r]
        else:
            vals[cnt] = v
            rows[cnt] = r
            cnt += 1
    return cnt, miss_real, miss_synth


@njit(cache=True, nogil=True)
def _best_split(X, y, w, idx, start, end, mtry, min_leaf, perm, vals, rows):
    """Best Gini split over up to ``mtry`` non-constant features in random order.

    Thresholds are midpoints between consecutive distinct values. Missing
    rows join whichever side holds more non-missing weight (ties: left).
    Gini ties go to the lower feature index, then the lower threshold.
    """
    p = perm.size
    for q in range(p):
        perm[q] = q
    _shuffle(perm)

    best_score = -np.inf
    best_f = -1
    best_thr = 0.0
    best_ml = True
    visited = 0
    for q in range(p):
        if visited >= mtry:
            break
        f = perm[q]
        cnt, miss_real, miss_synth = _gather(X, y, w, idx, start, end, f, vals, rows)
        if cnt < 2:
            continue
        order = np.argsort(vals[:cnt], kind="mergesort")
        if vals[order[0]] == vals[order[cnt - 1]]:
            continue
        visited += 1

        tot_real = 0.0
        tot_synth = 0.0
        for k in range(cnt):
            r = rows[k]
            if y[r] == 1:
                tot_real += w[r]
            else:
                tot_synth += w[r]

        left_real = 0.0
        left_synth = 0.0
        for k in range(cnt - 1):
            r = rows[order[k]]
            if y[r] == 1:
                left_real += w[r]
            else:
                left_synth += w[r]
            v0 = vals[order[k]]
            v1 = vals[order[k + 1]]
            if v1 <= v0:
                continue
            right_real = tot_real - left_real
            right_synth = tot_synth - left_synth
            miss_left = left_real + left_synth >= right_real + right_synth
            if miss_left:
                lr = left_real + miss_real
                ls = left_synth + miss_synth
                rr = right_real
                rs = right_synth
            else:
                lr = left_real
                ls = left_synth
                rr = right_real + miss_real
                rs = right_synth + miss_synth
            nl = lr + ls
            nr = rr + rs
            if nl < min_leaf or nr < min_leaf:
                continue
            score = (lr * lr + ls * ls) / nl + (rr * rr + rs * rs) / nr
            thr = 0.5 * (v0 + v1)
            if thr >= v1:
                thr = v0
            tol = 1e-12 * max(1.0, abs(best_score)) if best_f >= 0 else 0.0
            if best_f < 0 or score > best_score + tol:
                better = True
            elif score >= best_score - tol:
                better = f < best_f or (f == best_f and thr < best_thr)
            else:
                better = False
            if better:
                best_score = score
                best_f = f
                best_thr = thr
                best_ml = miss_left
    return best_f, best_thr, best_ml


@njit(cache=True, nogil=True)
def _random_split(X, y, w, idx, start, end, min_leaf, cand, vals, rows):
    """Uniformly random feature, uniformly random threshold in its node range.

    The threshold is drawn from the sub-range that leaves ``min_leaf`` weight
    on each side, which is the node range conditioned on the split being
    admissible. Features with no admissible threshold are discarded and
    another is drawn.
    """
    p = cand.size
    n_cand = 0
    for f in range(p):
        cnt, _, _ = _gather(X, y, w, idx, start, end, f, vals, rows)
        if cnt < 2:
            continue
        lo = np.inf
        hi = -np.inf
        for k in range(cnt):
            if vals[k] < lo:
                lo = vals[k]
            if vals[k] > hi:
                hi = vals[k]
        if hi > lo:
            cand[n_cand] = f
            n_cand += 1

    while n_cand > 0:
        pick = np.random.randint(0, n_cand)
        f = cand[pick]
        cnt, miss_real, miss_synth = _gather(X, y, w, idx, start, end, f, vals, rows)
        order = np.argsort(vals[:cnt], kind="mergesort")
        total = 0.0
        for k in range(cnt):
            total += w[rows[k]]
        # smallest value whose cumulative weight reaches min_leaf
        acc = 0.0
        lo_val = vals[order[cnt - 1]]
        for k in range(cnt):
            acc += w[rows[order[k]]]
            if acc >= min_leaf:
                lo_val = vals[order[k]]
                break
        # largest value whose suffix weight reaches min_leaf
        acc = 0.0
        hi_val = vals[order[0]]
        for k in range(cnt - 1, -1, -1):
            acc += w[rows[order[k]]]
            if acc >= min_leaf:
                hi_val = vals[order[k]]
                break
        if hi_val > lo_val:
            thr = lo_val + np.random.random() * (hi_val - lo_val)
            if thr < hi_val:
                left = 0.0
                for k in range(cnt):
                    if vals[k] <= thr:
                        left += w[rows[k]]
                return f, thr, left >= total - left
        cand[pick] = cand[n_cand - 1]
        n_cand -= 1
    return -1, 0.0, True


@njit(cache=True, nogil=True)
def grow_tree(X, y, w, discriminate, min_leaf, max_depth, mtry, seed):
    """Grow one tree on the rows of X with positive multiplicity.

    Parameters
    ----------
    X : (rows, p) float64, NaN = missing
    y : (rows,) int8, 1 = real, 0 = synthetic
    w : (rows,) float64 bootstrap multiplicities
    discriminate : bool
        Gini splits on ``y`` when True, completely random splits otherwise.
    max_depth : int
        Negative means unlimited.

    Returns
    -------
    feature, threshold, left, right, missing_left, depth, n_real, n_synth
    """
    np.random.seed(seed)
    idx = np.nonzero(w > 0)[0]
    m = idx.size
    p = X.shape[1]
    cap = 2 * m + 1

    feature = np.full(cap, LEAF, np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    missing_left = np.ones(cap, np.uint8)
    depth = np.zeros(cap, np.int32)
    n_real = np.zeros(cap)
    n_synth = np.zeros(cap)

    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    vals = np.empty(max(m, 1))
    rows = np.empty(max(m, 1), np.int64)
    perm = np.empty(p, np.int64)
    buf = np.empty(max(m, 1), np.int64)

    n_nodes = 1
    sp = 0
    if m > 0:
        st_node[0] = 0
        st_start[0] = 0
        st_end[0] = m
        sp = 1

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]

        wr = 0.0
        ws = 0.0
        for i in range(start, end):
            r = idx[i]
            if y[r] == 1:
                wr += w[r]
            else:
                ws += w[r]
        n_real[node] = wr
        n_synth[node] = ws

        if wr + ws < 2 * min_leaf:
            continue
        if max_depth >= 0 and depth[node] >= max_depth:
            continue
        if discriminate:
            if wr == 0.0 or ws == 0.0:
                continue
            f, thr, ml = _best_split(X, y, w, idx, start, end, mtry, min_leaf, perm, vals, rows)
        else:
            f, thr, ml = _random_split(X, y, w, idx, start, end, min_leaf, perm, vals, rows)
        if f < 0:
            continue

        # stable partition of idx[start:end]
        nl = 0
        nr = 0
        for i in range(start, end):
            r = idx[i]
            v = X[r, f]
            go_left = ml if np.isnan(v) else v <= thr
            if go_left:
                idx[start + nl] = r
                nl += 1
            else:
                buf[nr] = r
                nr += 1
        for i in range(nr):
            idx[start + nl + i] = buf[i]

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feature[node] = f
        threshold[node] = thr
        missing_left[node] = 1 if ml else 0
        left[node] = lc
        right[node] = rc
        depth[lc] = depth[node] + 1
        depth[rc] = depth[node] + 1

        st_node[sp] = rc
        st_start[sp] = start + nl
        st_end[sp] = end
        sp += 1
        st_node[sp] = lc
        st_start[sp] = start
        st_end[sp] = start + nl
        sp += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        missing_left[:n_nodes].copy(),
        depth[:n_nodes].copy(),
        n_real[:n_nodes].copy(),
        n_synth[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def route(X, offsets, feature, threshold, left, right, missing_left, t_lo, t_hi, out):
    """Write the local leaf index of every row of X for trees t_lo..t_hi-1 into out."""
    n = X.shape[0]
    for t in range(t_lo, t_hi):
        base = offsets[t]
        for i in range(n):
            node = 0
            while feature[base + node] >= 0:
                g = base + node
                v = X[i, feature[g]]
                if np.isnan(v):
                    go_left = missing_left[g] == 1
                else:
                    go_left = v <= threshold[g]
                node = left[g] if go_left else right[g]
            out[i, t] = node

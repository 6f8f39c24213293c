"""Decision-tree kernels.

Flat-array tree representation grown by compiled kernels: one kernel for
weighted Gini classification trees (forest, boosting weak learners) and
one for Newton regression trees on gradient/hessian sums (gradient
boosting).  Each feature is sorted once per tree; node partitions keep
the per-feature orderings, so split search is a linear scan.  Splits send
rows with ``x[feature] <= threshold`` left.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NO_DEPTH_LIMIT = 1_000_000
_MIN_GAIN = 1e-12


@njit(cache=True)
def _pick_threshold(lo, hi):
    # Midpoint unless rounding pushed it onto the right value, which would
    # leak right-side rows into the left child under the <= rule.
    thr = 0.5 * (lo + hi)
    if thr >= hi:
        thr = lo
    return thr


@njit(cache=True)
def grow_gini_tree(X, y, w, mtry, min_node_size, max_depth, seed):
    """Grow a weighted classification tree, returning flat node arrays.

    ``value`` holds each node's weighted event fraction; internal nodes
    have ``feature >= 0``.  At every node ``mtry`` candidate features are
    sampled (all features, in index order, when ``mtry >= p``) and the
    split minimising weighted Gini impurity is taken; splits must leave
    ``min_node_size`` rows on each side and strictly reduce impurity.
    """
    n, p = X.shape
    np.random.seed(seed)
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap, np.float64)

    # Row ids sorted per feature (stable), maintained through partitions.
    sorted_rows = np.empty((p, n), np.int64)
    col = np.empty(n, np.float64)
    for f in range(p):
        for i in range(n):
            col[i] = X[i, f]
        sorted_rows[f] = np.argsort(col, kind="mergesort")

    goes_left = np.zeros(n, np.bool_)
    tmp = np.empty(n, np.int64)
    feat_pool = np.arange(p)

    stack_node = np.empty(cap, np.int64)
    stack_start = np.empty(cap, np.int64)
    stack_end = np.empty(cap, np.int64)
    stack_depth = np.empty(cap, np.int64)
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = n
    stack_depth[0] = 0
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        start = stack_start[sp]
        end = stack_end[sp]
        depth = stack_depth[sp]
        m = end - start

        wsum = 0.0
        wpos = 0.0
        for i in range(start, end):
            row = sorted_rows[0, i]
            wsum += w[row]
            wpos += w[row] * y[row]
        prob = wpos / wsum
        value[node] = prob

        if depth >= max_depth or m < 2 * min_node_size or prob <= 0.0 or prob >= 1.0:
            continue

        # Sample the candidate features (partial Fisher-Yates).
        k = mtry if mtry < p else p
        if k < p:
            for i in range(k):
                j = i + np.random.randint(0, p - i)
                t = feat_pool[i]
                feat_pool[i] = feat_pool[j]
                feat_pool[j] = t

        parent_impurity = wsum * 2.0 * prob * (1.0 - prob)
        best_impurity = parent_impurity - _MIN_GAIN
        best_feature = -1
        best_threshold = 0.0

        for fi in range(k):
            f = feat_pool[fi]
            wl = 0.0
            wlpos = 0.0
            for i in range(m - 1):
                row = sorted_rows[f, start + i]
                wl += w[row]
                wlpos += w[row] * y[row]
                if i + 1 < min_node_size or m - i - 1 < min_node_size:
                    continue
                lo = X[row, f]
                hi = X[sorted_rows[f, start + i + 1], f]
                if lo == hi:
                    continue
                wr = wsum - wl
                wrpos = wpos - wlpos
                pl = wlpos / wl
                pr = wrpos / wr
                impurity = wl * 2.0 * pl * (1.0 - pl) + wr * 2.0 * pr * (1.0 - pr)
                if impurity < best_impurity:
                    best_impurity = impurity
                    best_feature = f
                    best_threshold = _pick_threshold(lo, hi)

        if best_feature < 0:
            continue

        nl = 0
        for i in range(start, end):
            row = sorted_rows[best_feature, i]
            flag = X[row, best_feature] <= best_threshold
            goes_left[row] = flag
            if flag:
                nl += 1
        for f in range(p):
            a = 0
            b = nl
            for i in range(start, end):
                row = sorted_rows[f, i]
                if goes_left[row]:
                    tmp[a] = row
                    a += 1
                else:
                    tmp[b] = row
                    b += 1
            for i in range(m):
                sorted_rows[f, start + i] = tmp[i]

        feature[node] = best_feature
        threshold[node] = best_threshold
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_node[sp] = n_nodes
        stack_start[sp] = start
        stack_end[sp] = start + nl
        stack_depth[sp] = depth + 1
        stack_node[sp + 1] = n_nodes + 1
        stack_start[sp + 1] = start + nl
        stack_end[sp + 1] = end
        stack_depth[sp + 1] = depth + 1
        sp += 2
        n_nodes += 2

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes],
            right[:n_nodes], value[:n_nodes])


@njit(cache=True)
def grow_newton_tree(X, g, h, max_depth):
    """Grow a regression tree on gradient/hessian sums (Newton boosting).

    Leaf values are ``-G/H``; splits maximise
    ``GL^2/HL + GR^2/HR - G^2/H`` over all features in index order and
    must improve it strictly.
    """
    n, p = X.shape
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap, np.float64)

    sorted_rows = np.empty((p, n), np.int64)
    col = np.empty(n, np.float64)
    for f in range(p):
        for i in range(n):
            col[i] = X[i, f]
        sorted_rows[f] = np.argsort(col, kind="mergesort")

    goes_left = np.zeros(n, np.bool_)
    tmp = np.empty(n, np.int64)

    stack_node = np.empty(cap, np.int64)
    stack_start = np.empty(cap, np.int64)
    stack_end = np.empty(cap, np.int64)
    stack_depth = np.empty(cap, np.int64)
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = n
    stack_depth[0] = 0
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        start = stack_start[sp]
        end = stack_end[sp]
        depth = stack_depth[sp]
        m = end - start

        gsum = 0.0
        hsum = 0.0
        for i in range(start, end):
            row = sorted_rows[0, i]
            gsum += g[row]
            hsum += h[row]
        value[node] = -gsum / hsum if hsum > 0.0 else 0.0

        if depth >= max_depth or m < 2:
            continue

        parent_score = gsum * gsum / hsum if hsum > 0.0 else 0.0
        best_score = parent_score + _MIN_GAIN
        best_feature = -1
        best_threshold = 0.0

        for f in range(p):
            gl = 0.0
            hl = 0.0
            for i in range(m - 1):
                row = sorted_rows[f, start + i]
                gl += g[row]
                hl += h[row]
                lo = X[row, f]
                hi = X[sorted_rows[f, start + i + 1], f]
                if lo == hi:
                    continue
                gr = gsum - gl
                hr = hsum - hl
                if hl <= 0.0 or hr <= 0.0:
                    continue
                score = gl * gl / hl + gr * gr / hr
                if score > best_score:
                    best_score = score
                    best_feature = f
                    best_threshold = _pick_threshold(lo, hi)

        if best_feature < 0:
            continue

        nl = 0
        for i in range(start, end):
            row = sorted_rows[best_feature, i]
            flag = X[row, best_feature] <= best_threshold
            goes_left[row] = flag
            if flag:
                nl += 1
        for f in range(p):
            a = 0
            b = nl
            for i in range(start, end):
                row = sorted_rows[f, i]
                if goes_left[row]:
                    tmp[a] = row
                    a += 1
                else:
                    tmp[b] = row
                    b += 1
            for i in range(m):
                sorted_rows[f, start + i] = tmp[i]

        feature[node] = best_feature
        threshold[node] = best_threshold
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_node[sp] = n_nodes
        stack_start[sp] = start
        stack_end[sp] = start + nl
        stack_depth[sp] = depth + 1
        stack_node[sp + 1] = n_nodes + 1
        stack_start[sp + 1] = start + nl
        stack_end[sp + 1] = end
        stack_depth[sp + 1] = depth + 1
        sp += 2
        n_nodes += 2

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes],
            right[:n_nodes], value[:n_nodes])


@njit(cache=True)
def predict_tree(feature, threshold, left, right, value, X):
    """Evaluate one flat-array tree on every row of ``X``."""
    n = X.shape[0]
    out = np.empty(n, np.float64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True)
def predict_forest(feature, threshold, left, right, value, offsets, X):
    """Mean prediction of a stack of trees stored back to back.

    Tree ``t`` occupies positions ``offsets[t]:offsets[t+1]`` of the flat
    node arrays, with children indexed relative to the tree start.
    """
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.zeros(n, np.float64)
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            node = base
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = base + left[node]
                else:
                    node = base + right[node]
            out[i] += value[node]
    return out / n_trees


class FlatTree:
    """One grown tree plus convenience prediction."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, arrays):
        self.feature, self.threshold, self.left, self.right, self.value = arrays

    def predict(self, X: np.ndarray) -> np.ndarray:
        return predict_tree(self.feature, self.threshold, self.left,
                            self.right, self.value, np.ascontiguousarray(X))

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

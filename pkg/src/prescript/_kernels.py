"""Compiled inner loop for forest weight aggregates.

Falls back to a numpy implementation when numba is unavailable.
"""
from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None


def _aggregate_py(leaves, leaf_ptr, leaf_sizes, leaf_flat, F, Y, Q, with_bias):
    m, T = leaves.shape
    n = F.shape[0]
    sumsq = np.zeros(m)
    ybar = np.zeros((m, Y.shape[1]))
    bias = np.zeros(m)
    for r in range(m):
        sizes = leaf_sizes[leaves[r]]
        cols = np.concatenate([leaf_flat[leaf_ptr[l]:leaf_ptr[l] + s] for l, s in zip(leaves[r], sizes)])
        vals = np.repeat(1.0 / (T * sizes), sizes)
        w = np.bincount(cols, weights=vals, minlength=n)
        sumsq[r] = w @ w
        ybar[r] = vals @ Y[cols]
        if with_bias:
            bias[r] = vals @ np.sqrt(((F[cols] - Q[r]) ** 2).sum(axis=1))
    return sumsq, ybar, bias


if njit is not None:
    @njit(cache=True)
    def _aggregate_nb(leaves, leaf_ptr, leaf_sizes, leaf_flat, F, Y, Q, with_bias):
        m, T = leaves.shape
        n, D = F.shape
        q = Y.shape[1]
        sumsq = np.zeros(m)
        ybar = np.zeros((m, q))
        bias = np.zeros(m)
        acc = np.zeros(n)
        touched = np.empty(n, dtype=np.int64)
        for r in range(m):
            k = 0
            for t in range(T):
                leaf = leaves[r, t]
                s = leaf_sizes[leaf]
                w = 1.0 / (T * s)
                start = leaf_ptr[leaf]
                for a in range(start, start + s):
                    i = leaf_flat[a]
                    if acc[i] == 0.0:
                        touched[k] = i
                        k += 1
                    acc[i] += w
                    for c in range(q):
                        ybar[r, c] += w * Y[i, c]
                    if with_bias:
                        d2 = 0.0
                        for j in range(D):
                            diff = F[i, j] - Q[r, j]
                            d2 += diff * diff
                        bias[r] += w * np.sqrt(d2)
            total = 0.0
            for a in range(k):
                i = touched[a]
                total += acc[i] * acc[i]
                acc[i] = 0.0
            sumsq[r] = total
        return sumsq, ybar, bias
else:  # pragma: no cover
    _aggregate_nb = None


def _route_py(Q, roots, feature, threshold, left, right, leaf_of_node, depth):
    m, T = Q.shape[0], roots.size
    node = np.tile(roots, m)
    rows = np.repeat(np.arange(m), T)
    for _ in range(depth):
        go_left = Q[rows, feature[node]] <= threshold[node]
        node = np.where(go_left, left[node], right[node])
    return leaf_of_node[node].reshape(m, T)


if njit is not None:
    @njit(cache=True)
    def _route_nb(Q, roots, feature, threshold, left, right, leaf_of_node, depth):
        m, T = Q.shape[0], roots.size
        out = np.empty((m, T), dtype=np.int64)
        for r in range(m):
            for t in range(T):
                node = roots[t]
                while leaf_of_node[node] < 0:
                    if Q[r, feature[node]] <= threshold[node]:
                        node = left[node]
                    else:
                        node = right[node]
                out[r, t] = leaf_of_node[node]
        return out
else:  # pragma: no cover
    _route_nb = None


def route(Q, roots, feature, threshold, left, right, leaf_of_node, depth):
    """(m, T) leaf ids for stacked trees whose leaves loop back to themselves."""
    if _route_nb is not None:
        return _route_nb(np.ascontiguousarray(Q, dtype=float), roots, feature, threshold,
                         left, right, leaf_of_node, depth)
    return _route_py(Q, roots, feature, threshold, left, right, leaf_of_node, depth)


def weight_aggregates(leaves, leaf_ptr, leaf_sizes, leaf_flat, F, Y, Q, with_bias=True):
    """Per query row: (sum_i w_i^2, sum_i w_i Y_i, sum_i w_i ||F_i - q||) for
    forest weights given the (m, T) leaf ids of each query in each tree."""
    args = (np.ascontiguousarray(leaves, dtype=np.int64), np.ascontiguousarray(leaf_ptr, dtype=np.int64),
            np.ascontiguousarray(leaf_sizes, dtype=np.int64), np.ascontiguousarray(leaf_flat, dtype=np.int64),
            np.ascontiguousarray(F, dtype=float), np.ascontiguousarray(Y, dtype=float),
            np.ascontiguousarray(Q, dtype=float), bool(with_bias))
    if _aggregate_nb is not None:
        return _aggregate_nb(*args)
    return _aggregate_py(*args)


def _split_scan_py(features, y, s_rows, e_rows, candidates, gamma, g_s, total):
    m = y.shape[0]
    n_e = e_rows.size
    best_gain, best_f, best_thr = -1.0, -1, 0.0
    left_n = np.arange(1, m, dtype=float)
    right_n = m - left_n
    for f in candidates:
        v = features[s_rows, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        ys = y[order]
        csum = np.cumsum(ys, axis=0)
        csq = np.cumsum((ys * ys).sum(axis=1))
        ls, lq = csum[:-1], csq[:-1]
        rs, rq = csum[-1] - ls, csq[-1] - lq
        sse = (lq - (ls * ls).sum(axis=1) / left_n) + (rq - (rs * rs).sum(axis=1) / right_n)
        gain = total - sse
        thresholds = 0.5 * (vs[:-1] + vs[1:])
        e_left = np.searchsorted(np.sort(features[e_rows, f]), thresholds, side="right")
        ok = ((vs[:-1] < vs[1:]) & (left_n >= g_s) & (right_n >= g_s)
              & (e_left >= gamma) & (n_e - e_left >= gamma))
        if not ok.any():
            continue
        gain = np.where(ok, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] <= 1e-12 * total:
            continue
        if best_f < 0 or gain[k] > best_gain:
            best_gain, best_f, best_thr = float(gain[k]), int(f), float(thresholds[k])
    return best_gain, best_f, best_thr


if njit is not None:
    @njit(cache=True)
    def _split_scan_nb(features, y, s_rows, e_rows, candidates, gamma, g_s, total):
        m, q = y.shape
        n_e = e_rows.size
        best_gain, best_f, best_thr = -1.0, -1, 0.0
        v = np.empty(m)
        ev = np.empty(n_e)
        csum = np.zeros(q)
        for f in candidates:
            for a in range(m):
                v[a] = features[s_rows[a], f]
            order = np.argsort(v, kind="mergesort")
            for a in range(n_e):
                ev[a] = features[e_rows[a], f]
            ev.sort()
            tot = np.zeros(q)
            tot_sq = 0.0
            for a in range(m):
                for c in range(q):
                    tot[c] += y[order[a], c]
                    tot_sq += y[order[a], c] * y[order[a], c]
            csum[:] = 0.0
            csq = 0.0
            e_left = 0
            k_gain, k_thr, found = -np.inf, 0.0, False
            for a in range(m - 1):
                row = order[a]
                for c in range(q):
                    csum[c] += y[row, c]
                    csq += y[row, c] * y[row, c]
                lo, hi = v[row], v[order[a + 1]]
                if not lo < hi:
                    continue
                nl = a + 1.0
                nr = m - nl
                if nl < g_s or nr < g_s:
                    continue
                thr = 0.5 * (lo + hi)
                while e_left < n_e and ev[e_left] <= thr:
                    e_left += 1
                if e_left < gamma or n_e - e_left < gamma:
                    continue
                ls2 = 0.0
                rs2 = 0.0
                for c in range(q):
                    ls2 += csum[c] * csum[c]
                    r = tot[c] - csum[c]
                    rs2 += r * r
                sse = (csq - ls2 / nl) + ((tot_sq - csq) - rs2 / nr)
                g = total - sse
                if g > k_gain:
                    k_gain, k_thr, found = g, thr, True
            if not found or k_gain <= 1e-12 * total:
                continue
            if best_f < 0 or k_gain > best_gain:
                best_gain, best_f, best_thr = k_gain, f, k_thr
        return best_gain, best_f, best_thr
else:  # pragma: no cover
    _split_scan_nb = None


def split_scan(features, y, s_rows, e_rows, candidates, gamma, g_s, total):
    """Best (gain, feature, threshold) of an exhaustive sum-of-squares scan;
    feature is -1 when no admissible split improves the fit.

    A split is admissible when it separates distinct values, leaves at least
    ``g_s`` structure rows and ``gamma`` estimation rows on each side.
    """
    args = (np.ascontiguousarray(features, dtype=float), np.ascontiguousarray(y, dtype=float),
            np.asarray(s_rows, dtype=np.int64), np.asarray(e_rows, dtype=np.int64),
            np.asarray(candidates, dtype=np.int64), int(gamma), int(g_s), float(total))
    if _split_scan_nb is not None:
        return _split_scan_nb(*args)
    return _split_scan_py(*args)

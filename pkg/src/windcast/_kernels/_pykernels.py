"""Vectorized numpy versions of the hot kernels.

Each function mirrors the compiled one in ``_ckernels.pyx`` operation for
operation, so both backends return bit-identical results.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def best_split(X, y, sorted_idx, min_samples_leaf):
    """Best SSE-reducing split of one node.

    ``sorted_idx[f]`` lists the node's rows ordered by feature ``f``.
    Returns ``(feature, threshold, gain, n_left)``; ``feature`` is -1 when no
    admissible split exists.
    """
    n_features, m = sorted_idx.shape
    best = (-1, 0.0, 0.0, 0)
    if m < 2:
        return best
    best_gain = 0.0
    n_left = np.arange(1, m, dtype=np.float64)
    n_right = m - n_left
    size_ok = (n_left >= min_samples_leaf) & (n_right >= min_samples_leaf)
    for f in range(n_features):
        idx = sorted_idx[f]
        xs = X[idx, f]
        cs = np.cumsum(y[idx])
        total = cs[-1]
        sum_left = cs[:-1]
        mean_left = sum_left / n_left
        mean_right = (total - sum_left) / n_right
        diff = mean_left - mean_right
        gain = n_left * n_right / m * (diff * diff)
        ok = size_ok & (xs[:-1] < xs[1:])
        if not ok.any():
            continue
        gain = np.where(ok, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best_gain:
            best_gain = float(gain[i])
            lo, hi = float(xs[i]), float(xs[i + 1])
            thr = 0.5 * (lo + hi)
            if thr >= hi:
                thr = lo
            best = (f, thr, best_gain, i + 1)
    return best


def partition_sorted(sorted_idx, go_left):
    """Split every per-feature sorted row list into left/right, keeping order."""
    mask = np.asarray(go_left).astype(bool, copy=False)[sorted_idx]
    n_features = sorted_idx.shape[0]
    left = sorted_idx[mask].reshape(n_features, -1)
    right = sorted_idx[~mask].reshape(n_features, -1)
    return np.ascontiguousarray(left), np.ascontiguousarray(right)


def rolling_stats(x, w):
    """Trailing-window mean, max, min and sample std (NaN before ``w`` points).

    Sums run left to right inside each window so the result matches a plain
    per-window loop exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.full((4, n), np.nan)
    k = n - w + 1
    if w < 1 or k <= 0:
        return out[0], out[1], out[2], out[3]
    s = x[0:k].copy()
    mx = x[0:k].copy()
    mn = x[0:k].copy()
    for j in range(1, w):
        seg = x[j:j + k]
        s += seg
        np.maximum(mx, seg, out=mx)
        np.minimum(mn, seg, out=mn)
    mean = s / w
    if w > 1:
        d = x[0:k] - mean
        ss = d * d
        for j in range(1, w):
            d = x[j:j + k] - mean
            ss += d * d
        std = np.sqrt(ss / (w - 1))
    else:
        std = np.zeros(k)
    out[0, w - 1:] = mean
    out[1, w - 1:] = mx
    out[2, w - 1:] = mn
    out[3, w - 1:] = std
    return out[0], out[1], out[2], out[3]


def predict_forest(X, feature, threshold, left, right, value, roots):
    """Sum of tree outputs per row; trees are stored in flat node arrays."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    out = np.zeros(n)
    rows = np.arange(n)
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        while True:
            f = feature[node]
            inner = f >= 0
            if not inner.any():
                break
            r = rows[inner]
            nd = node[inner]
            go_left = X[r, f[inner]] <= threshold[nd]
            node[inner] = np.where(go_left, left[nd], right[nd])
        out += value[node]
    return out

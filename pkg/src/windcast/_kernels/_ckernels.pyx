# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics match ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, NAN

cnp.import_array()

BACKEND = "cython"


def best_split(const double[:, ::1] X, const double[::1] y,
               const cnp.int64_t[:, ::1] sorted_idx, Py_ssize_t min_samples_leaf):
    cdef Py_ssize_t n_features = sorted_idx.shape[0]
    cdef Py_ssize_t m = sorted_idx.shape[1]
    cdef Py_ssize_t f, i, r, r_next
    cdef double total, cs, nl, nr, mean_l, mean_r, diff, gain, lo, hi, thr
    cdef double best_gain = 0.0, best_thr = 0.0
    cdef Py_ssize_t best_f = -1, best_nl = 0
    if m < 2:
        return (-1, 0.0, 0.0, 0)
    with nogil:
        for f in range(n_features):
            total = 0.0
            for i in range(m):
                total = total + y[sorted_idx[f, i]]
            cs = 0.0
            for i in range(m - 1):
                r = sorted_idx[f, i]
                r_next = sorted_idx[f, i + 1]
                cs = cs + y[r]
                nl = <double>(i + 1)
                nr = <double>(m - i - 1)
                if nl < min_samples_leaf or nr < min_samples_leaf:
                    continue
                lo = X[r, f]
                hi = X[r_next, f]
                if not (lo < hi):
                    continue
                mean_l = cs / nl
                mean_r = (total - cs) / nr
                diff = mean_l - mean_r
                gain = nl * nr / m * (diff * diff)
                if gain > best_gain:
                    best_gain = gain
                    thr = 0.5 * (lo + hi)
                    if thr >= hi:
                        thr = lo
                    best_thr = thr
                    best_f = f
                    best_nl = i + 1
    if best_f < 0:
        return (-1, 0.0, 0.0, 0)
    return (best_f, best_thr, best_gain, best_nl)


def partition_sorted(const cnp.int64_t[:, ::1] sorted_idx, go_left):
    cdef cnp.uint8_t[::1] gl = np.ascontiguousarray(go_left, dtype=np.uint8)
    cdef Py_ssize_t n_features = sorted_idx.shape[0]
    cdef Py_ssize_t m = sorted_idx.shape[1]
    cdef Py_ssize_t f, i, a, b, n_left = 0
    cdef cnp.int64_t r
    if n_features > 0:
        for i in range(m):
            if gl[sorted_idx[0, i]]:
                n_left += 1
    left_arr = np.empty((n_features, n_left), dtype=np.int64)
    right_arr = np.empty((n_features, m - n_left), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] left = left_arr
    cdef cnp.int64_t[:, ::1] right = right_arr
    with nogil:
        for f in range(n_features):
            a = 0
            b = 0
            for i in range(m):
                r = sorted_idx[f, i]
                if gl[r]:
                    left[f, a] = r
                    a += 1
                else:
                    right[f, b] = r
                    b += 1
    return left_arr, right_arr


def rolling_stats(x, Py_ssize_t w):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    out_arr = np.full((4, n), np.nan)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t, j
    cdef double s, mx, mn, v, mean, d, ss
    if w < 1 or n - w + 1 <= 0:
        return out_arr[0], out_arr[1], out_arr[2], out_arr[3]
    with nogil:
        for t in range(w - 1, n):
            s = xv[t - w + 1]
            mx = s
            mn = s
            for j in range(1, w):
                v = xv[t - w + 1 + j]
                s = s + v
                if v > mx:
                    mx = v
                if v < mn:
                    mn = v
            mean = s / w
            out[0, t] = mean
            out[1, t] = mx
            out[2, t] = mn
            if w > 1:
                d = xv[t - w + 1] - mean
                ss = d * d
                for j in range(1, w):
                    d = xv[t - w + 1 + j] - mean
                    ss = ss + d * d
                out[3, t] = sqrt(ss / (w - 1))
            else:
                out[3, t] = 0.0
    return out_arr[0], out_arr[1], out_arr[2], out_arr[3]


def predict_forest(X, const cnp.int64_t[::1] feature, const double[::1] threshold,
                   const cnp.int64_t[::1] left, const cnp.int64_t[::1] right,
                   const double[::1] value, const cnp.int64_t[::1] roots):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0]
    cdef Py_ssize_t n_trees = roots.shape[0]
    out_arr = np.zeros(n)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, k
    cdef cnp.int64_t node, f
    with nogil:
        for k in range(n_trees):
            for i in range(n):
                node = roots[k]
                f = feature[node]
                while f >= 0:
                    if Xv[i, f] <= threshold[node]:
                        node = left[node]
                    else:
                        node = right[node]
                    f = feature[node]
                out[i] = out[i] + value[node]
    return out_arr

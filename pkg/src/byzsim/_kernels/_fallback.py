"""Pure numpy implementations of the aggregation kernels.

Every kernel takes a C-contiguous float64 matrix ``X`` of shape ``(n, d)``,
one row per worker message. Reductions over workers run in ascending row
order (``np.add.reduce`` along axis 0 accumulates row by row), which keeps
results bit-identical from run to run.
"""
import numpy as np


def column_mean(X):
    return np.add.reduce(X, axis=0) / X.shape[0]


def coordinate_median(X):
    # lower-middle order statistic for even n
    n = X.shape[0]
    return np.sort(X, axis=0)[(n - 1) // 2].copy()


def trimmed_mean(X, b):
    n = X.shape[0]
    kept = np.sort(X, axis=0)[b:n - b]
    return np.add.reduce(kept, axis=0) / (n - 2 * b)


def pairwise_sq_dists(X):
    n = X.shape[0]
    D = np.empty((n, n))
    for i in range(n):
        diff = X - X[i]
        D[i] = np.add.reduce(diff * diff, axis=1)
    return D


def krum_scores(X, m):
    """Sum of squared distances from each row to its ``m`` nearest other rows."""
    n = X.shape[0]
    D = pairwise_sq_dists(X)
    scores = np.empty(n)
    for i in range(n):
        others = np.sort(np.delete(D[i], i))
        acc = 0.0
        for k in range(m):
            acc += others[k]
        scores[i] = acc
    return scores


def _row_norms(diff):
    return np.sqrt(np.add.reduce(diff * diff, axis=1))


def weiszfeld(X, iters, smoothing):
    v = column_mean(X)
    for _ in range(iters):
        w = 1.0 / np.maximum(smoothing, _row_norms(X - v))
        v = np.add.reduce(X * w[:, None], axis=0) / np.add.reduce(w)
    return v


def centered_clip(X, v0, tau, iters):
    n = X.shape[0]
    v = np.array(v0, dtype=np.float64, copy=True)
    for _ in range(iters):
        diff = X - v
        norms = _row_norms(diff)
        scale = np.ones(n)
        over = norms > tau
        scale[over] = tau / norms[over]
        v = v + np.add.reduce(diff * scale[:, None], axis=0) / n
    return v

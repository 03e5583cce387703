"""Statistical distances between ensembles and reference laws."""

import numpy as np
from scipy.stats import wasserstein_distance

from .streams import PROJECTIONS, substream


def ks_statistic(sample, cdf):
    """One-sample Kolmogorov-Smirnov statistic against a cdf callable."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = x.size
    F = np.asarray(cdf(x), dtype=float)
    grid = np.arange(1, n + 1) / n
    return float(max(np.abs(grid - F).max(), np.abs(grid - 1.0 / n - F).max()))


def ks_two_sample(a, b):
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    allv = np.concatenate([a, b])
    ca = np.searchsorted(a, allv, side="right") / a.size
    cb = np.searchsorted(b, allv, side="right") / b.size
    return float(np.abs(ca - cb).max())


def wasserstein1(a, b):
    """Exact 1-d Wasserstein-1 distance between two samples."""
    return float(wasserstein_distance(np.ravel(a), np.ravel(b)))


def sliced_wasserstein1(X, Y, n_projections=32, seed=0):
    """Mean 1-d Wasserstein-1 distance over seeded random directions."""
    X = np.atleast_2d(X)
    Y = np.atleast_2d(Y)
    d = X.shape[1]
    if d == 1:
        return wasserstein1(X, Y)
    rng = substream(seed, PROJECTIONS)
    dirs = rng.standard_normal((n_projections, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vals = [wasserstein1(X @ u, Y @ u) for u in dirs]
    return float(np.mean(vals))


def energy_distance_nd(X, Y, max_points=2000, seed=0):
    """Energy distance between two clouds (subsampled for O(n^2) cost)."""
    rng = substream(seed, PROJECTIONS, 1)
    X = np.atleast_2d(X)
    Y = np.atleast_2d(Y)
    if X.shape[0] > max_points:
        X = X[rng.choice(X.shape[0], max_points, replace=False)]
    if Y.shape[0] > max_points:
        Y = Y[rng.choice(Y.shape[0], max_points, replace=False)]

    def mean_dist(A, B):
        d2 = (
            np.sum(A * A, axis=1)[:, None]
            - 2.0 * A @ B.T
            + np.sum(B * B, axis=1)[None, :]
        )
        return float(np.sqrt(np.maximum(d2, 0.0)).mean())

    val = 2.0 * mean_dist(X, Y) - mean_dist(X, X) - mean_dist(Y, Y)
    return float(max(val, 0.0))

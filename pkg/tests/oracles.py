"""Slow, obviously-correct reference computations used only by the tests."""

import math

import numpy as np


def naive_min_distances(queries, refs):
    """Double loop over (query, reference); first index wins ties."""
    q = np.asarray(queries, dtype=np.float64)
    r = np.asarray(refs, dtype=np.float64)
    dist = np.empty(len(q))
    idx = np.empty(len(q), dtype=np.int64)
    for i in range(len(q)):
        best, best_j = math.inf, -1
        d_all = np.sqrt(((r - q[i]) ** 2).sum(axis=1))
        for j in range(len(r)):
            if d_all[j] < best:
                best, best_j = d_all[j], j
        dist[i], idx[i] = best, best_j
    return dist, idx


def naive_knn(values, k, exclude_self=True):
    x = np.asarray(values, dtype=np.float64)
    idx = np.empty((len(x), k), dtype=np.int64)
    dist = np.empty((len(x), k))
    for i in range(len(x)):
        d = np.sqrt(((x - x[i]) ** 2).sum(axis=1))
        pairs = sorted((d[j], j) for j in range(len(x)) if not (exclude_self and j == i))
        idx[i] = [j for _, j in pairs[:k]]
        dist[i] = [v for v, _ in pairs[:k]]
    return dist, idx


def naive_id(values, k1, k2):
    """Levina-Bickel average written out term by term."""
    dist, _ = naive_knn(values, k2)
    total = 0.0
    for row in dist:
        for k in range(k1, k2 + 1):
            s = sum(math.log(row[k - 1] / row[j]) for j in range(k - 1))
            total += (k - 1) / s
    return total / (len(dist) * (k2 - k1 + 1))


def bisect_root(f, lo, hi, tol=1e-13, max_iter=500):
    """Root of a monotone function on [lo, hi] by bisection in log space."""
    flo = f(lo)
    a, b = math.log(lo), math.log(hi)
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        fm = f(math.exp(m))
        if (fm > 0) == (flo > 0):
            a, flo = m, fm
        else:
            b = m
        if b - a < tol:
            break
    return math.exp(0.5 * (a + b))


def rotated_cube(n, d, ambient, seed):
    """Uniform points in a d-cube, rotated into ``ambient`` dimensions."""
    rng = np.random.default_rng(seed)
    x = np.zeros((n, ambient))
    x[:, :d] = rng.uniform(0.0, 1.0, size=(n, d))
    q, _ = np.linalg.qr(rng.normal(size=(ambient, ambient)))
    return x @ q.T


def fifty_fifty_fixture(alpha=8.0, seed=0):
    """100 training rows; 50 exact copies and 50 rows exactly 2*alpha away.

    Training rows have zero in the last coordinate, so pushing a copy by
    2*alpha along that axis puts it exactly 2*alpha from its source and
    strictly further from every other row.
    """
    rng = np.random.default_rng(seed)
    dim = 16
    train = np.zeros((100, dim), dtype=np.float32)
    train[:, :-1] = rng.integers(0, 64, size=(100, dim - 1)) * 4.0
    copies = train[rng.choice(100, 50, replace=False)]
    far = train[rng.choice(100, 50, replace=False)].copy()
    far[:, -1] = 2 * alpha
    return train, np.concatenate([copies, far]).astype(np.float32)

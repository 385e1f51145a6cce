"""Seeded k-means (k-means++ init, Lloyd iterations).

Hand-rolled rather than delegated so that the exact seeding and
tie-breaking behavior is pinned down: identical (data, k, seed) always
yields identical centroids and labels.
"""

from __future__ import annotations

import numpy as np


def kmeans(
    points: np.ndarray, k: int, seed: int, max_iter: int = 300
) -> tuple[np.ndarray, np.ndarray]:
    """Cluster rows of ``points`` into k groups.

    Returns (centroids (k, d), labels (n,)). Labels are argmin of squared
    distance with ties going to the lowest centroid index. Empty clusters
    are repaired by stealing the point farthest from its own centroid.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of rows n={n}")
    rng = np.random.default_rng(seed)
    centroids = _plus_plus_init(points, k, rng)

    labels = None
    for _ in range(max_iter):
        d2 = _sq_dists(points, centroids)
        new_labels = np.argmin(d2, axis=1)
        new_labels = _fix_empty(points, centroids, new_labels, k)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            centroids[c] = points[labels == c].mean(axis=0)
    return centroids, labels


def _plus_plus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(points, points[chosen[-1]][None, :])[:, 0]
    while len(chosen) < k:
        total = d2.sum()
        if total <= 0:
            # all remaining mass at distance 0: pick uniformly among unchosen
            candidates = np.setdiff1d(np.arange(n), np.asarray(chosen))
            chosen.append(int(rng.choice(candidates)))
        else:
            chosen.append(int(rng.choice(n, p=d2 / total)))
        d2 = np.minimum(d2, _sq_dists(points, points[chosen[-1]][None, :])[:, 0])
    return points[np.asarray(chosen)].copy()


def _fix_empty(
    points: np.ndarray, centroids: np.ndarray, labels: np.ndarray, k: int
) -> np.ndarray:
    counts = np.bincount(labels, minlength=k)
    for c in np.flatnonzero(counts == 0):
        own = _sq_dists(points, centroids)[np.arange(len(labels)), labels]
        # only steal from clusters that can spare a point
        own[counts[labels] <= 1] = -np.inf
        idx = int(np.argmax(own))
        counts[labels[idx]] -= 1
        labels = labels.copy()
        labels[idx] = c
        counts[c] = 1
        centroids[c] = points[idx]
    return labels


def _sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    sq = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(y * y, axis=1)[None, :]
        - 2.0 * (x @ y.T)
    )
    return np.maximum(sq, 0.0)

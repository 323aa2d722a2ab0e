"""Exact Euclidean k-nearest-neighbor graphs."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from .core import NeighborGraph, ParameterError, PointCloud

# rows per cdist block; bounds peak memory at about CHUNK * N * 8 bytes
_CHUNK = 512


def _as_points(points):
    if isinstance(points, PointCloud):
        return points.points
    pts = np.asarray(points, dtype=float)
    return pts[:, None] if pts.ndim == 1 else pts


def _select_row(drow, self_index, k):
    # Candidates are every entry no farther than the k-th smallest value, so
    # ties straddling the cut are all present before the index tie-break.
    part = np.argpartition(drow, k - 1)[:k]
    cut = drow[part].max()
    cand = np.flatnonzero(drow <= cut)
    key = drow[cand].copy()
    key[cand == self_index] = -1.0
    order = np.lexsort((cand, key))[:k]
    return cand[order], drow[cand[order]]


def knn(points, k: int) -> NeighborGraph:
    """Exact k-NN graph including each point as its own first neighbor.

    Distances are evaluated directly from coordinate differences (no Gram
    matrix shortcut), and ties are broken by ascending sample index.

    Parameters
    ----------
    points : PointCloud or array-like of shape (N, m)
    k : int
        Number of neighbors per point, counting the point itself.

    Returns
    -------
    NeighborGraph
    """
    x = _as_points(points)
    n = x.shape[0]
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ParameterError(f"k must be a positive integer, got {k!r}")
    if k > n:
        raise ParameterError(f"k={k} exceeds the number of points N={n}")

    indices = np.empty((n, k), dtype=np.intp)
    distances = np.empty((n, k))
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        block = cdist(x[start:stop], x)
        for r, drow in enumerate(block):
            i = start + r
            indices[i], distances[i] = _select_row(drow, i, k)
    distances[:, 0] = 0.0
    return NeighborGraph(indices, distances)


def knn_query(train, queries, k: int):
    """k nearest training points for each query row (no self convention).

    Returns ``(indices, distances)`` arrays of shape ``(n_queries, k)``.
    """
    x = _as_points(train)
    q = _as_points(queries)
    if k > x.shape[0]:
        raise ParameterError(f"k={k} exceeds the number of training points {x.shape[0]}")
    idx = np.empty((q.shape[0], k), dtype=np.intp)
    dist = np.empty((q.shape[0], k))
    for start in range(0, q.shape[0], _CHUNK):
        block = cdist(q[start:start + _CHUNK], x)
        for r, drow in enumerate(block):
            idx[start + r], dist[start + r] = _select_row(drow, -1, k)
    return idx, dist

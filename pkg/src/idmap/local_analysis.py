"""Weighted local charts, bandwidth tuning and local derivative estimation.

For a base point ``x_i`` with neighbors ``x_I(j)`` at distances ``d(j)`` and a
bandwidth ``eps`` the chart uses Gaussian weights
``w_j = exp(-d(j)**2 / (2 eps))`` and their biased sum ``D = sum_j w_j``
(the self term ``w_1 = 1`` is included). Row ``j`` of the chart matrix is
``sqrt(w_j / D) * (x_I(j) - x_i)``.

Tangent singular values of that matrix scale like ``eps**0.5`` and normal
ones like ``eps`` or faster, which drives both dimension estimates used to
pick the bandwidth:

* ``d1``: twice the log-log slope of ``D`` against ``eps``;
* ``d2``: twice the summed log-log slopes of the leading ``floor(d1)``
  singular values plus a fractional share of the next one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import (
    DegenerateGeometryError,
    FeatureSet,
    NeighborGraph,
    ParameterError,
    PointCloud,
)

EPS_MACH = np.finfo(float).eps
# relative singular-value cutoff for the regression pseudo-inverse
RCOND = 1e-8


class RankDeficiencyWarning(UserWarning):
    """A local regression was solved on a truncated singular spectrum."""


class AmbiguousFrameWarning(UserWarning):
    """The requested tangent dimension splits a (near) repeated singular value."""


def _coords(points):
    if isinstance(points, PointCloud):
        return points.points
    return np.asarray(points, dtype=float)


def _values(features):
    if features is None:
        return None
    if isinstance(features, FeatureSet):
        return features.values
    vals = np.asarray(features, dtype=float)
    return vals[:, None] if vals.ndim == 1 else vals


# ---------------------------------------------------------------------------
# charts

@dataclass(frozen=True)
class LocalChart:
    base_index: int
    epsilon: float
    weights: np.ndarray
    weight_sum: float
    X: np.ndarray
    Y: np.ndarray | None = None

    @cached_property
    def _svd(self):
        _, s, vt = np.linalg.svd(self.X, full_matrices=False)
        return s, vt

    @property
    def singular_values(self) -> np.ndarray:
        return self._svd[0]

    @property
    def right_vectors(self) -> np.ndarray:
        """Rows are ambient-space singular directions, sorted like the values."""
        return self._svd[1]


def build_chart(points, graph: NeighborGraph, i: int, epsilon: float,
                features=None) -> LocalChart:
    """Weighted local chart of point ``i`` at bandwidth ``epsilon``."""
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    x = _coords(points)
    if not 0 <= i < x.shape[0]:
        raise ParameterError(f"base index {i} out of range")
    idx = graph.indices[i]
    w = np.exp(-graph.distances[i] ** 2 / (2.0 * epsilon))
    D = float(w.sum())
    scale = np.sqrt(w / D)[:, None]
    X = scale * (x[idx] - x[i])
    Y = None
    y = _values(features)
    if y is not None:
        Y = scale * (y[idx] - y[i])
    return LocalChart(int(i), float(epsilon), w, D, X, Y)


# ---------------------------------------------------------------------------
# bandwidth scans

def epsilon_range(distances):
    """``(eps_min, eps_max)`` for one row of neighbor distances.

    ``eps_min`` is where the nearest non-self weight reaches machine
    precision. ``eps_max`` is ``10 * d(k)``, widened to ``10 * d(k)**2`` when
    that is larger so every weight saturates at the top of the grid.
    """
    d = np.asarray(distances, dtype=float)
    positive = d[d > 0]
    if positive.size == 0:
        raise DegenerateGeometryError(
            "all neighbors coincide with the base point; no bandwidth can be tuned")
    d2 = positive[0]
    dk = d[-1]
    eps_min = d2 ** 2 / (2.0 * abs(math.log(EPS_MACH)))
    eps_max = max(10.0 * dk, 10.0 * dk ** 2)
    return eps_min, eps_max


def epsilon_grid(eps_min, eps_max, L):
    """Log-uniform grid ``eps(l)``, ``l = 1..L``, ending exactly at ``eps_max``."""
    l = np.arange(1, L + 1)
    lo, hi = math.log(eps_min), math.log(eps_max)
    return np.exp(lo + (l / L) * (hi - lo))


def log_slope(values, eps):
    """Forward finite difference of ``log(values)`` against ``log(eps)``.

    Entry ``l`` belongs to the left end of the pair ``(l, l+1)``. Non-positive
    inputs give NaN.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        lv = np.log(np.where(values > 0, values, np.nan))
    le = np.log(eps)
    return np.diff(lv, axis=0) / np.diff(le).reshape((-1,) + (1,) * (lv.ndim - 1))


@dataclass(frozen=True)
class BandwidthScan:
    base_index: int
    eps: np.ndarray            # (L,)
    D: np.ndarray              # (L,)
    d1: np.ndarray             # (L-1,), left-endpoint convention
    mode: str
    selected: int              # index l* into d1 / eps
    eps_selected: float        # eps(l* + 1)
    dim_selected: float
    singular_values: np.ndarray | None = None   # (L, r)
    alpha: np.ndarray | None = None             # (L-1, r), NaN where undefined
    d2: np.ndarray | None = None                # (L-1,)
    d_ave: np.ndarray | None = None             # (L-1,)
    metric: np.ndarray | None = None            # (L-2,)

    @property
    def L(self) -> int:
        return self.eps.size

    def table(self):
        """Rows ``eps, D, d1, sigma_1.., alpha_1.., d2, d_ave, M`` padded with NaN."""
        L = self.L
        cols = [self.eps, self.D, _pad(self.d1, L)]
        names = ["eps", "D", "d1"]
        if self.singular_values is not None:
            r = self.singular_values.shape[1]
            cols += [self.singular_values[:, j] for j in range(r)]
            cols += [_pad(self.alpha[:, j], L) for j in range(r)]
            cols += [_pad(self.d2, L), _pad(self.d_ave, L), _pad(self.metric, L)]
            names += [f"sigma_{j + 1}" for j in range(r)]
            names += [f"alpha_{j + 1}" for j in range(r)]
            names += ["d2", "d_ave", "M"]
        return names, np.column_stack(cols)


def _pad(a, L):
    out = np.full(L, np.nan)
    out[: a.size] = a
    return out


def _chart_singular_values(diffs, dist, eps):
    # diffs (k, m) unweighted offsets; returns (L, min(k, m)) singular values
    w = np.exp(-dist[None, :] ** 2 / (2.0 * eps[:, None]))
    D = w.sum(axis=1)
    X = np.sqrt(w / D[:, None])[:, :, None] * diffs[None, :, :]
    return np.linalg.svd(X, compute_uv=False)


def scaling_laws(scan_or_sigma, eps=None):
    """Log-log slopes ``alpha(l, j)`` of every singular value.

    Accepts a :class:`BandwidthScan` carrying singular values, or the raw
    ``(L, r)`` singular value array together with its ``eps`` grid. Entries
    involving a zero singular value are NaN.
    """
    if isinstance(scan_or_sigma, BandwidthScan):
        if scan_or_sigma.singular_values is None:
            raise ParameterError("scan has no singular values; rerun in robust mode")
        sigma, eps = scan_or_sigma.singular_values, scan_or_sigma.eps
    else:
        sigma = np.asarray(scan_or_sigma, dtype=float)
    if sigma.shape[0] < 2:
        raise ParameterError("scaling laws need at least two grid points")
    return log_slope(sigma, np.asarray(eps, dtype=float))


def determinant_dimension(d1, alpha):
    """``d2 = 2 sum_{j<=floor(d1)} alpha_j + 2 (d1 - floor(d1)) alpha_{floor(d1)+1}``.

    Undefined (NaN) slopes contribute zero.
    """
    d1 = np.asarray(d1, dtype=float)
    a = np.nan_to_num(np.asarray(alpha, dtype=float), nan=0.0)
    r = a.shape[1]
    out = np.empty(d1.shape)
    for l, dl in enumerate(d1):
        if not np.isfinite(dl):
            out[l] = np.nan
            continue
        d0 = max(int(math.floor(dl)), 0)
        total = 2.0 * a[l, : min(d0, r)].sum()
        if d0 < r:
            total += 2.0 * (dl - d0) * a[l, d0]
        out[l] = total
    return out


def agreement_metric(d1, d2, eps):
    """``|d1 - d2| / d_ave + |dlog d1 / dlog eps| + |dlog d2 / dlog eps|``.

    Defined on the first ``L - 2`` grid points; infinite where a logarithm
    is undefined.
    """
    d_ave = 0.5 * (d1 + d2)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs((d1 - d2) / d_ave)
    s1 = np.abs(log_slope(d1, eps[:-1]))
    s2 = np.abs(log_slope(d2, eps[:-1]))
    M = rel[:-1] + s1 + s2
    return np.where(np.isfinite(M), M, np.inf)


def bandwidth_scan(points, graph: NeighborGraph, i: int, L: int = 100,
                   mode: str = "simple", eps_grid=None) -> BandwidthScan:
    """Scan a log-spaced bandwidth grid at point ``i`` and select one value.

    ``simple`` mode picks the maximiser ``l*`` of ``d1`` and reports
    ``d1(l*)`` as the dimension. ``robust`` mode also computes singular
    values, their scaling laws, ``d2`` and the agreement metric, then picks
    the minimiser of the metric and reports ``(d1 + d2) / 2`` there. Both use
    ``eps(l* + 1)`` as the selected bandwidth.

    ``eps_grid`` overrides the automatic grid (for fixed plotting grids).
    """
    if mode not in ("simple", "robust"):
        raise ParameterError(f"mode must be 'simple' or 'robust', got {mode!r}")
    if graph.k < 2:
        raise ParameterError("a bandwidth scan needs k >= 2 neighbors")
    x = _coords(points)
    dist = graph.distances[i]
    if eps_grid is None:
        if L < 3:
            raise ParameterError(f"L must be at least 3, got {L}")
        eps = epsilon_grid(*epsilon_range(dist), L)
    else:
        eps = np.asarray(eps_grid, dtype=float)
        if eps.size < 3 or np.any(np.diff(eps) <= 0) or eps[0] <= 0:
            raise ParameterError("eps_grid must be positive, strictly increasing, length >= 3")
        if not np.any(dist > 0):
            raise DegenerateGeometryError("all neighbors coincide with the base point")

    w = np.exp(-dist[None, :] ** 2 / (2.0 * eps[:, None]))
    D = w.sum(axis=1)
    d1 = 2.0 * log_slope(D, eps)

    if mode == "simple":
        l_star = int(np.nanargmax(d1))
        return BandwidthScan(int(i), eps, D, d1, mode, l_star,
                             float(eps[l_star + 1]), float(d1[l_star]))

    diffs = x[graph.indices[i]] - x[i]
    sigma = _chart_singular_values(diffs, dist, eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = scaling_laws(sigma, eps)
    d2 = determinant_dimension(d1, alpha)
    d_ave = 0.5 * (d1 + d2)
    metric = agreement_metric(d1, d2, eps)
    ok = np.isfinite(metric) & (d_ave[:-1] > 0)
    if not ok.any():
        warnings.warn(f"point {i}: agreement metric undefined everywhere; "
                      "falling back to the d1 maximiser", RuntimeWarning, stacklevel=2)
        l_star = int(np.nanargmax(d1))
        dim = float(d1[l_star])
    else:
        l_star = int(np.argmin(np.where(ok, metric, np.inf)))
        dim = float(d_ave[l_star])
    return BandwidthScan(int(i), eps, D, d1, mode, l_star, float(eps[l_star + 1]), dim,
                         sigma, alpha, d2, d_ave, metric)


def trace_dimension(points, graph: NeighborGraph, i: int, eps) -> np.ndarray:
    """``(1/eps) * sum_j sigma_j**2`` of the chart at each bandwidth.

    This equals ``2 dlog D / dlog eps`` analytically, the continuous
    counterpart of ``d1``.
    """
    x = _coords(points)
    eps = np.asarray(eps, dtype=float)
    dist = graph.distances[i]
    w = np.exp(-dist[None, :] ** 2 / (2.0 * eps[:, None]))
    D = w.sum(axis=1)
    # trace(X^T X) = sum_j (w_j / D) |x_j - x_i|^2
    sq = np.sum((x[graph.indices[i]] - x[i]) ** 2, axis=1)
    return (w @ sq) / D / eps


# ---------------------------------------------------------------------------
# per-chart estimators

@dataclass(frozen=True)
class TangentFrame:
    basis: np.ndarray                 # (d, m), orthonormal rows
    residual_values: np.ndarray       # trailing singular values
    ambiguous: bool = False


def tangent_frame(chart: LocalChart, d: int, rtol: float = 1e-8) -> TangentFrame:
    """Top ``d`` right singular directions of the chart."""
    s, vt = chart.singular_values, chart.right_vectors
    d = int(d)
    if not 1 <= d <= min(chart.X.shape):
        raise ParameterError(f"tangent dimension {d} outside [1, {min(chart.X.shape)}]")
    ambiguous = bool(d < s.size and abs(s[d - 1] - s[d]) <= rtol * max(s[0], 1e-300))
    if ambiguous:
        warnings.warn(f"singular values {d} and {d + 1} coincide; frame is not unique",
                      AmbiguousFrameWarning, stacklevel=2)
    return TangentFrame(vt[:d].copy(), s[d:].copy(), ambiguous)


def density_estimate(chart: LocalChart, d: float, n_samples: int) -> float:
    """Sampling density ``q = D / (N (2 pi eps)^(d/2))`` at the chart's base point."""
    if not d > 0:
        raise ParameterError(f"dimension must be positive, got {d}")
    return chart.weight_sum / (n_samples * (2.0 * math.pi * chart.epsilon) ** (d / 2.0))


def _regress(X, Y, rcond=RCOND):
    # minimiser of ||Y - X G^T||_F on the truncated spectrum of X
    u, s, vt = np.linalg.svd(X, full_matrices=False)
    keep = s > rcond * s[0] if s.size and s[0] > 0 else np.zeros(s.shape, bool)
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    G = (Y.T @ u) * inv @ vt
    return G, int(keep.sum())


def estimate_derivative(chart: LocalChart) -> np.ndarray:
    """Weighted least-squares derivative, an ``n x m`` matrix."""
    if chart.Y is None:
        raise ParameterError("chart was built without features")
    G, rank = _regress(chart.X, chart.Y)
    if rank < chart.X.shape[1]:
        warnings.warn(f"point {chart.base_index}: regression truncated to rank {rank}",
                      RankDeficiencyWarning, stacklevel=2)
    return G


def correlation_derivative(chart: LocalChart) -> np.ndarray:
    """Correlation estimate ``(1/eps) Y^T X`` of the derivative (diagnostic only)."""
    if chart.Y is None:
        raise ParameterError("chart was built without features")
    return chart.Y.T @ chart.X / chart.epsilon


def estimate_derivative_affine(points, features, center, epsilon, k, rank=None):
    """Derivative at an arbitrary location without knowing its feature value.

    Fits ``y_j ~ b + G (x_j - center)`` on the ``k`` nearest samples with
    weights ``exp(-|x_j - center|**2 / (2 eps))``. Returns ``(G, b)``.
    With ``rank`` given, ``G`` is projected onto the leading ``rank``
    directions of the weighted, centered neighbor offsets.
    """
    from .neighbors import knn_query

    x = _coords(points)
    y = _values(features)
    center = np.asarray(center, dtype=float).ravel()
    idx, dist = knn_query(x, center[None, :], k)
    idx, dist = idx[0], dist[0]
    w = np.sqrt(np.exp(-dist ** 2 / (2.0 * epsilon)))
    A = np.column_stack([np.ones(k), x[idx] - center]) * w[:, None]
    coef, _ = _regress(A, y[idx] * w[:, None])
    G = coef[:, 1:]
    if rank is not None:
        offsets = x[idx] - np.average(x[idx], axis=0, weights=w ** 2)
        vt = np.linalg.svd(offsets * w[:, None], full_matrices=False)[2][:max(1, int(rank))]
        G = G @ vt.T @ vt
    return G, coef[:, 0]


# ---------------------------------------------------------------------------
# full-cloud sweep

@dataclass(frozen=True)
class DerivativeField:
    derivs: np.ndarray        # (N, n, m)
    local_dim: np.ndarray     # (N,)
    density: np.ndarray       # (N,)
    epsilons: np.ndarray      # (N,)
    ranks: np.ndarray         # (N,) rank used in each regression

    @property
    def N(self) -> int:
        return self.derivs.shape[0]


def tune_bandwidths(graph: NeighborGraph, L: int = 100):
    """Simple-mode selection at every point at once.

    Returns ``(eps_selected, dim_selected)`` arrays of length ``N``.
    """
    if L < 3:
        raise ParameterError(f"L must be at least 3, got {L}")
    if graph.k < 2:
        raise ParameterError("bandwidth tuning needs k >= 2 neighbors")
    dist = graph.distances
    n = dist.shape[0]
    eps_sel = np.empty(n)
    dim_sel = np.empty(n)
    chunk = max(1, 2_000_000 // (L * graph.k))
    for start in range(0, n, chunk):
        rows = range(start, min(start + chunk, n))
        grids = np.array([epsilon_grid(*epsilon_range(dist[i]), L) for i in rows])
        dd = dist[start:start + len(grids)]
        w = np.exp(-dd[:, None, :] ** 2 / (2.0 * grids[:, :, None]))
        D = w.sum(axis=2)
        d1 = 2.0 * np.diff(np.log(D), axis=1) / np.diff(np.log(grids), axis=1)
        l_star = np.argmax(d1, axis=1)
        r = np.arange(len(grids))
        eps_sel[start:start + len(grids)] = grids[r, l_star + 1]
        dim_sel[start:start + len(grids)] = d1[r, l_star]
    return eps_sel, dim_sel


def local_geometry(graph: NeighborGraph, L: int = 100):
    """Tuned bandwidth, local dimension and density at every point.

    Returns ``(eps, dims, q)``; no features are needed.
    """
    eps_sel, dim_sel = tune_bandwidths(graph, L)
    w = np.exp(-graph.distances ** 2 / (2.0 * eps_sel[:, None]))
    q = w.sum(axis=1) / (graph.N * (2.0 * np.pi * eps_sel) ** (dim_sel / 2.0))
    return eps_sel, dim_sel, q


def estimate_derivatives(points, features, graph: NeighborGraph, L: int = 100,
                         mode: str = "simple", projection: str = "none") -> DerivativeField:
    """Derivative, local dimension and density at every sample.

    Bandwidths are tuned per point; ``robust`` mode runs a full singular
    value scan per point and is considerably slower.

    With ``projection="tangent"`` each regression keeps only the leading
    ``max(1, round(d_i))`` singular directions of its chart, so the estimate
    lives on the estimated tangent space.  This matters in high ambient
    dimension, where tiny normal-direction singular values otherwise inflate
    the estimate by orders of magnitude.
    """
    x = _coords(points)
    y = _values(features)
    if y is None or y.shape[0] != x.shape[0]:
        raise ParameterError("features must have one row per point")
    n, m = x.shape
    if mode == "simple":
        eps_sel, dim_sel = tune_bandwidths(graph, L)
    elif mode == "robust":
        scans = [bandwidth_scan(x, graph, i, L, mode="robust") for i in range(n)]
        eps_sel = np.array([s.eps_selected for s in scans])
        dim_sel = np.array([s.dim_selected for s in scans])
    else:
        raise ParameterError(f"mode must be 'simple' or 'robust', got {mode!r}")
    if projection not in ("none", "tangent"):
        raise ParameterError(f"projection must be 'none' or 'tangent', got {projection!r}")
    if np.any(~(dim_sel > 0)):
        bad = int(np.flatnonzero(~(dim_sel > 0))[0])
        raise DegenerateGeometryError(f"non-positive dimension estimate at point {bad}")

    w = np.exp(-graph.distances ** 2 / (2.0 * eps_sel[:, None]))
    D = w.sum(axis=1)
    density = D / (n * (2.0 * np.pi * eps_sel) ** (dim_sel / 2.0))
    scale = np.sqrt(w / D[:, None])

    derivs = np.empty((n, y.shape[1], m))
    ranks = np.empty(n, dtype=int)
    k = graph.k
    chunk = max(1, 4_000_000 // (k * m))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        idx = graph.indices[start:stop]
        sc = scale[start:stop, :, None]
        X = sc * (x[idx] - x[start:stop, None, :])
        Y = sc * (y[idx] - y[start:stop, None, :])
        u, s, vt = np.linalg.svd(X, full_matrices=False)
        keep = s > RCOND * s[:, :1]
        if projection == "tangent":
            r = np.maximum(1, np.rint(dim_sel[start:stop])).astype(int)
            keep &= np.arange(s.shape[1])[None, :] < r[:, None]
        inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
        uy = np.einsum("bkr,bkn->bnr", u, Y)
        derivs[start:stop] = np.einsum("bnr,br,brm->bnm", uy, inv, vt)
        ranks[start:stop] = keep.sum(axis=1)
    return DerivativeField(derivs, dim_sel, density, eps_sel, ranks)

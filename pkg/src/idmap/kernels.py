"""Feature-biased local kernels on k-NN stencils.

The blended distance from ``x_i`` to its ``j``-th neighbor is::

    d_H(i, j) = (1 - tau) * |x_j - x_i| + tau * |DH(x_i) (x_j - x_i)|

With ``form="covariance"`` the Mahalanobis form of the covariance
``((1 - tau) I + tau DH^T DH)^-1`` is used instead::

    d_H(i, j) = sqrt((1 - tau) |x_j - x_i|^2 + tau |DH(x_i) (x_j - x_i)|^2)

Both coincide with the Euclidean distance at ``tau = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .core import DegenerateGeometryError, NeighborGraph, ParameterError, PointCloud

# kernel entries below this are treated as structural zeros
DROP_TOL = 1e-15


@dataclass(frozen=True)
class AnisotropicDistance:
    values: np.ndarray     # (N, k), aligned with the neighbor graph
    tau: float
    form: str = "blend"


@dataclass(frozen=True)
class SparseKernel:
    entries: sparse.csr_matrix
    epsilon: float
    tau: float

    @property
    def N(self) -> int:
        return self.entries.shape[0]


def _check_tau(tau):
    if not 0.0 <= tau <= 1.0:
        raise ParameterError(f"tau must lie in [0, 1], got {tau}")


def feature_distances(points, graph: NeighborGraph, derivs) -> np.ndarray:
    """``|DH(x_i) (x_I(i,j) - x_i)|`` for every stencil entry."""
    x = points.points if isinstance(points, PointCloud) else np.asarray(points, float)
    derivs = np.asarray(derivs, dtype=float)
    n, k = graph.indices.shape
    out = np.empty((n, k))
    chunk = max(1, 4_000_000 // (k * x.shape[1]))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        v = x[graph.indices[start:stop]] - x[start:stop, None, :]
        out[start:stop] = np.linalg.norm(np.einsum("bnm,bkm->bkn", derivs[start:stop], v), axis=2)
    return out


def anisotropic_distance(points, graph: NeighborGraph, derivs, tau: float,
                         form: str = "blend") -> AnisotropicDistance:
    """Feature-biased distances on the k-NN stencil.

    Parameters
    ----------
    points : PointCloud or ndarray (N, m)
    graph : NeighborGraph built on ``points``
    derivs : DerivativeField or ndarray (N, n, m)
    tau : float in [0, 1]
    form : {"blend", "covariance"}
    """
    _check_tau(tau)
    if form not in ("blend", "covariance"):
        raise ParameterError(f"form must be 'blend' or 'covariance', got {form!r}")
    d = graph.distances
    if tau == 0.0:
        return AnisotropicDistance(d.copy(), 0.0, form)
    derivs = getattr(derivs, "derivs", derivs)
    f = feature_distances(points, graph, derivs)
    if form == "blend":
        values = (1.0 - tau) * d + tau * f
    else:
        values = np.sqrt((1.0 - tau) * d ** 2 + tau * f ** 2)
    values[:, 0] = 0.0
    return AnisotropicDistance(values, float(tau), form)


def global_bandwidth(distances, k2: int = 32) -> float:
    """Mean squared distance to the first ``k2`` stencil entries over all points."""
    d = getattr(distances, "values", distances)
    d = np.asarray(d, dtype=float)
    if not 1 <= k2 <= d.shape[1]:
        raise ParameterError(f"k2={k2} must lie in [1, k={d.shape[1]}]")
    eps = float(np.mean(d[:, :k2] ** 2))
    if not eps > 0:
        raise DegenerateGeometryError("all stencil distances are zero; bandwidth undefined")
    return eps


def assemble_kernel(distances, epsilon: float, graph: NeighborGraph,
                    symmetrize: str = "average") -> SparseKernel:
    """Gaussian kernel ``exp(-d_H**2 / (2 eps))`` on the stencil, symmetrized.

    ``symmetrize="average"`` returns ``(J + J^T) / 2``; ``"sum"`` returns
    ``J + J^T``.
    """
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if symmetrize not in ("average", "sum"):
        raise ParameterError(f"symmetrize must be 'average' or 'sum', got {symmetrize!r}")
    d = getattr(distances, "values", distances)
    tau = float(getattr(distances, "tau", 0.0))
    n, k = graph.indices.shape
    vals = np.exp(-np.asarray(d) ** 2 / (2.0 * epsilon))
    vals[vals < DROP_TOL] = 0.0
    rows = np.repeat(np.arange(n), k)
    J = sparse.csr_matrix((vals.ravel(), (rows, graph.indices.ravel())), shape=(n, n))
    J.sum_duplicates()
    S = J + J.T
    if symmetrize == "average":
        S = S * 0.5
    S = sparse.csr_matrix(S)
    S.eliminate_zeros()
    S.sort_indices()
    return SparseKernel(S, float(epsilon), tau)


def isotropic_kernel_dense(points, epsilon):
    """Dense ``exp(-|x_i - x_j|**2 / (2 eps))``; a reference for small clouds."""
    from scipy.spatial.distance import cdist

    x = points.points if isinstance(points, PointCloud) else np.asarray(points, float)
    return np.exp(-cdist(x, x, "sqeuclidean") / (2.0 * epsilon))

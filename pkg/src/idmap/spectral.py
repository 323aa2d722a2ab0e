"""Diffusion-map normalizations, eigensolves and the rescaled diffusion map.

Eigenvalues ``xi`` of the normalized kernel are converted to Laplacian
eigenvalues by ``lambda = 2 log(xi) / eps``: with the kernel
``exp(-d**2 / (2 eps))`` the Markov operator approximates ``exp(eps/2 * Delta)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .core import (
    ConnectivityError,
    DiffusionEmbedding,
    ParameterError,
    PointCloud,
    SolverError,
)
from .kernels import DROP_TOL, SparseKernel

# above this many points the sparse Lanczos path is used
DENSE_MAX = 5000
RESIDUAL_TOL = 1e-8


class SpectrumWarning(UserWarning):
    """Modes were dropped because their eigenvalues were not positive."""


class ExtrapolationWarning(UserWarning):
    """An out-of-sample point lies outside the sampled region."""


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of the normalized kernel, mode 0 being the trivial one.

    ``phi`` holds right eigenvectors of the Markov matrix (the symmetric
    eigenvectors divided by ``dhat``); after :func:`density_normalize` they
    satisfy ``mean(phi_r**2 / q) == 1`` and ``q`` is set.
    """

    xi: np.ndarray              # (M+1,) descending
    phi: np.ndarray             # (N, M+1)
    epsilon: float
    dhat: np.ndarray            # (N,) left normalizer
    right_sums: np.ndarray      # (N,) right normalizer D_i
    q: np.ndarray | None = None

    @property
    def lam(self) -> np.ndarray:
        return 2.0 * np.log(self.xi) / self.epsilon

    @property
    def n_modes(self) -> int:
        return self.xi.size - 1


@dataclass(frozen=True)
class RescaledMapParams:
    s: float
    M: int
    local_dims: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if not self.s > 0:
            raise ParameterError(f"diffusion time s must be positive, got {self.s}")
        if self.M < 1:
            raise ParameterError(f"M must be at least 1, got {self.M}")


def _matrix(J):
    return J.entries if isinstance(J, SparseKernel) else J


def normalize_kernel(J):
    """Right then left diffusion-map normalization.

    Returns ``(Khat, dhat, right_sums)`` with ``Khat`` symmetric and similar
    to the Markov matrix ``diag(dhat)**-2 K``; ``dhat`` spans its top
    eigenvector (eigenvalue 1).
    """
    A = _matrix(J)
    dense = not sparse.issparse(A)
    A = np.asarray(A, dtype=float) if dense else sparse.csr_matrix(A, dtype=float)
    D = np.asarray(A.sum(axis=1)).ravel()
    zero = np.flatnonzero(D <= 0)
    if zero.size:
        raise ConnectivityError(f"point {zero[0]} has an empty kernel row (isolated)")
    if dense:
        K = A / np.outer(D, D)
    else:
        inv = sparse.diags(1.0 / D)
        K = inv @ A @ inv
    dhat = np.sqrt(np.asarray(K.sum(axis=1)).ravel())
    if dense:
        Khat = K / np.outer(dhat, dhat)
        Khat = 0.5 * (Khat + Khat.T)
    else:
        inv = sparse.diags(1.0 / dhat)
        Khat = sparse.csr_matrix(inv @ K @ inv)
    return Khat, dhat, D


def _fix_signs(vecs):
    # largest-magnitude entry (first occurrence) of each column made positive
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def symmetric_eigs(Khat, n_eigs: int, seed: int = 0, dense_max: int = DENSE_MAX):
    """Largest ``n_eigs`` eigenpairs of a symmetric matrix, descending.

    Small problems use a dense LAPACK solve; large ones use Lanczos (ARPACK)
    with a seeded start vector. Every pair is checked against the residual
    tolerance.
    """
    n = Khat.shape[0]
    if not 1 <= n_eigs <= n:
        raise ParameterError(f"cannot compute {n_eigs} eigenpairs of a {n}x{n} matrix")
    if n <= dense_max or n_eigs >= n - 1:
        A = Khat.toarray() if sparse.issparse(Khat) else np.asarray(Khat)
        vals, vecs = scipy.linalg.eigh(A, subset_by_index=[n - n_eigs, n - 1])
    else:
        v0 = np.random.default_rng(seed).uniform(-1.0, 1.0, n)
        try:
            vals, vecs = eigsh(Khat, k=n_eigs, which="LA", v0=v0, tol=1e-12,
                               ncv=min(n, max(2 * n_eigs + 1, 20)), maxiter=50 * n)
        except ArpackNoConvergence as exc:
            raise SolverError(
                f"Lanczos did not converge: {len(exc.eigenvalues)} of {n_eigs} pairs") from exc
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], _fix_signs(vecs[:, order])
    res = np.linalg.norm(Khat @ vecs - vecs * vals, axis=0)
    bad = res > RESIDUAL_TOL * np.linalg.norm(vecs, axis=0)
    if bad.any():
        raise SolverError(f"eigenpair residuals too large: {res[bad][:5]}")
    return vals, vecs


def eigensolve(J, M: int, seed: int = 0, dense_max: int = DENSE_MAX) -> SpectralDecomposition:
    """Normalize a kernel and compute its ``M + 1`` leading modes.

    Modes with ``xi <= 0`` have no Laplacian eigenvalue and are dropped with a
    :class:`SpectrumWarning`.
    """
    A = _matrix(J)
    epsilon = float(getattr(J, "epsilon", np.nan))
    Khat, dhat, D = normalize_kernel(A)
    n_eigs = min(M + 1, Khat.shape[0])
    vals, vecs = symmetric_eigs(Khat, n_eigs, seed=seed, dense_max=dense_max)
    keep = vals > 0
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} modes with non-positive eigenvalues",
                      SpectrumWarning, stacklevel=2)
        vals, vecs = vals[keep], vecs[:, keep]
    phi = vecs / dhat[:, None]
    return SpectralDecomposition(vals, phi, epsilon, dhat, D)


def density_normalize(decomp: SpectralDecomposition, q) -> SpectralDecomposition:
    """Scale each mode so that ``mean(phi_r**2 / q) = 1``."""
    q = np.asarray(q, dtype=float).ravel()
    if q.shape[0] != decomp.phi.shape[0] or np.any(~(q > 0)):
        raise ParameterError("q must be positive with one entry per point")
    norms = np.sqrt(np.mean(decomp.phi ** 2 / q[:, None], axis=0))
    return replace(decomp, phi=decomp.phi / norms, q=q)


def rescale_factor(d, s):
    """Prefactor ``(2 pi)^(d/4) (4 s)^(d/4 + 1/2)`` mapping diffusion to geodesic distance."""
    d = np.asarray(d, dtype=float)
    return (2.0 * math.pi) ** (d / 4.0) * (4.0 * s) ** (d / 4.0 + 0.5)


def rescaled_map(decomp: SpectralDecomposition, params: RescaledMapParams,
                 iteration: int = 1) -> DiffusionEmbedding:
    """Rescaled diffusion coordinates; the trivial mode is excluded."""
    if decomp.q is None:
        raise ParameterError("decomposition must be density-normalized first")
    n = decomp.phi.shape[0]
    dims = np.asarray(params.local_dims, dtype=float).ravel()
    if dims.size == 0:
        raise ParameterError("local dimensions are required")
    if dims.size == 1:
        dims = np.full(n, dims[0])
    M = min(params.M, decomp.n_modes)
    weights = np.exp(decomp.lam[1:M + 1] * params.s)
    coords = rescale_factor(dims, params.s)[:, None] * decomp.phi[:, 1:M + 1] * weights
    return DiffusionEmbedding(coords, iteration=iteration, s=params.s, local_dims=dims)


def diffusion_distances(coords, pairs=None):
    """Euclidean distances in embedding coordinates (all pairs or selected ones)."""
    coords = np.asarray(coords, dtype=float)
    if pairs is None:
        from scipy.spatial.distance import cdist
        return cdist(coords, coords)
    pairs = np.asarray(pairs)
    return np.linalg.norm(coords[pairs[:, 0]] - coords[pairs[:, 1]], axis=1)


# ---------------------------------------------------------------------------
# out-of-sample extension

@dataclass(frozen=True)
class KernelRecipe:
    """Everything needed to rebuild the normalized kernel row of a new point."""

    points: np.ndarray          # training coordinates (N, m)
    radii: np.ndarray           # k-th neighbor distance of each training point
    k: int
    epsilon: float
    tau: float = 0.0
    form: str = "blend"
    derivs: np.ndarray | None = None     # (N, n, m) when tau > 0
    features: np.ndarray | None = None   # (N, n), for the new point's derivative
    local_eps: np.ndarray | None = None  # per-point tuned bandwidths
    local_dims: np.ndarray | None = None
    symmetrize: str = "average"
    projection: str = "none"
    indices: np.ndarray | None = None    # training stencils (N, k)

    @classmethod
    def from_graph(cls, points, graph, epsilon, **kw):
        x = points.points if isinstance(points, PointCloud) else np.asarray(points, float)
        kw.setdefault("indices", graph.indices.copy())
        return cls(x, graph.distances[:, -1].copy(), graph.k, float(epsilon), **kw)

    def _blend(self, d, f):
        if self.form == "blend":
            return (1.0 - self.tau) * d + self.tau * f
        return np.sqrt((1.0 - self.tau) * d ** 2 + self.tau * f ** 2)

    def kernel_row(self, z):
        """Symmetrized kernel entries between ``z`` and every training point."""
        z = np.asarray(z, dtype=float).ravel()
        diff = self.points - z
        dist = np.linalg.norm(diff, axis=1)
        order = np.lexsort((np.arange(dist.size), dist))
        near = order[0]
        # a training sample (up to round-off) reuses its exact stencils
        own = self.indices is not None and dist[near] <= 1e-9 * self.radii[near]
        if own:
            stencil = self.indices[near]
            into = np.flatnonzero((self.indices == near).any(axis=1))
        else:
            stencil = order[: self.k]
            into = np.flatnonzero(dist <= self.radii)

        fwd = np.zeros(dist.size)
        bwd = np.zeros(dist.size)
        d_fwd = dist[stencil]
        d_bwd = dist[into]
        if self.tau > 0:
            if own:
                G = self.derivs[near]
            else:
                from .local_analysis import estimate_derivative_affine
                rank = None
                if self.projection == "tangent" and self.local_dims is not None:
                    rank = round(float(self.local_dims[near]))
                G, _ = estimate_derivative_affine(self.points, self.features, z,
                                                  self.local_eps[near], self.k, rank)
            d_fwd = self._blend(d_fwd, np.linalg.norm(-diff[stencil] @ G.T, axis=1))
            f_bwd = np.linalg.norm(np.einsum("bnm,bm->bn", self.derivs[into], diff[into]), axis=1)
            d_bwd = self._blend(d_bwd, f_bwd)
        fwd[stencil] = np.exp(-d_fwd ** 2 / (2.0 * self.epsilon))
        bwd[into] = np.exp(-d_bwd ** 2 / (2.0 * self.epsilon))
        fwd[fwd < DROP_TOL] = 0.0
        bwd[bwd < DROP_TOL] = 0.0
        row = fwd + bwd
        return 0.5 * row if self.symmetrize == "average" else row


def nystrom_extend(x_new, recipe: KernelRecipe, decomp: SpectralDecomposition,
                   s: float | None = None, M: int | None = None):
    """Eigenfunction values (and optionally embedding rows) at new points.

    ``phi_r(z) = (1/xi_r) sum_i P(z, i) phi_r(x_i)`` where ``P(z, .)`` is the
    new kernel row passed through the training normalizations. A training
    point reproduces its stored values.

    Returns ``phi`` of shape ``(n_new, M+1)``, or ``(phi, coords)`` when
    ``s`` is given.
    """
    Z = np.atleast_2d(np.asarray(x_new, dtype=float))
    n_new = Z.shape[0]
    phi = np.zeros((n_new, decomp.xi.size))
    reach = float(recipe.radii.max())
    for a, z in enumerate(Z):
        row = recipe.kernel_row(z)
        nearest = float(np.min(np.linalg.norm(recipe.points - z, axis=1)))
        total = row.sum()
        if nearest > reach or total <= DROP_TOL:
            warnings.warn(f"point {a} is {nearest:.3g} from the nearest sample "
                          f"(support radius {reach:.3g}); extension is unreliable",
                          ExtrapolationWarning, stacklevel=2)
        if total <= 0:
            continue
        K = row / (total * decomp.right_sums)
        P = K / K.sum()
        phi[a] = (P @ decomp.phi) / decomp.xi
    if s is None:
        return phi
    M = decomp.n_modes if M is None else min(M, decomp.n_modes)
    dims = np.empty(n_new)
    for a, z in enumerate(Z):
        near = int(np.argmin(np.linalg.norm(recipe.points - z, axis=1)))
        dims[a] = recipe.local_dims[near] if recipe.local_dims is not None else 1.0
    coords = rescale_factor(dims, s)[:, None] * phi[:, 1:M + 1] * np.exp(decomp.lam[1:M + 1] * s)
    return phi, coords

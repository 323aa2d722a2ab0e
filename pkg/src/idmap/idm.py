"""The iterated diffusion map and its diagnostics.

Each pass re-embeds the current coordinates with a kernel biased toward the
feature map, always regressing against the original feature values.  The
rescaled diffusion coordinates of one pass are the input cloud of the next.
"""

from __future__ import annotations

import contextlib
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import orthogonal_procrustes
from scipy.spatial.distance import cdist
from scipy.stats import spearmanr

from .core import (DiffusionEmbedding, FeatureSet, IdmError, NumericalError, ParameterError,
                   PointCloud)
from .kernels import anisotropic_distance, assemble_kernel, global_bandwidth
from .local_analysis import (RCOND, DerivativeField, estimate_derivatives, local_geometry)
from .neighbors import _select_row, knn
from .spectral import (KernelRecipe, RescaledMapParams, SpectralDecomposition, density_normalize,
                       eigensolve, nystrom_extend, rescale_factor, rescaled_map)


class DecoderWarning(UserWarning):
    """The decoder design matrix is rank deficient; a ridge term was added."""


class FlowError(NumericalError):
    """The metric left the symmetric positive-definite cone."""


@dataclass(frozen=True)
class IdmParams:
    """Parameters of the iterated map.

    ``tau`` must lie strictly inside ``(0, 1)``; ``tau=0`` is accepted for
    diagnostic runs, where every pass is a plain diffusion map.
    """

    tau: float = 0.5
    iterations: int = 4
    k: int = 500
    k2: int = 32
    L: int = 100
    M: int = 250
    mode: str = "simple"
    seed: int = 0
    form: str = "blend"
    s_factor: float = 5.0
    symmetrize: str = "average"
    projection: str = "tangent"
    bandwidth_floor: bool = True
    diffusion_time: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.tau < 1.0:
            raise ParameterError(f"tau must lie in (0, 1) (0 for diagnostics), got {self.tau}")
        for name in ("iterations", "k", "k2", "M"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")
        if self.k < 2:
            raise ParameterError("k must be at least 2")
        if self.k2 > self.k:
            raise ParameterError(f"k2={self.k2} cannot exceed k={self.k}")
        if not isinstance(self.L, (int, np.integer)) or self.L < 3:
            raise ParameterError(f"L must be an integer >= 3, got {self.L!r}")
        if self.mode not in ("simple", "robust"):
            raise ParameterError(f"mode must be 'simple' or 'robust', got {self.mode!r}")
        if self.form not in ("blend", "covariance"):
            raise ParameterError(f"form must be 'blend' or 'covariance', got {self.form!r}")
        if not self.s_factor > 0:
            raise ParameterError("s_factor must be positive")
        if self.diffusion_time is not None and not self.diffusion_time > 0:
            raise ParameterError("diffusion_time must be positive when given")
        if self.projection not in ("none", "tangent"):
            raise ParameterError(f"projection must be 'none' or 'tangent', got {self.projection!r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class IterationRecord:
    """Everything produced by one pass; ``index`` counts from 1."""

    index: int
    derivatives: DerivativeField
    epsilon: float
    s: float
    decomposition: SpectralDecomposition
    recipe: KernelRecipe | None = None
    seconds: float = 0.0

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.decomposition.lam


@dataclass
class IdmTrajectory:
    """Embeddings ``x^(0..t)`` with ``embeddings[0]`` the input cloud."""

    embeddings: list
    records: list
    params: IdmParams
    features: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def final(self) -> DiffusionEmbedding:
        return self.embeddings[-1]

    @property
    def n_iterations(self) -> int:
        return len(self.embeddings) - 1


@contextlib.contextmanager
def _stage(iteration, name):
    try:
        yield
    except IdmError as exc:
        err = type(exc)(f"iteration {iteration}, stage {name}: {exc}")
        err.iteration, err.stage = iteration, name
        raise err from exc


def _coords(points):
    if isinstance(points, PointCloud):
        return points.points
    if isinstance(points, DiffusionEmbedding):
        return points.coords
    return np.asarray(points, dtype=float)


def _features(features):
    y = features.values if isinstance(features, FeatureSet) else np.asarray(features, float)
    return y[:, None] if y.ndim == 1 else y


def idm_step(x, y, params: IdmParams, index: int = 1, keep_recipe: bool = True,
             eps_floor: float = 0.0):
    """One pass of the iterated map on coordinates ``x``.

    ``eps_floor`` is a lower bound on the global bandwidth.  Returns
    ``(DiffusionEmbedding, IterationRecord)``.
    """
    t0 = time.perf_counter()
    with _stage(index, "neighbors"):
        graph = knn(x, min(params.k, x.shape[0]))
    with _stage(index, "derivatives"):
        field_ = estimate_derivatives(x, y, graph, L=params.L, mode=params.mode,
                                      projection=params.projection)
    with _stage(index, "distances"):
        dist = anisotropic_distance(x, graph, field_, params.tau, params.form)
        eps = max(global_bandwidth(dist, min(params.k2, graph.k)), eps_floor)
    with _stage(index, "kernel"):
        J = assemble_kernel(dist, eps, graph, params.symmetrize)
    with _stage(index, "eigensolve"):
        decomp = density_normalize(eigensolve(J, params.M, seed=params.seed), field_.density)
    s = params.s_factor * eps if params.diffusion_time is None else params.diffusion_time
    with _stage(index, "rescaled map"):
        emb = rescaled_map(decomp, RescaledMapParams(s, params.M, field_.local_dim), index)
    recipe = None
    if keep_recipe:
        recipe = KernelRecipe.from_graph(
            x, graph, eps, tau=params.tau, form=params.form,
            derivs=field_.derivs if params.tau > 0 else None,
            features=y if params.tau > 0 else None,
            local_eps=field_.epsilons, local_dims=field_.local_dim,
            symmetrize=params.symmetrize, projection=params.projection)
    rec = IterationRecord(index, field_, eps, s, decomp, recipe, time.perf_counter() - t0)
    return emb, rec


def idm_run(points, features, params: IdmParams | None = None, *, feature_embedding=None,
            cv_stop: bool = False, cv_fraction: float = 0.2, keep_recipes: bool = True,
            callback=None) -> IdmTrajectory:
    """Run the iterated diffusion map.

    Parameters
    ----------
    points : PointCloud or ndarray (N, m)
    features : FeatureSet or ndarray (N, n)
        Feature values ``y_i``; they are the regression targets at every pass.
    params : IdmParams
    feature_embedding : DiffusionEmbedding, optional
        Diffusion coordinates of the features.  When given, a held-out decoder
        residual is recorded per iteration in ``diagnostics["cv_residuals"]``.
    cv_stop : bool
        Stop once the held-out residual stops decreasing (needs
        ``feature_embedding``).  The trajectory then ends at the best pass.
    callback : callable, optional
        Called as ``callback(index, embedding, record)`` after each pass.

    Returns
    -------
    IdmTrajectory
    """
    params = IdmParams() if params is None else params
    x = _coords(points)
    y = _features(features)
    if x.ndim != 2 or y.shape[0] != x.shape[0]:
        raise ParameterError(f"points ({x.shape[0]}) and features ({y.shape[0]}) are not aligned")
    if cv_stop and feature_embedding is None:
        raise ParameterError("cv_stop needs a feature_embedding")

    traj = IdmTrajectory([DiffusionEmbedding(x, 0)], [], params, y,
                         {"cv_residuals": [], "derivative_norms": []})
    split = None
    if feature_embedding is not None:
        split = holdout_split(x.shape[0], cv_fraction, params.seed)
    for index in range(1, params.iterations + 1):
        floor = 0.0
        if params.bandwidth_floor and traj.records:
            # the blend shrinks distances by at most (1 - tau) per pass
            floor = (1.0 - params.tau) ** 2 * traj.records[-1].epsilon
        emb, rec = idm_step(traj.embeddings[-1].coords, y, params, index, keep_recipes, floor)
        traj.embeddings.append(emb)
        traj.records.append(rec)
        traj.diagnostics["derivative_norms"].append(
            float(np.max(np.linalg.norm(rec.derivatives.derivs, axis=(1, 2)))))
        if callback is not None:
            callback(index, emb, rec)
        if split is not None:
            r = cv_residual(emb.coords, _coords(feature_embedding), split)
            cv = traj.diagnostics["cv_residuals"]
            cv.append(r)
            if cv_stop and len(cv) > 1 and r >= cv[-2]:
                traj.embeddings.pop()
                traj.records.pop()
                traj.diagnostics["stopped_at"] = index - 1
                break
    return traj


def idm_transform(trajectory: IdmTrajectory, x_new, upto: int | None = None) -> np.ndarray:
    """Carry new points through the stored passes by Nyström extension."""
    upto = trajectory.n_iterations if upto is None else upto
    z = np.atleast_2d(np.asarray(x_new, dtype=float))
    for rec in trajectory.records[:upto]:
        if rec.recipe is None:
            raise ParameterError("trajectory was run without keep_recipes")
        # the local dimension of the nearest training point sets the prefactor
        dims = rec.recipe.local_dims[np.argmin(cdist(z, rec.recipe.points), axis=1)]
        phi = nystrom_extend(z, rec.recipe, rec.decomposition)
        M = min(trajectory.params.M, rec.decomposition.n_modes)
        w = np.exp(rec.decomposition.lam[1:M + 1] * rec.s)
        z = rescale_factor(dims, rec.s)[:, None] * phi[:, 1:M + 1] * w
    return z


# ---------------------------------------------------------------------------
# neighbor evolution and spreads

def neighbor_evolution(trajectory, base_index: int, count: int) -> list:
    """The ``count`` nearest neighbors of one sample in every embedding.

    Indices refer to the original cloud; the base point is listed first, as
    in :func:`idmap.neighbors.knn`.
    """
    embs = trajectory.embeddings if isinstance(trajectory, IdmTrajectory) else trajectory
    if not embs:
        raise ParameterError("trajectory is empty")
    out = []
    for e in embs:
        c = _coords(e)
        if not 0 <= base_index < c.shape[0]:
            raise ParameterError(f"base_index {base_index} out of range")
        if not 1 <= count <= c.shape[0]:
            raise ParameterError(f"count {count} out of range")
        drow = np.linalg.norm(c - c[base_index], axis=1)
        out.append(_select_row(drow, base_index, count)[0])
    return out


def neighbor_spread(neighbors, values, circular: bool = False) -> float:
    """Standard deviation of ``values`` over one neighbor set.

    With ``circular=True`` the values are angles and their offsets from the
    first entry are wrapped to ``(-pi, pi]`` before taking the deviation.
    """
    v = np.asarray(values, dtype=float)[np.asarray(neighbors)]
    if circular:
        v = np.angle(np.exp(1j * (v - v[0])))
    return float(np.std(v))


def level_set_spread(coords, feature=None, n_bins: int = 20, labels=None) -> float:
    """Scale-free spread of the embedding within level sets of a feature.

    The feature is binned into ``n_bins`` quantile bins (a 2-column feature
    is read as a point on a circle and binned by angle).  Exact level sets,
    such as the rings of a grid, can be passed as integer ``labels`` instead.
    Returns the square root of within-bin over total sum of squares: 0 when
    the embedding is constant on level sets, 1 when it ignores the feature.
    """
    X = np.asarray(_coords(coords), dtype=float)
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (X.shape[0],):
            raise ParameterError("labels must have one entry per point")
        f = None
    elif feature is None:
        raise ParameterError("level_set_spread needs a feature or labels")
    else:
        f = np.asarray(feature, dtype=float)
    if f is None:
        pass
    elif f.ndim == 2 and f.shape[1] == 2:
        f = np.arctan2(f[:, 0], f[:, 1])
        labels = np.floor((f + np.pi) / (2 * np.pi) * n_bins).astype(int) % n_bins
    else:
        f = f.ravel()
        edges = np.quantile(f, np.linspace(0, 1, n_bins + 1))
        labels = np.clip(np.searchsorted(edges, f, side="right") - 1, 0, n_bins - 1)
    Xc = X - X.mean(axis=0)
    total = np.sum(Xc ** 2)
    within = 0.0
    for b in np.unique(labels):
        g = X[labels == b]
        within += np.sum((g - g.mean(axis=0)) ** 2)
    return float(np.sqrt(within / total))


# ---------------------------------------------------------------------------
# linear readout

@dataclass(frozen=True)
class LinearFeatureDecoder:
    """Affine map from IDM coordinates to feature diffusion coordinates."""

    matrix: np.ndarray        # (M_idm, M_feat)
    offset: np.ndarray        # (M_feat,)
    residual: float           # relative Frobenius residual on the fit data

    def predict(self, coords) -> np.ndarray:
        return np.asarray(_coords(coords)) @ self.matrix + self.offset

    def top_block_orthogonality(self, r: int) -> float:
        """Relative deviation of ``H^T H`` from ``c I`` on the leading ``r`` columns."""
        H = self.matrix[:, :r]
        G = H.T @ H
        c = np.trace(G) / r
        return float(np.linalg.norm(G - c * np.eye(r)) / np.linalg.norm(c * np.eye(r)))


def _relative_residual(pred, target):
    tc = target - target.mean(axis=0)
    return float(np.linalg.norm(pred - target) / np.linalg.norm(tc))


def fit_decoder(source, feature_embedding, ridge: float | None = None) -> LinearFeatureDecoder:
    """Least-squares decoder from ``source`` coordinates to ``feature_embedding``.

    ``source`` is an :class:`IdmTrajectory` (its final embedding is used),
    an embedding or an array.  A rank-deficient design triggers a ridge
    fit and a :class:`DecoderWarning`.
    """
    if isinstance(source, IdmTrajectory):
        source = source.final
    X = np.asarray(_coords(source), dtype=float)
    Y = np.asarray(_coords(feature_embedding), dtype=float)
    if X.shape[0] != Y.shape[0]:
        raise ParameterError("source and feature embedding are not aligned")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    s = np.linalg.svd(Xc, compute_uv=False)
    rank = int(np.sum(s > RCOND * s[0])) if s.size and s[0] > 0 else 0
    if ridge is None and rank < X.shape[1]:
        warnings.warn(f"decoder design has rank {rank} < {X.shape[1]}; using a ridge fit",
                      DecoderWarning, stacklevel=2)
        ridge = RCOND * (s[0] ** 2 if s.size else 1.0)
    if ridge:
        H = np.linalg.solve(Xc.T @ Xc + ridge * np.eye(X.shape[1]), Xc.T @ Yc)
    else:
        H = np.linalg.lstsq(Xc, Yc, rcond=None)[0]
    offset = my - mx @ H
    return LinearFeatureDecoder(H, offset, _relative_residual(X @ H + offset, Y))


def holdout_split(n: int, fraction: float = 0.2, seed: int = 0):
    """Seeded ``(train, test)`` index split with ``fraction`` held out."""
    if not 0.0 < fraction < 1.0:
        raise ParameterError("holdout fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(fraction * n)))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def cv_residual(coords, feature_coords, split) -> float:
    """Held-out relative residual of the linear decoder."""
    train, test = split
    X, Y = np.asarray(coords), np.asarray(feature_coords)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DecoderWarning)
        dec = fit_decoder(X[train], Y[train])
    return _relative_residual(dec.predict(X[test]), Y[test])


def feature_embedding(features, params: IdmParams | None = None) -> DiffusionEmbedding:
    """Rescaled diffusion coordinates of the features themselves (``tau = 0``)."""
    params = IdmParams(tau=0.0) if params is None else replace(params, tau=0.0)
    y = _features(features)
    graph = knn(y, min(params.k, y.shape[0]))
    eps_loc, dims, q = local_geometry(graph, params.L)
    dist = anisotropic_distance(y, graph, None, 0.0)
    eps = global_bandwidth(dist, min(params.k2, graph.k))
    decomp = density_normalize(eigensolve(assemble_kernel(dist, eps, graph), params.M,
                                          seed=params.seed), q)
    s = params.s_factor * eps if params.diffusion_time is None else params.diffusion_time
    return rescaled_map(decomp, RescaledMapParams(s, params.M, dims))


# ---------------------------------------------------------------------------
# fixed point

def fixed_point_residual(points, features, k: int = 500, L: int = 100) -> float:
    """``max_i |(DH(x_i) - I) T_i^T|`` over the cloud.

    ``T_i`` spans the estimated tangent space (the leading ``round(d_i)``
    right singular vectors of the weighted chart).  The feature space must
    have the ambient dimension of the data.
    """
    x = _coords(points)
    y = _features(features)
    if y.shape[1] != x.shape[1]:
        raise ParameterError("fixed-point residual needs features in the ambient space of the data")
    graph = knn(x, min(k, x.shape[0]))
    fld = estimate_derivatives(x, y, graph, L=L)
    n, m = x.shape
    scale = np.sqrt(np.exp(-graph.distances ** 2 / (2.0 * fld.epsilons[:, None])))
    worst = 0.0
    chunk = max(1, 4_000_000 // (graph.k * m))
    eye = np.eye(m)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        X = scale[start:stop, :, None] * (x[graph.indices[start:stop]] - x[start:stop, None, :])
        vt = np.linalg.svd(X, full_matrices=False)[2]
        for b in range(stop - start):
            d = max(1, int(round(fld.local_dim[start + b])))
            T = vt[b, :d]
            err = np.linalg.norm((fld.derivs[start + b] - eye) @ T.T, 2)
            worst = max(worst, float(err))
    return worst


# ---------------------------------------------------------------------------
# alignment and comparison

def eigen_blocks(eigenvalues, rtol: float = 0.05) -> list:
    """Group consecutive modes whose eigenvalues agree to ``rtol``."""
    lam = np.asarray(eigenvalues, dtype=float)
    blocks, cur = [], [0]
    for r in range(1, lam.size):
        ref = lam[cur[0]]
        if abs(lam[r] - ref) <= rtol * max(abs(ref), 1e-300):
            cur.append(r)
        else:
            blocks.append(cur)
            cur = [r]
    if lam.size:
        blocks.append(cur)
    return blocks


def block_procrustes(reference, other, blocks) -> np.ndarray:
    """Rotate ``other`` blockwise onto ``reference`` (columns grouped by ``blocks``)."""
    A = np.asarray(reference, dtype=float)
    B = np.asarray(other, dtype=float).copy()
    for blk in blocks:
        R, _ = orthogonal_procrustes(B[:, blk], A[:, blk])
        B[:, blk] = B[:, blk] @ R
    return B


def aligned_change(reference, other, eigenvalues, n_modes: int | None = None,
                   rtol: float = 0.05) -> float:
    """Relative Frobenius change after blockwise alignment of ``other``."""
    A, B = np.asarray(reference), np.asarray(other)
    n = min(A.shape[1], B.shape[1]) if n_modes is None else n_modes
    blocks = eigen_blocks(np.asarray(eigenvalues)[:n], rtol)
    Bal = block_procrustes(A[:, :n], B[:, :n], blocks)
    return float(np.linalg.norm(Bal - A[:, :n]) / np.linalg.norm(A[:, :n]))


def singular_value_ratio(coords) -> float:
    """``sigma_2 / sigma_1`` of the centered coordinates."""
    X = np.asarray(_coords(coords), dtype=float)
    s = np.linalg.svd(X - X.mean(axis=0), compute_uv=False)
    return float(s[1] / s[0])


def dominant_coordinate(coords) -> np.ndarray:
    """Projection onto the leading principal direction."""
    X = np.asarray(_coords(coords), dtype=float)
    Xc = X - X.mean(axis=0)
    vt = np.linalg.svd(Xc, full_matrices=False)[2]
    return Xc @ vt[0]


def rank_correlation(a, b) -> float:
    return float(spearmanr(np.ravel(a), np.ravel(b))[0])


def distance_correlation(X, Y, max_points: int = 2000, seed: int = 0) -> float:
    """Sample distance correlation; large inputs are subsampled (seeded)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    Y = Y[:, None] if Y.ndim == 1 else Y
    if X.shape[0] > max_points:
        idx = np.sort(np.random.default_rng(seed).choice(X.shape[0], max_points, replace=False))
        X, Y = X[idx], Y[idx]

    def centered(Z):
        d = cdist(Z, Z)
        return d - d.mean(axis=0) - d.mean(axis=1)[:, None] + d.mean()

    A, B = centered(X), centered(Y)
    dxy, dxx, dyy = np.mean(A * B), np.mean(A * A), np.mean(B * B)
    if dxx * dyy <= 0:
        return 0.0
    return float(np.sqrt(max(dxy, 0.0) / np.sqrt(dxx * dyy)))


# ---------------------------------------------------------------------------
# reference flow integrator

@dataclass(frozen=True)
class FlowState:
    """Per-sample metrics ``g`` (N, d, d) and frozen feature derivatives ``DH`` (N, n, d)."""

    g: np.ndarray
    DH: np.ndarray
    dt: float
    t: float = 0.0

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        DH = np.asarray(self.DH, dtype=float)
        if g.ndim == 2:
            g = g[None]
        if DH.ndim == 2:
            DH = DH[None]
        if g.shape[1] != g.shape[2] or DH.shape[0] != g.shape[0] or DH.shape[2] != g.shape[1]:
            raise ParameterError(f"incompatible shapes g {g.shape} and DH {DH.shape}")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        _check_spd(g)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "DH", DH)


def _check_spd(g, t=None):
    if not np.allclose(g, np.swapaxes(g, 1, 2), rtol=1e-12, atol=0.0):
        raise FlowError(f"metric is not symmetric{'' if t is None else f' at t={t:g}'}")
    if np.min(np.linalg.eigvalsh(g)) <= 0:
        raise FlowError(f"metric is not positive definite{'' if t is None else f' at t={t:g}'}")


def _sym_sqrt(A):
    w, v = np.linalg.eigh(A)
    return (v * np.sqrt(w)[:, None, :]) @ np.swapaxes(v, 1, 2)


def flow_integrate(state: FlowState, steps: int, method: str = "euler",
                   tau: float | None = None) -> list:
    """Integrate ``dg/dt = -g + (A g + g A) / 2`` with ``A = DH^T DH`` frozen.

    ``method="multiplicative"`` applies ``g <- c^(-1/2) g c^(-1/2)`` with
    ``c = ((1 - tau) I + tau A)^(-1)`` and ``tau`` defaulting to ``dt``.
    Returns the list of states including the initial one.
    """
    if method not in ("euler", "multiplicative"):
        raise ParameterError(f"method must be 'euler' or 'multiplicative', got {method!r}")
    tau = state.dt if tau is None else tau
    A = np.swapaxes(state.DH, 1, 2) @ state.DH
    d = A.shape[1]
    if method == "multiplicative":
        S = _sym_sqrt((1.0 - tau) * np.eye(d) + tau * A)
        # exact identity blocks stay exact
        S[np.isclose(S, np.round(S), rtol=0, atol=1e-15)] = np.round(S)[
            np.isclose(S, np.round(S), rtol=0, atol=1e-15)]
    out = [state]
    g = state.g.copy()
    t = state.t
    for _ in range(steps):
        if method == "euler":
            g = g + state.dt * (-g + 0.5 * (A @ g + g @ A))
        else:
            g = S @ g @ S
        g = 0.5 * (g + np.swapaxes(g, 1, 2))
        t += state.dt
        _check_spd(g, t)
        out.append(FlowState(g, state.DH, state.dt, t))
    return out

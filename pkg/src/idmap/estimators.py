"""scikit-learn style estimators wrapping the functional pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import ParameterError
from .idm import IdmParams, LinearFeatureDecoder, feature_embedding, fit_decoder, idm_run, \
    idm_transform
from .kernels import anisotropic_distance, assemble_kernel, global_bandwidth
from .local_analysis import estimate_derivatives, local_geometry
from .neighbors import knn
from .spectral import (KernelRecipe, RescaledMapParams, density_normalize, eigensolve,
                       nystrom_extend, rescaled_map)


class DiffusionMap(TransformerMixin, BaseEstimator):
    """Rescaled diffusion map with locally estimated dimension and density.

    Parameters
    ----------
    n_components : int, default=250
        Number of nontrivial modes ``M``.
    n_neighbors : int, default=500
        Stencil size ``k``.
    k2 : int, default=32
        Neighbors used by the global bandwidth rule.
    L : int, default=100
        Bandwidth grid size for the local tuning.
    diffusion_time : float or None
        Diffusion time ``s``; ``None`` uses ``s_factor * epsilon``.
    s_factor : float, default=5.0
        Diffusion time in units of the global bandwidth.
    random_state : int, default=0
        Seed for the iterative eigensolver.

    Attributes
    ----------
    embedding_ : ndarray of shape (n_samples, n_components)
    eigenvalues_ : ndarray
        Laplacian eigenvalues, trivial mode first.
    epsilon_ : float
    local_dims_ : ndarray
    density_ : ndarray
    """

    def __init__(self, n_components=250, n_neighbors=500, k2=32, L=100,
                 diffusion_time=None, s_factor=5.0, random_state=0):
        self.n_components = n_components
        self.n_neighbors = n_neighbors
        self.k2 = k2
        self.L = L
        self.diffusion_time = diffusion_time
        self.s_factor = s_factor
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=3)
        k = min(self.n_neighbors, X.shape[0])
        graph = knn(X, k)
        _, dims, q = local_geometry(graph, self.L)
        dist = anisotropic_distance(X, graph, None, 0.0)
        eps = global_bandwidth(dist, min(self.k2, k))
        decomp = density_normalize(
            eigensolve(assemble_kernel(dist, eps, graph), self.n_components,
                       seed=self.random_state), q)
        s = self.s_factor * eps if self.diffusion_time is None else float(self.diffusion_time)
        emb = rescaled_map(decomp, RescaledMapParams(s, self.n_components, dims), 1)
        self.decomposition_ = decomp
        self.recipe_ = KernelRecipe.from_graph(X, graph, eps, local_dims=dims)
        self.embedding_ = np.asarray(emb.coords)
        self.eigenvalues_ = decomp.lam
        self.epsilon_ = eps
        self.s_ = s
        self.local_dims_ = dims
        self.density_ = q
        self.n_features_in_ = X.shape[1]
        return self

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).embedding_

    def transform(self, X):
        """Nyström extension of the embedding to new samples."""
        check_is_fitted(self, "embedding_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ParameterError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        _, coords = nystrom_extend(X, self.recipe_, self.decomposition_, s=self.s_,
                                   M=self.n_components)
        return coords


class LocalDerivativeEstimator(BaseEstimator):
    """Weighted local regression of a feature map with tuned bandwidths.

    After ``fit(X, y)``, ``derivatives_`` has shape ``(n_samples, n_outputs,
    n_features)``.
    """

    def __init__(self, n_neighbors=500, L=100, mode="simple"):
        self.n_neighbors = n_neighbors
        self.L = L
        self.mode = mode

    def fit(self, X, y):
        X = check_array(X, ensure_min_samples=3)
        y = check_array(y, ensure_2d=False)
        y = y[:, None] if y.ndim == 1 else y
        if y.shape[0] != X.shape[0]:
            raise ParameterError("X and y have different numbers of samples")
        graph = knn(X, min(self.n_neighbors, X.shape[0]))
        field = estimate_derivatives(X, y, graph, L=self.L, mode=self.mode)
        self.derivatives_ = field.derivs
        self.local_dims_ = field.local_dim
        self.density_ = field.density
        self.bandwidths_ = field.epsilons
        self.n_features_in_ = X.shape[1]
        return self


class IteratedDiffusionMap(TransformerMixin, BaseEstimator):
    """Iterated diffusion map biased toward a supervised feature.

    ``fit(X, y)`` runs the iteration with ``y`` as the feature values;
    ``transform`` carries new samples through every pass by Nyström
    extension.  With ``with_decoder=True`` a linear decoder onto the feature's own
    diffusion coordinates is fitted as well (see :meth:`decode`).

    Parameters
    ----------
    tau : float, default=0.5
    n_iter : int, default=4
    n_components : int, default=250
    n_neighbors : int, default=500
    k2 : int, default=32
    L : int, default=100
    mode : {"simple", "robust"}
    form : {"blend", "covariance"}
    s_factor : float, default=5.0
        Diffusion time in units of the global bandwidth.
    random_state : int, default=0
    with_decoder : bool, default=False
    """

    def __init__(self, tau=0.5, n_iter=4, n_components=250, n_neighbors=500, k2=32, L=100,
                 mode="simple", form="blend", s_factor=5.0, random_state=0, with_decoder=False):
        self.tau = tau
        self.n_iter = n_iter
        self.n_components = n_components
        self.n_neighbors = n_neighbors
        self.k2 = k2
        self.L = L
        self.mode = mode
        self.form = form
        self.s_factor = s_factor
        self.random_state = random_state
        self.with_decoder = with_decoder

    def _params(self, n_samples):
        k = min(self.n_neighbors, n_samples)
        return IdmParams(tau=self.tau, iterations=self.n_iter, k=k, k2=min(self.k2, k),
                         L=self.L, M=self.n_components, mode=self.mode, seed=self.random_state,
                         form=self.form, s_factor=self.s_factor)

    def fit(self, X, y):
        X = check_array(X, ensure_min_samples=3)
        y = check_array(y, ensure_2d=False)
        y = y[:, None] if y.ndim == 1 else y
        if y.shape[0] != X.shape[0]:
            raise ParameterError("X and y have different numbers of samples")
        params = self._params(X.shape[0])
        self.trajectory_ = idm_run(X, y, params)
        self.embedding_ = np.asarray(self.trajectory_.final.coords)
        self.n_features_in_ = X.shape[1]
        if self.with_decoder:
            self.feature_embedding_ = feature_embedding(y, params)
            self.decoder_: LinearFeatureDecoder = fit_decoder(self.trajectory_,
                                                              self.feature_embedding_)
        return self

    def fit_transform(self, X, y=None, **fit_params):
        if y is None:
            raise ParameterError("IteratedDiffusionMap needs feature values y")
        return self.fit(X, y).embedding_

    def transform(self, X):
        check_is_fitted(self, "trajectory_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ParameterError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return idm_transform(self.trajectory_, X)

    def decode(self, Z):
        """Map IDM coordinates onto the feature's diffusion coordinates."""
        check_is_fitted(self, "decoder_")
        return self.decoder_.predict(Z)

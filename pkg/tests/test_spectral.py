import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import sparse

from idmap.core import ConnectivityError, ParameterError
from idmap.kernels import assemble_kernel, global_bandwidth
from idmap.local_analysis import local_geometry
from idmap.manifolds import circle
from idmap.neighbors import knn
from idmap.spectral import (ExtrapolationWarning, KernelRecipe, RescaledMapParams,
                            density_normalize, diffusion_distances, eigensolve, normalize_kernel,
                            nystrom_extend, rescale_factor, rescaled_map, symmetric_eigs)


@pytest.mark.parametrize("a", [0.1, 0.5, 0.9])
def test_two_by_two_spectrum(a):
    d = eigensolve(np.array([[1.0, a], [a, 1.0]]), 1)
    np.testing.assert_allclose(d.xi, [1.0, (1 - a) / (1 + a)], rtol=1e-12)


def test_diagonal_kernel_is_identity():
    Khat, dhat, D = normalize_kernel(np.diag([1.0, 2.0, 4.0]))
    np.testing.assert_allclose(Khat, np.eye(3))
    np.testing.assert_allclose(D, [1.0, 2.0, 4.0])
    np.testing.assert_allclose(dhat ** 2, 1.0 / D)


def test_sparse_and_dense_normalization_agree(rng):
    A = rng.uniform(0, 1, (20, 20))
    A = A + A.T
    Kd, hd, _ = normalize_kernel(A)
    Ks, hs, _ = normalize_kernel(sparse.csr_matrix(A))
    np.testing.assert_allclose(Ks.toarray(), Kd, atol=1e-14)
    np.testing.assert_allclose(hs, hd)


def test_isolated_point():
    A = np.eye(3)
    A[2, 2] = 0.0
    with pytest.raises(ConnectivityError):
        normalize_kernel(A)


@pytest.fixture(scope="module")
def ring():
    fx = circle(300)
    g = knn(fx.cloud, 40)
    _, dims, q = local_geometry(g)
    eps = global_bandwidth(g.distances, 16)
    J = assemble_kernel(g.distances, eps, g)
    return fx, g, J, dims, q


def test_residuals_and_order(ring):
    _, _, J, _, _ = ring
    Khat, _, _ = normalize_kernel(J)
    for dense_max in (5000, 10):
        vals, vecs = symmetric_eigs(Khat, 12, dense_max=dense_max)
        assert np.all(np.diff(vals) <= 0)
        assert vals[0] == pytest.approx(1.0, abs=1e-10)
        res = np.linalg.norm(Khat @ vecs - vecs * vals, axis=0)
        assert res.max() < 1e-8


def test_lanczos_matches_dense(ring):
    _, _, J, _, _ = ring
    a = eigensolve(J, 8)
    b = eigensolve(J, 8, dense_max=10)
    np.testing.assert_allclose(a.xi, b.xi, atol=1e-10)
    np.testing.assert_allclose(np.abs(a.phi[:, :2]), np.abs(b.phi[:, :2]), atol=1e-7)


def test_too_many_modes(ring):
    _, _, J, _, _ = ring
    Khat, _, _ = normalize_kernel(J)
    with pytest.raises(ParameterError):
        symmetric_eigs(Khat, 301)


def test_density_normalization(ring):
    _, _, J, _, q = ring
    d = density_normalize(eigensolve(J, 10), q)
    np.testing.assert_allclose(np.mean(d.phi ** 2 / q[:, None], axis=0), 1.0, atol=1e-12)
    assert np.ptp(d.phi[:, 0]) < 1e-10 * abs(d.phi[0, 0])
    with pytest.raises(ParameterError):
        density_normalize(d, -q)


def test_circle_eigenvalues(ring):
    fx, _, J, _, q = ring
    lam = density_normalize(eigensolve(J, 6), q).lam[1:7]
    np.testing.assert_allclose(lam, fx.spectrum(np.arange(1, 7)), rtol=0.05)


def test_prefactor_scaling():
    assert rescale_factor(1.0, 0.25) == pytest.approx((2 * np.pi) ** 0.25)
    r = rescale_factor(2.0, 0.3) / rescale_factor(2.0, 0.15)
    assert r == pytest.approx(2.0)
    np.testing.assert_allclose(rescale_factor(np.array([1.0, 3.0]), 0.1),
                               [(2 * np.pi) ** 0.25 * 0.4 ** 0.75, (2 * np.pi) ** 0.75 * 0.4 ** 1.25])


def test_rescaled_map_shape_and_checks(ring):
    _, _, J, dims, q = ring
    raw = eigensolve(J, 10)
    with pytest.raises(ParameterError):
        rescaled_map(raw, RescaledMapParams(0.1, 5, dims))
    d = density_normalize(raw, q)
    emb = rescaled_map(d, RescaledMapParams(0.1, 50, 1.0))
    assert emb.coords.shape == (300, 10)
    with pytest.raises(ParameterError):
        RescaledMapParams(0.0, 5)
    with pytest.raises(ParameterError):
        RescaledMapParams(0.1, 0)


def test_short_range_distances_are_geodesic(ring):
    fx, _, J, dims, q = ring
    d = density_normalize(eigensolve(J, 60), q)
    emb = rescaled_map(d, RescaledMapParams(0.02, 60, dims))
    dd = diffusion_distances(emb.coords, np.array([[0, 3], [10, 14]]))
    np.testing.assert_allclose(dd, fx.geodesic(np.array([0, 10]), np.array([3, 14])), rtol=0.05)
    assert diffusion_distances(emb.coords[:4]).shape == (4, 4)


def test_nystrom_reproduces_training_points(ring):
    fx, g, J, dims, q = ring
    d = density_normalize(eigensolve(J, 6), q)
    recipe = KernelRecipe.from_graph(fx.cloud, g, J.epsilon, local_dims=dims)
    phi = nystrom_extend(fx.cloud.points[[0, 17, 150]], recipe, d)
    np.testing.assert_allclose(phi, d.phi[[0, 17, 150]], rtol=1e-8, atol=1e-10)


def test_nystrom_midpoints_interpolate(ring):
    fx, g, J, dims, q = ring
    d = density_normalize(eigensolve(J, 6), q)
    recipe = KernelRecipe.from_graph(fx.cloud, g, J.epsilon, local_dims=dims)
    theta = fx.coords["theta"][:20] + np.pi / 300
    mid = np.column_stack([np.cos(theta), np.sin(theta)])
    phi, coords = nystrom_extend(mid, recipe, d, s=0.05, M=4)
    neighbors = 0.5 * (d.phi[:20] + d.phi[1:21])
    np.testing.assert_allclose(phi[:, 1:3], neighbors[:, 1:3], atol=0.02 * np.abs(d.phi[:, 1]).max())
    assert coords.shape == (20, 4)


def test_far_point_warns(ring):
    fx, g, J, dims, q = ring
    d = density_normalize(eigensolve(J, 4), q)
    recipe = KernelRecipe.from_graph(fx.cloud, g, J.epsilon)
    with pytest.warns(ExtrapolationWarning):
        nystrom_extend(np.array([[5.0, 5.0]]), recipe, d)


@given(st.integers(3, 25), st.integers(0, 10_000))
def test_markov_spectrum_bounds(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    g = knn(x, n)
    J = assemble_kernel(g.distances, global_bandwidth(g.distances, n), g)
    d = eigensolve(J, n - 1)
    assert d.xi[0] == pytest.approx(1.0, abs=1e-10)
    assert np.all(d.xi <= 1.0 + 1e-10) and np.all(d.xi > 0)

"""Invariants that must hold on every fixture, for any admissible parameters."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from idmap.idm import IdmParams, idm_run
from idmap.kernels import anisotropic_distance, assemble_kernel, global_bandwidth
from idmap.local_analysis import bandwidth_scan, estimate_derivatives, log_slope, trace_dimension
from idmap.manifolds import add_noise, make_fixture
from idmap.neighbors import knn
from idmap.spectral import density_normalize, eigensolve

FIXTURES = {
    "circle": {"N": 150},
    "annulus": {"N": 300},
    "sphere": {"N": 300},
    "torus": {"grid_size": 15},
}

fixture_names = st.sampled_from(sorted(FIXTURES))


def build(name, seed, noise):
    params = dict(FIXTURES[name])
    if name != "circle" and name != "torus":
        params["seed"] = seed
    fx = make_fixture(name, **params)
    cloud = add_noise(fx.cloud, noise, seed) if noise else fx.cloud
    return fx, cloud


@given(fixture_names, st.integers(0, 50), st.floats(0.0, 1e-3), st.floats(0.0, 0.9),
       st.integers(5, 40))
def test_kernel_symmetric_with_unit_diagonal(name, seed, noise, tau, k):
    fx, cloud = build(name, seed, noise)
    g = knn(cloud, k)
    y = fx.feature().values
    field = estimate_derivatives(cloud, y, g, L=30)
    d = anisotropic_distance(cloud, g, field, tau)
    J = assemble_kernel(d, global_bandwidth(d, min(8, k)), g).entries
    assert abs(J - J.T).max() == 0.0
    np.testing.assert_allclose(J.diagonal(), 1.0)
    assert J.min() >= 0.0 and J.max() <= 1.0


@settings(max_examples=8)
@given(fixture_names, st.integers(0, 50), st.integers(20, 50))
def test_density_normalization_and_trivial_mode(name, seed, k):
    fx, cloud = build(name, seed, 0.0)
    g = knn(cloud, k)
    field = estimate_derivatives(cloud, fx.feature().values, g, L=30)
    d = anisotropic_distance(cloud, g, None, 0.0)
    decomp = density_normalize(eigensolve(assemble_kernel(d, global_bandwidth(d, 8), g), 8),
                               field.density)
    norms = np.mean(decomp.phi ** 2 / field.density[:, None], axis=0)
    assert np.all(np.abs(norms - 1.0) < 0.05)
    phi0 = decomp.phi[:, 0]
    assert np.ptp(phi0) <= 1e-8 * np.abs(phi0).max()
    assert decomp.lam[0] == 0.0 or abs(decomp.lam[0]) < 1e-8
    assert np.all(np.diff(decomp.xi) <= 1e-12)


@given(fixture_names, st.integers(0, 50), st.integers(0, 10_000))
def test_trace_identity(name, seed, point):
    _, cloud = build(name, seed, 0.0)
    g = knn(cloud, 60)
    i = point % cloud.N
    eps = np.geomspace(1e-3, 1.0, 200)
    D = np.exp(-g.distances[i][None, :] ** 2 / (2 * eps[:, None])).sum(axis=1)
    d1 = 2.0 * log_slope(D, eps)
    tr = trace_dimension(cloud, g, i, np.sqrt(eps[:-1] * eps[1:]))
    mask = d1 > 0.1
    assert np.all(np.abs(tr[mask] - d1[mask]) <= 0.05 * d1[mask])


@given(fixture_names, st.integers(0, 50), st.integers(0, 10_000))
def test_dimension_estimates_bounded(name, seed, point):
    _, cloud = build(name, seed, 0.0)
    g = knn(cloud, 60)
    scan = bandwidth_scan(cloud, g, point % cloud.N, L=30)
    assert 0.0 < scan.dim_selected <= cloud.m + 0.5
    assert scan.eps[0] < scan.eps_selected <= scan.eps[-1]


@settings(max_examples=4)
@given(fixture_names, st.integers(0, 20))
def test_runs_are_seed_deterministic(name, seed):
    fx, cloud = build(name, seed, 0.0)
    p = IdmParams(tau=0.3, iterations=1, k=30, k2=8, M=6, L=30, seed=seed)
    a = idm_run(cloud, fx.feature(), p, keep_recipes=False).final.coords
    b = idm_run(cloud, fx.feature(), p, keep_recipes=False).final.coords
    assert np.array_equal(a, b)

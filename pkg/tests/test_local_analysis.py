import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from idmap.core import DegenerateGeometryError, NeighborGraph, ParameterError
from idmap.local_analysis import (AmbiguousFrameWarning, bandwidth_scan, build_chart,
                                  correlation_derivative, density_estimate, determinant_dimension,
                                  epsilon_grid, epsilon_range, estimate_derivative,
                                  estimate_derivative_affine, estimate_derivatives, local_geometry,
                                  log_slope, scaling_laws, tangent_frame, trace_dimension,
                                  tune_bandwidths)
from idmap.manifolds import circle, torus
from idmap.neighbors import knn


def test_single_neighbor_chart_is_zero():
    x = np.random.default_rng(0).standard_normal((5, 3))
    chart = build_chart(x, knn(x, 1), 2, 0.5)
    assert chart.X.shape == (1, 3)
    assert chart.weight_sum == 1.0
    assert np.all(chart.X == 0.0)


def test_chart_rows_by_hand():
    x = np.array([[0.0], [1.0], [3.0]])
    g = knn(x, 3)
    chart = build_chart(x, g, 0, 1.0)
    w = np.exp(-np.array([0.0, 1.0, 9.0]) / 2.0)
    np.testing.assert_allclose(chart.weights, w)
    np.testing.assert_allclose(chart.X[:, 0], np.sqrt(w / w.sum()) * np.array([0.0, 1.0, 3.0]))


def test_plane_has_no_normal_singular_value(rng):
    uv = rng.uniform(-1, 1, (400, 2))
    a, b = np.array([1.0, 2.0, -1.0]), np.array([0.5, -1.0, 0.3])
    x = uv[:, :1] * a + uv[:, 1:] * b
    chart = build_chart(x, knn(x, 60), 0, 0.2)
    s = chart.singular_values
    assert s[2] <= 1e-12 * s[0]


def test_d1_vanishes_at_grid_ends():
    t = np.linspace(0.0, 1.0, 101)
    x = np.column_stack([t, np.zeros_like(t)])
    g = knn(x, 50)
    scan = bandwidth_scan(x, g, 50, L=100)
    assert abs(scan.d1[0]) < 1e-3
    assert abs(scan.d1[-1]) < 0.05
    assert 0.8 < scan.dim_selected < 1.2


def test_line_singular_value_scales_like_sqrt_eps():
    t = np.linspace(-1.0, 1.0, 401)
    x = np.column_stack([t, 2.0 * t])
    scan = bandwidth_scan(x, knn(x, 200), 200, L=100, mode="robust")
    assert abs(scan.alpha[scan.selected, 0] - 0.5) < 0.05
    assert abs(scan.dim_selected - 1.0) < 0.1


def test_circle_tangent_frame():
    fx = circle(400)
    g = knn(fx.cloud, 40)
    for i in (0, 37, 123):
        frame = tangent_frame(build_chart(fx.cloud, g, i, 1e-3), 1)
        assert abs(abs(frame.basis[0] @ fx.tangents[i, 0]) - 1.0) < 1e-3


def test_frame_dimension_checked():
    fx = circle(50)
    chart = build_chart(fx.cloud, knn(fx.cloud, 5), 0, 0.1)
    with pytest.raises(ParameterError):
        tangent_frame(chart, 3)


def test_repeated_singular_value_warns():
    x = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    chart = build_chart(x, knn(x, 5), 0, 10.0)
    with pytest.warns(AmbiguousFrameWarning):
        assert tangent_frame(chart, 1).ambiguous


def test_circle_density():
    N = 1000
    fx = circle(N)
    g = knn(fx.cloud, 100)
    _, dims, q = local_geometry(g)
    np.testing.assert_allclose(q, 1.0 / (2.0 * np.pi), rtol=0.10)
    np.testing.assert_allclose(dims, 1.0, atol=0.1)
    chart = build_chart(fx.cloud, g, 0, 1e-3)
    assert abs(density_estimate(chart, 1.0, N) * 2.0 * np.pi - 1.0) < 0.10


def test_denser_half_has_double_density():
    n = 600
    theta = np.concatenate([np.pi * np.arange(n) / n, np.pi + np.pi * np.arange(2 * n) / (2 * n)])
    x = np.column_stack([np.cos(theta), np.sin(theta)])
    _, _, q = local_geometry(knn(x, 60))
    sparse = q[np.abs(theta - np.pi / 2) < 0.5].mean()
    dense = q[np.abs(theta - 3 * np.pi / 2) < 0.5].mean()
    assert abs(sparse * 3 * np.pi - 1.0) < 0.10
    assert abs(dense / sparse - 2.0) < 0.2


def test_density_dimension_checked():
    chart = build_chart(np.eye(3), knn(np.eye(3), 2), 0, 1.0)
    with pytest.raises(ParameterError):
        density_estimate(chart, 0.0, 3)


def test_identity_feature_on_torus_is_tangent_projector():
    fx = torus(50)
    x = fx.cloud.points
    field = estimate_derivatives(x, x, knn(x, 200))
    T = fx.tangents
    proj = np.einsum("nai,nij,nbj->nab", T, field.derivs, T)
    err = np.abs(proj - np.eye(2)).max(axis=(1, 2))
    assert np.median(err) < 0.05
    assert np.all(field.local_dim > 1.5) and np.all(field.local_dim < 2.5)


def test_affine_features_recovered_exactly(rng):
    x = rng.standard_normal((80, 3))
    A = rng.standard_normal((2, 3))
    y = x @ A.T + np.array([1.0, -2.0])
    g = knn(x, 30)
    chart = build_chart(x, g, 5, 0.7, y)
    np.testing.assert_allclose(estimate_derivative(chart), A, atol=1e-10)
    G, b = estimate_derivative_affine(x, y, x[5] + 0.01, 0.7, 30)
    np.testing.assert_allclose(G, A, atol=1e-10)
    np.testing.assert_allclose(b, A @ (x[5] + 0.01) + np.array([1.0, -2.0]), atol=1e-10)
    field = estimate_derivatives(x, y, g)
    np.testing.assert_allclose(field.derivs, np.broadcast_to(A, field.derivs.shape), atol=1e-8)


def test_correlation_derivative_requires_features():
    chart = build_chart(np.eye(3), knn(np.eye(3), 2), 0, 1.0)
    with pytest.raises(ParameterError):
        correlation_derivative(chart)
    with pytest.raises(ParameterError):
        estimate_derivative(chart)


def test_trace_identity():
    fx = torus(30)
    g = knn(fx.cloud, 200)
    eps = np.geomspace(1e-3, 1.0, 400)
    D = np.exp(-g.distances[0][None, :] ** 2 / (2 * eps[:, None])).sum(axis=1)
    d1 = 2.0 * log_slope(D, eps)
    mid = np.sqrt(eps[:-1] * eps[1:])
    tr = trace_dimension(fx.cloud, g, 0, mid)
    np.testing.assert_allclose(tr, d1, rtol=1e-3, atol=1e-6)


@pytest.mark.parametrize("eps", [0.0, -1.0])
def test_nonpositive_epsilon(eps):
    with pytest.raises(ParameterError):
        build_chart(np.eye(3), knn(np.eye(3), 2), 0, eps)


def test_coincident_neighbors_are_degenerate():
    x = np.zeros((4, 2))
    g = knn(x, 3)
    with pytest.raises(DegenerateGeometryError):
        bandwidth_scan(x, g, 0)
    with pytest.raises(DegenerateGeometryError):
        epsilon_range(g.distances[0])


def test_scan_argument_checks():
    x = circle(20).cloud
    with pytest.raises(ParameterError):
        bandwidth_scan(x, knn(x, 5), 0, mode="fast")
    with pytest.raises(ParameterError):
        bandwidth_scan(x, knn(x, 1), 0)
    with pytest.raises(ParameterError):
        bandwidth_scan(x, knn(x, 5), 0, L=2)
    with pytest.raises(ParameterError):
        bandwidth_scan(x, knn(x, 5), 0, eps_grid=[1.0, 0.5, 2.0])
    with pytest.raises(ParameterError):
        tune_bandwidths(knn(x, 5), L=2)


def test_simple_scan_has_no_singular_values():
    x = circle(20).cloud
    scan = bandwidth_scan(x, knn(x, 5), 0)
    with pytest.raises(ParameterError):
        scaling_laws(scan)


def test_epsilon_range_values():
    d = np.array([0.0, 0.1, 0.5, 2.0])
    lo, hi = epsilon_range(d)
    assert lo == pytest.approx(0.01 / (2 * abs(math.log(np.finfo(float).eps))))
    assert hi == pytest.approx(40.0)
    assert epsilon_range(np.array([0.0, 0.01, 0.05]))[1] == pytest.approx(0.5)


def test_epsilon_grid_endpoints():
    g = epsilon_grid(1e-4, 10.0, 50)
    assert g.size == 50 and g[-1] == pytest.approx(10.0)
    np.testing.assert_allclose(np.diff(np.log(g)), np.log(1e5) / 50)


def test_determinant_dimension_fractional_share():
    alpha = np.array([[0.5, 0.5, 1.0], [0.5, np.nan, 1.0]])
    out = determinant_dimension(np.array([1.5, 2.0]), alpha)
    np.testing.assert_allclose(out, [1.0 + 0.5, 1.0])


def test_robust_and_simple_agree_on_circle():
    fx = circle(500)
    g = knn(fx.cloud, 100)
    a = bandwidth_scan(fx.cloud, g, 3)
    b = bandwidth_scan(fx.cloud, g, 3, mode="robust")
    eps, dims = tune_bandwidths(g)
    assert a.eps_selected == pytest.approx(eps[3])
    assert a.dim_selected == pytest.approx(dims[3])
    assert abs(b.dim_selected - 1.0) < 0.1


@given(st.floats(0.1, 10.0), st.integers(0, 19))
def test_trace_matches_scaled_singular_values(eps, i):
    fx = circle(20)
    g = knn(fx.cloud, 10)
    chart = build_chart(fx.cloud, g, i, eps)
    tr = trace_dimension(fx.cloud, g, i, np.array([eps]))[0]
    assert tr == pytest.approx(np.sum(chart.singular_values ** 2) / eps, rel=1e-9)


def test_graph_type_passes_through(rng):
    x = rng.standard_normal((10, 2))
    g = knn(x, 4)
    assert isinstance(g, NeighborGraph)
    assert build_chart(x, g, 0, 1.0).X.shape == (4, 2)

"""Synthetic fixtures with analytic oracles.

Each generator returns a :class:`Fixture` whose oracle callables are
evaluated on the generated samples (ambient-coordinate gradients, tangent
frames, geodesic distances, Laplacian spectra where known).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import FeatureSet, ParameterError, PointCloud


@dataclass(frozen=True)
class Fixture:
    name: str
    cloud: PointCloud
    features: dict[str, FeatureSet]
    params: dict
    # intrinsic coordinates of every sample, e.g. {"theta": ..., "r": ...}
    coords: dict[str, np.ndarray] = field(default_factory=dict)
    tangents: np.ndarray | None = None          # (N, d, m), orthonormal rows
    gradients: dict[str, np.ndarray] = field(default_factory=dict)  # (N, n, m)
    geodesic: Callable | None = None
    spectrum: Callable | None = None

    def feature(self, name=None) -> FeatureSet:
        if name is None:
            name = next(iter(self.features))
        return self.features[name]

    def manifest(self) -> dict:
        return {"name": self.name, "params": self.params,
                "N": self.cloud.N, "m": self.cloud.m,
                "features": {k: v.n for k, v in self.features.items()}}


def _orthonormal_rows(frames):
    # Gram-Schmidt on the last two axes, rows in order
    q, _ = np.linalg.qr(np.swapaxes(frames, 1, 2))
    return np.swapaxes(q, 1, 2)


def circle(N: int) -> Fixture:
    """``N`` equally spaced points on the unit circle in R^2."""
    if N < 3:
        raise ParameterError("circle needs N >= 3")
    theta = 2.0 * np.pi * np.arange(N) / N
    pts = np.column_stack([np.cos(theta), np.sin(theta)])
    # exact values at the quarter points
    pts[np.isclose(np.abs(pts), 0.0, atol=1e-15)] = 0.0
    tangents = np.column_stack([-np.sin(theta), np.cos(theta)])[:, None, :]

    def geodesic(i, j):
        d = np.abs(theta[np.asarray(i)] - theta[np.asarray(j)])
        return np.minimum(d, 2.0 * np.pi - d)

    def spectrum(r):
        return -np.ceil(np.asarray(r) / 2.0) ** 2

    grads = {"identity": np.broadcast_to(np.eye(2), (N, 2, 2)).copy()}
    return Fixture("circle", PointCloud(pts), {"identity": FeatureSet(pts)}, {"N": N},
                   {"theta": theta}, tangents, grads, geodesic, spectrum)


def annulus(N: int, seed: int = 0, r_min: float = 1.0, r_max: float = 3.0) -> Fixture:
    """Uniform samples in ``(theta, r)`` over ``[0, 2 pi) x [r_min, r_max]``.

    Features: ``"radius"`` (r) and ``"angle"`` ((sin theta, cos theta)).
    """
    if N < 100:
        raise ParameterError("annulus needs N >= 100")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2.0 * np.pi, N)
    r = rng.uniform(r_min, r_max, N)
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    # d r / d(x, y) = (x, y) / r;  d theta / d(x, y) = (-y, x) / r**2
    grad_r = (pts / r[:, None])[:, None, :]
    dtheta = np.column_stack([-pts[:, 1], pts[:, 0]]) / (r ** 2)[:, None]
    grad_angle = np.stack([np.cos(theta)[:, None] * dtheta,
                           -np.sin(theta)[:, None] * dtheta], axis=1)
    tangents = np.broadcast_to(np.eye(2), (N, 2, 2)).copy()
    feats = {"radius": FeatureSet(r[:, None]),
             "angle": FeatureSet(np.column_stack([np.sin(theta), np.cos(theta)]))}
    return Fixture("annulus", PointCloud(pts), feats,
                   {"N": N, "seed": seed, "r_min": r_min, "r_max": r_max},
                   {"theta": theta, "r": r}, tangents,
                   {"radius": grad_r, "angle": grad_angle})


def _torus_grid(grid_size):
    t = 2.0 * np.pi * np.arange(grid_size) / grid_size
    theta, phi = np.meshgrid(t, t, indexing="ij")
    return theta.ravel(), phi.ravel()


def torus_embedding(theta, phi):
    c = 2.0 + np.cos(theta)
    return np.column_stack([c * np.cos(phi), c * np.sin(phi), np.sin(theta)])


def torus_tangents(theta, phi):
    """Unit tangents ``d/dtheta``, ``d/dphi`` and the unit normal, each (N, 3)."""
    t_theta = np.column_stack([-np.sin(theta) * np.cos(phi), -np.sin(theta) * np.sin(phi),
                               np.cos(theta)])
    t_phi = np.column_stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)])
    normal = np.cross(t_theta, t_phi)
    return t_theta, t_phi, normal


def xyy_z(pts):
    """Scalar feature ``x y**2 + z`` and its ambient gradient ``(y**2, 2 x y, 1)``."""
    pts = np.asarray(pts, dtype=float)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    values = x * y ** 2 + z
    grad = np.column_stack([y ** 2, 2.0 * x * y, np.ones_like(x)])
    return values, grad


def scalar_feature_xyy_z(cloud) -> tuple[FeatureSet, np.ndarray]:
    """``(FeatureSet, gradients (N, 1, 3))`` for the feature ``x y**2 + z``."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    if pts.shape[1] != 3:
        raise ParameterError("x y^2 + z is defined on R^3 clouds only")
    values, grad = xyy_z(pts)
    return FeatureSet(values[:, None]), grad[:, None, :]


def _circle_pair_gradient(angle, dangle):
    # d/dx (sin a, cos a) = (cos a, -sin a) outer da/dx
    return np.stack([np.cos(angle)[:, None] * dangle, -np.sin(angle)[:, None] * dangle], axis=1)


def torus(grid_size: int) -> Fixture:
    """Standard torus ``((2+cos t) cos p, (2+cos t) sin p, sin t)`` on a uniform grid.

    Features: ``"xyy_z"``, ``"phi_circle"`` ((sin p, cos p)) and
    ``"theta_circle"`` ((sin t, cos t)).
    """
    if grid_size < 10:
        raise ParameterError("torus needs grid_size >= 10")
    theta, phi = _torus_grid(grid_size)
    pts = torus_embedding(theta, phi)
    t_theta, t_phi, _ = torus_tangents(theta, phi)
    tangents = np.stack([t_theta, t_phi], axis=1)
    vals, grad = xyy_z(pts)
    # ambient gradients of the intrinsic angles: |d/dtheta| = 1, |d/dphi| = 2 + cos t
    dtheta = t_theta
    dphi = t_phi / (2.0 + np.cos(theta))[:, None]
    feats = {"xyy_z": FeatureSet(vals[:, None]),
             "phi_circle": FeatureSet(np.column_stack([np.sin(phi), np.cos(phi)])),
             "theta_circle": FeatureSet(np.column_stack([np.sin(theta), np.cos(theta)]))}
    grads = {"xyy_z": grad[:, None, :],
             "phi_circle": _circle_pair_gradient(phi, dphi),
             "theta_circle": _circle_pair_gradient(theta, dtheta)}
    return Fixture("torus", PointCloud(pts), feats, {"grid_size": grid_size},
                   {"theta": theta, "phi": phi}, tangents, grads)


def random_orthogonal(n: int, seed: int) -> np.ndarray:
    """Orthonormalized seeded Gaussian matrix, sign-fixed so it is unique."""
    a = np.random.default_rng(seed).standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


def torus30(grid_size: int, seed: int = 0) -> Fixture:
    """Torus in R^30: 3 standard coordinates plus 27 mixed cubic ones.

    The extra coordinates are ``Q @ (x**3, y**3, z**3, 0, ..., 0) / 30`` for
    a seeded random orthogonal ``Q`` (27 x 27) applied to the cubes padded
    with zeros.
    """
    base = torus(grid_size)
    theta, phi = base.coords["theta"], base.coords["phi"]
    pts3 = base.cloud.points
    Q = random_orthogonal(27, seed)
    cubes = np.zeros((pts3.shape[0], 27))
    cubes[:, :3] = pts3 ** 3 / 30.0
    pts = np.column_stack([pts3, cubes @ Q.T])
    t_theta, t_phi, _ = torus_tangents(theta, phi)
    # chain rule: d/du (x^3/30) = x^2/10 * dx/du
    def lift(t3):
        c = np.zeros((t3.shape[0], 27))
        c[:, :3] = pts3 ** 2 / 10.0 * t3
        return np.column_stack([t3, c @ Q.T])
    frames = np.stack([lift(t_theta * 1.0), lift(t_phi * (2.0 + np.cos(theta))[:, None])], axis=1)
    return Fixture("torus30", PointCloud(pts), dict(base.features),
                   {"grid_size": grid_size, "seed": seed, "mixing": Q.tolist()},
                   {"theta": theta, "phi": phi}, _orthonormal_rows(frames))


def sphere(N: int, seed: int = 0) -> Fixture:
    """Uniform points on the unit sphere S^2.

    Features: ``"x"`` and ``"twist"`` = ``sin(pi z / 2 + atan2(y, x))``.
    """
    if N < 100:
        raise ParameterError("sphere needs N >= 100")
    g = np.random.default_rng(seed).standard_normal((N, 3))
    pts = g / np.linalg.norm(g, axis=1, keepdims=True)
    x, y, z = pts.T
    proj = np.eye(3)[None] - pts[:, :, None] * pts[:, None, :]
    grad_x = proj @ np.array([1.0, 0.0, 0.0])
    arg = np.pi * z / 2.0 + np.arctan2(y, x)
    rho2 = x ** 2 + y ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        datan = np.column_stack([-y / rho2, x / rho2, np.zeros(N)])
    ambient = np.cos(arg)[:, None] * (datan + np.array([0.0, 0.0, np.pi / 2.0]))
    grad_twist = np.einsum("nij,nj->ni", proj, ambient)
    # tangent frame: project two fixed axes and orthonormalize
    e = np.where(np.abs(x)[:, None] < 0.9, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
    t1 = e - np.sum(e * pts, axis=1, keepdims=True) * pts
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(pts, t1)
    feats = {"x": FeatureSet(x[:, None]), "twist": FeatureSet(np.sin(arg)[:, None])}
    return Fixture("sphere", PointCloud(pts), feats, {"N": N, "seed": seed},
                   {"z": z, "azimuth": np.arctan2(y, x)}, np.stack([t1, t2], axis=1),
                   {"x": grad_x[:, None, :], "twist": grad_twist[:, None, :]})


def add_noise(cloud, covariance_scale: float, seed: int = 0) -> PointCloud:
    """Add i.i.d. ``N(0, covariance_scale * I)`` noise to every point."""
    if covariance_scale < 0:
        raise ParameterError("covariance_scale must be non-negative")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    if covariance_scale == 0:
        return PointCloud(pts)
    noise = np.random.default_rng(seed).standard_normal(pts.shape)
    return PointCloud(pts + math.sqrt(covariance_scale) * noise)


FIXTURES = {"circle", "annulus", "torus", "torus30", "sphere"}


def make_fixture(name: str, **params) -> Fixture:
    """Build a fixture by name, e.g. ``make_fixture("torus", grid_size=100)``."""
    builders = {"circle": circle, "annulus": annulus, "torus": torus,
                "torus30": torus30, "sphere": sphere}
    if name not in builders:
        raise ParameterError(f"unknown fixture {name!r}; choose from {sorted(builders)}")
    return builders[name](**params)

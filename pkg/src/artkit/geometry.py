"""Ball domain geometry and quadrature on the unit sphere.

Points and directions are plain float64 arrays of shape (3,). Directions are
unit vectors; use :func:`direction` to build one (it renormalizes). The
computational domain is a ball, which gives closed-form ray exit lengths.
Angular integrals use a product rule, Gauss-Legendre in the polar cosine
times a uniform trapezoid in azimuth, with weights summing to 4*pi (the
angular measure is unnormalized).
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "point",
    "direction",
    "BallDomain",
    "UNIT_BALL",
    "SphereGrid",
    "make_sphere_grid",
    "sphere_integrate",
    "ray_exit_length",
    "ray_exit_lengths",
]

_NORM_TOL = 1e-12


def point(x1, x2, x3):
    """Build a point in R^3, rejecting non-finite coordinates."""
    p = np.array([x1, x2, x3], dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("point coordinates must be finite")
    return p


def direction(x1, x2, x3):
    """Build a unit direction, renormalizing if |v| deviates from 1."""
    v = np.array([x1, x2, x3], dtype=float)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError("direction must be a nonzero finite vector")
    if abs(n - 1.0) > _NORM_TOL:
        v = v / n
    return v


@dataclass(frozen=True)
class BallDomain:
    """Ball of given center and radius; the support region for all transforms."""

    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        if not self.radius > 0.0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def center_array(self):
        return np.asarray(self.center, dtype=float)


UNIT_BALL = BallDomain()


def ray_exit_length(x, xi, dom=UNIT_BALL):
    """Arc length from x to the domain boundary along the ray s -> x - s*xi.

    Returns the largest s >= 0 for which the segment {x - u*xi : 0 <= u <= s}
    stays in the closed ball, i.e. the truncation point for ray integrals of
    compactly supported integrands. Raises ValueError for x strictly outside.
    """
    return float(ray_exit_lengths(np.asarray(x, dtype=float)[None, :], xi, dom)[0])


def ray_exit_lengths(points, xi, dom=UNIT_BALL):
    """Vectorized :func:`ray_exit_length` for an (n, 3) array of points."""
    pts = np.asarray(points, dtype=float)
    xi = np.asarray(xi, dtype=float)
    d = pts - dom.center_array
    d2 = np.einsum("ij,ij->i", d, d)
    # allow a sliver of rounding slack for points sitting on the boundary
    if np.any(d2 > dom.radius**2 * (1.0 + 1e-12)):
        raise ValueError("point lies strictly outside the domain")
    b = d @ xi
    disc = b * b - d2 + dom.radius**2
    s = b + np.sqrt(np.maximum(disc, 0.0))
    return np.maximum(s, 0.0)


@dataclass(frozen=True)
class SphereGrid:
    """Quadrature nodes and weights on the unit sphere.

    nodes has shape (n, 3); weights sum to 4*pi. The grid is the product of
    n_polar Gauss-Legendre nodes in cos(theta) with n_azimuth uniformly
    spaced azimuths, exact for spherical polynomials of degree up to
    min(2*n_polar - 1, n_azimuth - 1).
    """

    nodes: np.ndarray
    weights: np.ndarray
    n_polar: int
    n_azimuth: int

    def __len__(self):
        return self.nodes.shape[0]


def make_sphere_grid(n_polar, n_azimuth):
    """Product Gauss-Legendre x trapezoid quadrature grid on the sphere."""
    if n_polar < 1 or n_azimuth < 1:
        raise ValueError("n_polar and n_azimuth must be >= 1")
    mu, w_mu = np.polynomial.legendre.leggauss(n_polar)
    phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    w_phi = 2.0 * np.pi / n_azimuth
    sin_th = np.sqrt(1.0 - mu**2)
    cos_p, sin_p = np.cos(phi), np.sin(phi)
    nodes = np.empty((n_polar * n_azimuth, 3))
    nodes[:, 0] = np.outer(sin_th, cos_p).ravel()
    nodes[:, 1] = np.outer(sin_th, sin_p).ravel()
    nodes[:, 2] = np.repeat(mu, n_azimuth)
    weights = np.repeat(w_mu * w_phi, n_azimuth)
    return SphereGrid(nodes=nodes, weights=weights, n_polar=n_polar, n_azimuth=n_azimuth)


def sphere_integrate(grid, g):
    """Quadrature sum of g over the sphere grid, sum_i w_i g(xi_i)."""
    vals = np.array([g(xi) for xi in grid.nodes], dtype=complex)
    return complex(np.sum(grid.weights * vals))

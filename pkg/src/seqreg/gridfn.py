"""Sampled functions on a common grid and orthonormal spline bases.

Everything downstream works with functions observed at shared, strictly
increasing time points spanning [0, 1].  Inner products are trapezoid-rule
approximations on that grid, and the cubic B-spline basis is orthonormalized
with respect to exactly that inner product so template coefficients can be
read off by projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import NumericalError

__all__ = [
    "Grid",
    "FunctionSample",
    "BasisSet",
    "make_uniform_grid",
    "trapezoid_weights",
    "derivative",
    "interp_linear",
    "make_basis",
    "synthesize",
]


def _validated_1d(x, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing sample points t_1 < ... < t_M with t_1=0, t_M=1."""

    points: np.ndarray

    def __post_init__(self):
        pts = _validated_1d(self.points, "grid points")
        if pts.size < 3:
            raise ValueError("grid needs at least 3 points")
        if pts[0] != 0.0 or pts[-1] != 1.0:
            raise ValueError("grid must span [0, 1] exactly")
        if np.any(np.diff(pts) <= 0.0):
            raise ValueError("grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def m(self) -> int:
        return self.points.size


@dataclass(frozen=True, eq=False)
class FunctionSample:
    """One function observed at the grid points."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = _validated_1d(self.values, "function values")
        if vals.size != self.grid.m:
            raise ValueError(
                f"got {vals.size} values for a grid of {self.grid.m} points"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Orthonormalized cubic B-spline columns on a grid.

    ``phi`` has one column per basis function; ``raw_knots`` is the clamped
    knot vector the unorthogonalized splines were built from.  Columns are
    orthonormal in the grid's trapezoid inner product.
    """

    grid: Grid
    b: int
    phi: np.ndarray
    raw_knots: np.ndarray

    def __post_init__(self):
        self.phi.setflags(write=False)
        self.raw_knots.setflags(write=False)


def make_uniform_grid(m: int) -> Grid:
    """Uniform grid of m points on [0, 1]."""
    if m < 3:
        raise ValueError("grid needs at least 3 points")
    return Grid(np.linspace(0.0, 1.0, m))


def trapezoid_weights(grid: Grid) -> np.ndarray:
    """Quadrature weights w with sum(w * y) = trapezoid integral of y."""
    t = grid.points
    w = np.zeros(t.size)
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def derivative(f: FunctionSample) -> FunctionSample:
    """Trapezoid-consistent slopes: the nodal values whose trapezoid
    antiderivative reproduces f exactly at every grid point.

    These constraints fix the result up to one alternating-sign mode
    (adding a, -a, a, ... changes no trapezoid increment).  That last
    degree of freedom is chosen to minimize a trimmed sum of squared
    divided second differences: the alternating mode dominates curvature at
    any resolution, and dropping the roughest tenth of the interior nodes
    keeps isolated slope kinks and boundary effects from leaking into the
    global mode.  This makes differentiation the exact inverse of trapezoid
    integration, so integrating a sampled slope field and differentiating
    it back is the identity up to rounding, instead of spreading boundary
    and curvature artifacts into downstream transforms.  Grids need not be
    uniform."""
    t = f.grid.points
    h = np.diff(t)
    s = np.diff(f.values) / h
    sign = np.where(np.arange(t.size) % 2 == 0, 1.0, -1.0)
    # g[m+1] = 2 s[m] - g[m] seeded with g[0] = s[0]; in the variables
    # a[m] = sign[m] * g[m] the recursion is a plain cumulative sum
    a = np.concatenate([[0.0], np.cumsum(-2.0 * sign[:-1] * s)])
    g = sign * (s[0] + a)

    w = 0.5 * (h[1:] + h[:-1])

    def curvature(y: np.ndarray) -> np.ndarray:
        return (np.diff(y[1:]) / h[1:] - np.diff(y[:-1]) / h[:-1]) / w

    cg = curvature(g)
    cv = curvature(sign)
    alpha = -(w @ (cg * cv)) / (w @ (cv * cv))
    n_keep = max(2, int(np.ceil(0.9 * cg.size)))
    for _ in range(3):
        keep = np.argsort(np.abs(cg + alpha * cv))[:n_keep]
        alpha = -(w[keep] @ (cg[keep] * cv[keep])) / (w[keep] @ (cv[keep] * cv[keep]))
    return FunctionSample(f.grid, g + alpha * sign)


def interp_linear(f: FunctionSample, query):
    """Piecewise-linear interpolation of f at query points in [0, 1].

    Returns a scalar for scalar input, else an array of the query's shape.
    Exact at the grid points.
    """
    q = np.asarray(query, dtype=float)
    if q.size and (q.min() < 0.0 or q.max() > 1.0):
        raise ValueError("query points must lie in [0, 1]")
    return np.interp(query, f.grid.points, f.values)


def make_basis(grid: Grid, b: int) -> BasisSet:
    """Cubic B-spline basis with b functions, orthonormalized on the grid.

    Uses a clamped uniform knot vector, then modified Gram-Schmidt (with one
    re-orthogonalization pass) under the trapezoid inner product.
    """
    if b < 4:
        raise ValueError("cubic B-spline basis needs at least 4 functions")
    k = 3
    interior = np.linspace(0.0, 1.0, b - k + 1)[1:-1]
    raw_knots = np.concatenate([np.zeros(k + 1), interior, np.ones(k + 1)])
    raw = BSpline.design_matrix(grid.points, raw_knots, k).toarray()
    w = trapezoid_weights(grid)

    phi = np.empty_like(raw)
    for a in range(b):
        v = raw[:, a].copy()
        for _ in range(2):
            for c in range(a):
                v -= (w @ (phi[:, c] * v)) * phi[:, c]
        nrm = np.sqrt(w @ (v * v))
        if nrm < 1e-10:
            raise NumericalError(
                "spline columns are numerically dependent on this grid; "
                "use a finer grid or fewer basis functions"
            )
        phi[:, a] = v / nrm
    return BasisSet(grid, b, phi, raw_knots)


def synthesize(basis: BasisSet, coeffs) -> FunctionSample:
    """Linear combination phi @ c evaluated on the basis grid."""
    c = np.asarray(coeffs, dtype=float)
    if c.shape != (basis.b,):
        raise ValueError(f"expected {basis.b} coefficients, got shape {c.shape}")
    return FunctionSample(basis.grid, basis.phi @ c)

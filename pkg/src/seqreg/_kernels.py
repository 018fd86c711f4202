"""Array kernels for piecewise-linear warps on a fixed partition.

Warps are encoded by their increment vectors: positive numbers, one per
partition segment, summing to one.  Every kernel here accepts an arbitrary
leading batch shape (including none at all), so the same code path serves
single-warp operations, per-function sweeps in batch MCMC, and per-particle
sweeps in the sequential updater.  That shared path is what makes results
independent of how work is split across workers.

Compositions and inversions of piecewise-linear warps are piecewise linear
with more breakpoints than the partition allows; both are projected back
by taking the exact composed/inverted values at the partition knots, which
keeps the group identities (compose with an inverse, compose with the
identity) exact up to the increment floor.  The least-squares projection
(``project_pl``) is reserved for warps tabulated on a fine grid, i.e.
alignment outputs, where sampling at the knots would waste information.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

EPS_INCREMENT = 1e-6


def floor_simplex(d: np.ndarray, eps: float = EPS_INCREMENT) -> np.ndarray:
    """Normalize onto the simplex and clip-renormalize so every coordinate
    is at least eps while the sum stays exactly one.

    Mass below the floor is taken proportionally from the excess above the
    floor, which leaves already-conforming vectors unchanged.
    """
    d = np.asarray(d, dtype=float)
    n_inc = d.shape[-1]
    if n_inc * eps >= 1.0:
        raise ValueError("floor too large for this many increments")
    d = d / d.sum(axis=-1, keepdims=True)
    e = np.maximum(d, eps)
    s = e.sum(axis=-1, keepdims=True)
    return eps + (e - eps) * (1.0 - n_inc * eps) / (s - n_inc * eps)


def node_values(d: np.ndarray) -> np.ndarray:
    """Cumulative warp values at the partition knots: 0, partial sums, 1."""
    d = np.asarray(d, dtype=float)
    out = np.empty(d.shape[:-1] + (d.shape[-1] + 1,))
    out[..., 0] = 0.0
    np.cumsum(d, axis=-1, out=out[..., 1:])
    out[..., -1] = 1.0
    return out


def _gather(a: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """a[..., idx] with broadcasting between a's and idx's batch shapes."""
    if a.ndim == 1:
        return a[idx]
    if idx.ndim == 1:
        return a[..., idx]
    batch = np.broadcast_shapes(a.shape[:-1], idx.shape[:-1])
    a2 = np.broadcast_to(a, batch + a.shape[-1:])
    idx2 = np.broadcast_to(idx, batch + idx.shape[-1:])
    return np.take_along_axis(a2, idx2, axis=-1)


def _segments(knots: np.ndarray, x: np.ndarray) -> np.ndarray:
    # index of the segment containing x, right-continuous at interior knots
    return np.clip(np.searchsorted(knots, x, side="right") - 1, 0, knots.size - 2)


def pl_eval(knots: np.ndarray, nodevals: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate piecewise-linear functions with shared knots at x."""
    x = np.asarray(x, dtype=float)
    seg = _segments(knots, x)
    slopes = np.diff(nodevals, axis=-1) / np.diff(knots)
    return _gather(nodevals[..., :-1], seg) + (x - knots[seg]) * _gather(slopes, seg)


def pl_slopes(knots: np.ndarray, d: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Right-continuous slope at x of the warp with increments d."""
    seg = _segments(knots, np.asarray(x, dtype=float))
    return _gather(np.asarray(d, dtype=float) / np.diff(knots), seg)


def pl_eval_inverse(knots: np.ndarray, nodevals: np.ndarray, y) -> np.ndarray:
    """Evaluate the inverse of increasing piecewise-linear warps at y.

    Requires strictly increasing nodevals (guaranteed by the increment
    floor).  y may be shared across the batch or batched itself.
    """
    y = np.asarray(y, dtype=float)
    interior = nodevals[..., 1:-1]
    # number of interior node values strictly below y == segment index
    seg = (y[..., :, None] > interior[..., None, :]).sum(axis=-1)
    lo = _gather(nodevals, seg)
    hi = _gather(nodevals, seg + 1)
    return knots[seg] + (y - lo) * (knots[seg + 1] - knots[seg]) / (hi - lo)


def _hat_design(knots: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Design matrix of hat functions at the knots, evaluated at x."""
    n_seg = knots.size - 1
    seg = _segments(knots, x)
    u = (x - knots[seg]) / (knots[seg + 1] - knots[seg])
    h = np.zeros(x.shape + (knots.size,))
    np.put_along_axis(h, seg[..., None], (1.0 - u)[..., None], axis=-1)
    np.put_along_axis(h, (seg + 1)[..., None], u[..., None], axis=-1)
    return h


def project_pl(knots: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares fit of warp values (x, y) by a piecewise-linear warp on
    the partition; endpoints pinned at 0 and 1.  Returns floored increments.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h = _hat_design(knots, x)
    hi = h[..., 1:-1]
    target = y - h[..., -1]  # last node is pinned at one, first at zero
    if x.ndim == 1:
        g = hi.T @ hi
        r = np.einsum("qa,...q->...a", hi, target)
    else:
        g = np.einsum("...qa,...qb->...ab", hi, hi)
        r = np.einsum("...qa,...q->...a", hi, target)
    v = np.linalg.solve(g, r[..., None])[..., 0]
    vals = np.concatenate(
        [np.zeros(v.shape[:-1] + (1,)), v, np.ones(v.shape[:-1] + (1,))], axis=-1
    )
    return floor_simplex(np.diff(vals, axis=-1))


def increments_from_interior(interior: np.ndarray) -> np.ndarray:
    """Floored increments of a warp with given interior knot values."""
    shape = interior.shape[:-1] + (1,)
    vals = np.concatenate(
        [np.zeros(shape), interior, np.ones(shape)], axis=-1
    )
    return floor_simplex(np.diff(vals, axis=-1))


def compose_increments(
    knots: np.ndarray, d1: np.ndarray, d2: np.ndarray
) -> np.ndarray:
    """Increments of t -> w1(w2(t)) projected by its values at the knots.

    The composed warp is evaluated exactly at the partition knots (both
    factors are piecewise linear, so w2's values there are its own node
    values); the result is the warp through those values.
    """
    cv1 = node_values(d1)
    cv2 = node_values(d2)
    interior = pl_eval(knots, cv1, np.ascontiguousarray(cv2[..., 1:-1]))
    return increments_from_interior(interior)


def invert_increments(knots: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Increments of the exact inverse projected by its knot values."""
    cv = node_values(d)
    interior = pl_eval_inverse(knots, cv, knots[1:-1])
    return increments_from_interior(interior)


def warp_factors(knots: np.ndarray, nodevals: np.ndarray, t: np.ndarray):
    """Warp values and sqrt-slopes at shared points t.

    Returns ``(gamma(t), sqrt(gamma'(t)))`` with the right-hand slope taken
    at the knots.  These are the two ingredients of the unit-speed group
    action on square-root slope functions.
    """
    seg = _segments(knots, t)
    slopes = np.diff(nodevals, axis=-1) / np.diff(knots)
    sl = _gather(slopes, seg)
    gv = _gather(nodevals[..., :-1], seg) + (t - knots[seg]) * sl
    if t[0] == 0.0:
        gv[..., 0] = 0.0
    if t[-1] == 1.0:
        gv[..., -1] = 1.0
    return gv, np.sqrt(sl)


def interp_rows(t: np.ndarray, rows: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Linear interpolation of batched rows sampled at shared points t,
    evaluated at (possibly batched) query points x in [t[0], t[-1]]."""
    x = np.asarray(x, dtype=float)
    seg = np.clip(np.searchsorted(t, x, side="right") - 1, 0, t.size - 2)
    u = (x - t[seg]) / (t[seg + 1] - t[seg])
    lo = _gather(rows[..., :-1], seg)
    hi = _gather(rows[..., 1:], seg)
    return lo * (1.0 - u) + hi * u


def dirichlet_logpdf(d: np.ndarray, alpha_each: float) -> np.ndarray:
    """Log density of a symmetric Dirichlet with per-coordinate
    concentration alpha_each, evaluated along the last axis."""
    d = np.asarray(d, dtype=float)
    n_inc = d.shape[-1]
    norm = gammaln(n_inc * alpha_each) - n_inc * gammaln(alpha_each)
    return norm + (alpha_each - 1.0) * np.log(d).sum(axis=-1)


def karcher_increments(
    knots: np.ndarray, d: np.ndarray, tol: float = 1e-8, max_iter: int = 50
) -> np.ndarray:
    """Karcher mean of warps under the square-root-slope sphere geometry.

    ``d`` holds increment vectors along the last axis and the warps being
    averaged along the second-to-last; any further leading axes are batch.
    Square-root slopes of piecewise-linear warps are piecewise constant on
    the partition segments, and the iteration keeps them so; all sphere
    inner products therefore reduce to exact per-segment sums.  Iterates
    via log/exp maps until the mean tangent norm drops below tol.
    """
    d = np.asarray(d, dtype=float)
    widths = np.diff(knots)

    def inner(a, b):
        return ((a * b) @ widths)

    psi = np.sqrt(d / widths)
    mu = psi.mean(axis=-2)
    mu = mu / np.sqrt(inner(mu, mu))[..., None]
    for _ in range(max_iter):
        ip = np.clip(inner(psi, mu[..., None, :]), -1.0, 1.0)
        theta = np.arccos(ip)
        scale = np.ones_like(theta)
        big = theta > 1e-12
        scale[big] = theta[big] / np.sin(theta[big])
        tangent = scale[..., None] * (psi - ip[..., None] * mu[..., None, :])
        v = tangent.mean(axis=-2)
        nv = np.sqrt(inner(v, v))
        active = nv >= tol
        if not active.any():
            break
        nv_safe = np.where(nv > 0.0, nv, 1.0)
        stepped = np.cos(nv)[..., None] * mu + (np.sin(nv) / nv_safe)[..., None] * v
        stepped = stepped / np.sqrt(inner(stepped, stepped))[..., None]
        mu = np.where(active[..., None], stepped, mu)
    return floor_simplex(mu * mu * widths)

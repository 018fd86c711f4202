"""Time warps: increment encoding, group operations, elastic alignment.

A warp is an increasing bijection of [0, 1].  The model works with
piecewise-linear warps on a fixed partition, encoded by the vector of value
increments over the segments (positive, summing to one, floored at
``EPS_INCREMENT``).  Composition and inversion leave the piecewise-linear
class over a fixed partition; both project back by taking exact values at
the knots, which keeps the group identities tight.  Alignment against a
template produces a finely-sampled warp on the data grid; that one is
projected by least squares over its grid, since knot sampling would throw
away most of the alignment information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _dp, _kernels
from ._kernels import EPS_INCREMENT
from .errors import NumericalError
from .gridfn import Grid
from .srvf import Srvf

__all__ = [
    "Partition",
    "Warp",
    "FineWarp",
    "uniform_partition",
    "identity_warp",
    "eval_warp",
    "increments_of",
    "compose",
    "invert",
    "dp_align",
    "karcher_mean_warps",
    "EPS_INCREMENT",
]


@dataclass(frozen=True, eq=False)
class Partition:
    """Fixed knots 0 = s_1 < ... < s_K = 1 for piecewise-linear warps."""

    knots: np.ndarray

    def __post_init__(self):
        k = np.array(self.knots, dtype=float)
        if k.ndim != 1 or k.size < 3:
            raise ValueError("partition needs at least 3 knots")
        if k[0] != 0.0 or k[-1] != 1.0 or np.any(np.diff(k) <= 0.0):
            raise ValueError("knots must increase strictly from 0 to 1")
        k.setflags(write=False)
        object.__setattr__(self, "knots", k)

    @property
    def m(self) -> int:
        return self.knots.size

    @property
    def n_increments(self) -> int:
        return self.knots.size - 1


def uniform_partition(m: int) -> Partition:
    if m < 3:
        raise ValueError("partition needs at least 3 knots")
    return Partition(np.linspace(0.0, 1.0, m))


@dataclass(frozen=True, eq=False)
class Warp:
    """Piecewise-linear warp stored as floored simplex increments."""

    partition: Partition
    increments: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.increments, dtype=float)
        if d.shape != (self.partition.n_increments,):
            raise ValueError(
                f"expected {self.partition.n_increments} increments, "
                f"got shape {d.shape}"
            )
        if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
            raise ValueError("increments must be finite and positive")
        if abs(d.sum() - 1.0) > 1e-6:
            raise ValueError("increments must sum to one")
        d = _kernels.floor_simplex(d)
        d.setflags(write=False)
        object.__setattr__(self, "increments", d)

    @property
    def knot_values(self) -> np.ndarray:
        return _kernels.node_values(self.increments)


@dataclass(frozen=True, eq=False)
class FineWarp:
    """Warp tabulated directly on a data grid (alignment output).

    Values are nondecreasing from exactly 0 to exactly 1; flat stretches are
    allowed, so this is a boundary element of the warp group.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.m,):
            raise ValueError("values must match the grid size")
        if v[0] != 0.0 or v[-1] != 1.0 or np.any(np.diff(v) < 0.0):
            raise ValueError("warp values must be nondecreasing from 0 to 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def identity_warp(partition: Partition) -> Warp:
    return Warp(partition, np.diff(partition.knots))


def eval_warp(w: Warp, t):
    """Evaluate the warp at points of [0, 1] (scalar in, scalar out)."""
    tq = np.asarray(t, dtype=float)
    if tq.size and (tq.min() < 0.0 or tq.max() > 1.0):
        raise ValueError("warps are defined on [0, 1]")
    return np.interp(t, w.partition.knots, w.knot_values)


def increments_of(fine: FineWarp, partition: Partition) -> Warp:
    """Least-squares projection of a grid-sampled warp onto the partition."""
    d = _kernels.project_pl(partition.knots, fine.grid.points, fine.values)
    return Warp(partition, d)


def compose(w1: Warp, w2: Warp) -> Warp:
    """t -> w1(w2(t)), projected onto the common partition by its exact
    values at the knots."""
    if w1.partition is not w2.partition and not np.array_equal(
        w1.partition.knots, w2.partition.knots
    ):
        raise ValueError("warps must share a partition")
    d = _kernels.compose_increments(
        w1.partition.knots, w1.increments, w2.increments
    )
    return Warp(w1.partition, d)


def invert(w: Warp) -> Warp:
    """The functional inverse, projected onto the partition by its exact
    values at the knots."""
    d = _kernels.invert_increments(w.partition.knots, w.increments)
    return Warp(w.partition, d)


def dp_align(q_ref: Srvf, q_new: Srvf, s_max: int = 3) -> FineWarp:
    """Dynamic-programming warp of q_new onto q_ref.

    Searches monotone lattice paths with coprime steps bounded by s_max and
    returns the minimizing warp sampled on the data grid, so that
    ``warp_action(q_new, result)`` is the aligned version of q_new.  Ties
    resolve deterministically to the earliest step in the fixed order.
    """
    if q_ref.grid.m != q_new.grid.m or not np.array_equal(
        q_ref.grid.points, q_new.grid.points
    ):
        raise ValueError("alignment requires a common grid")
    t = q_ref.grid.points
    steps = _dp.coprime_steps(s_max)
    cost, parent = _dp.dp_tables(t, q_ref.values, q_new.values, steps)
    if not np.isfinite(cost[-1, -1]):
        raise NumericalError("alignment lattice corner is unreachable")
    ii, jj = _dp.backtrack(parent)
    vals = np.interp(t, t[ii], t[jj])
    return FineWarp(q_ref.grid, vals)


def karcher_mean_warps(
    ws: list[Warp], tol: float = 1e-8, max_iter: int = 50
) -> Warp:
    """Karcher mean of warps on a shared partition under the
    square-root-slope sphere metric."""
    if not ws:
        raise ValueError("need at least one warp")
    p = ws[0].partition
    for w in ws[1:]:
        if w.partition is not p and not np.array_equal(w.partition.knots, p.knots):
            raise ValueError("warps must share a partition")
    d = np.stack([w.increments for w in ws])
    mean = _kernels.karcher_increments(p.knots, d, tol=tol, max_iter=max_iter)
    return Warp(p, mean)

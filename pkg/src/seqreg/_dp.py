"""Dynamic-programming elastic alignment core (numba-compiled).

Alignment searches monotone lattice paths on the M x M grid of (t_i, t_j)
pairs.  Allowed moves are the coprime step pairs up to a slope bound, taken
in a fixed lexicographic order; ties in cost resolve to the earliest step in
that order via strict-less comparison, which makes the optimum deterministic.
The compiled kernel releases the GIL so alignments for many particles can
run on a thread pool without changing any numeric result.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_INF = np.inf


def coprime_steps(s_max: int) -> np.ndarray:
    """Step pairs (di, dj) with 1 <= di, dj <= s_max and gcd(di, dj) = 1,
    in lexicographic order."""
    if s_max < 1:
        raise ValueError("step bound must be at least 1")
    steps = [
        (a, b)
        for a in range(1, s_max + 1)
        for b in range(1, s_max + 1)
        if math.gcd(a, b) == 1
    ]
    return np.array(steps, dtype=np.int64)


@njit(cache=True, nogil=True)
def _interp_at(t, q, g, lo, hi):
    # linear interpolation of q at g, with t[lo] <= g <= t[hi]
    k = lo
    while k < hi - 1 and t[k + 1] < g:
        k += 1
    u = (g - t[k]) / (t[k + 1] - t[k])
    return q[k] + u * (q[k + 1] - q[k])


@njit(cache=True, nogil=True)
def _edge_cost(t, q_ref, q_new, i0, j0, i1, j1):
    # trapezoid rule for the squared residual along the edge, sampled at the
    # native grid points t[i0..i1]; the warp is linear on the edge
    slope = (t[j1] - t[j0]) / (t[i1] - t[i0])
    rs = math.sqrt(slope)
    prev = q_ref[i0] - q_new[j0] * rs
    total = 0.0
    for m in range(i0 + 1, i1 + 1):
        g = t[j0] + slope * (t[m] - t[i0])
        if g > t[j1]:
            g = t[j1]
        cur = q_ref[m] - _interp_at(t, q_new, g, j0, j1) * rs
        total += 0.5 * (prev * prev + cur * cur) * (t[m] - t[m - 1])
        prev = cur
    return total


@njit(cache=True, nogil=True)
def dp_tables(t, q_ref, q_new, steps):
    m = t.shape[0]
    cost = np.full((m, m), _INF)
    parent = np.full((m, m), -1, dtype=np.int64)
    cost[0, 0] = 0.0
    for i in range(m):
        for j in range(m):
            if i == 0 and j == 0:
                continue
            best = _INF
            arg = -1
            for s in range(steps.shape[0]):
                i0 = i - steps[s, 0]
                j0 = j - steps[s, 1]
                if i0 < 0 or j0 < 0:
                    continue
                c0 = cost[i0, j0]
                if c0 == _INF:
                    continue
                c = c0 + _edge_cost(t, q_ref, q_new, i0, j0, i, j)
                if c < best:
                    best = c
                    arg = i0 * m + j0
            cost[i, j] = best
            parent[i, j] = arg
    return cost, parent


def backtrack(parent: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Recover the optimal lattice path as index arrays, origin first."""
    m = parent.shape[0]
    ii = [m - 1]
    jj = [m - 1]
    while ii[-1] != 0 or jj[-1] != 0:
        p = parent[ii[-1], jj[-1]]
        if p < 0:
            raise RuntimeError("lattice corner is unreachable")
        ii.append(int(p) // m)
        jj.append(int(p) % m)
    return np.array(ii[::-1]), np.array(jj[::-1])

"""Synthetic data generators used by the examples and the test suite.

Scenario "example1": a spline template in square-root slope space, warped
per function by Dirichlet-increment warps and observed with white noise in
that space.  Scenario "example2": six two-peak curves and one single-peak
curve, noise-free, built analytically so the single-peak function admits
two genuinely different alignments against the two-peak majority.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .gridfn import FunctionSample, Grid, make_basis, make_uniform_grid, synthesize
from .srvf import Srvf, from_srvf, warp_action
from .warp import Partition, Warp, invert, uniform_partition

__all__ = ["SimSpec", "SimTruth", "simulate_example1", "simulate_example2"]

TEMPLATE_NORM = 3.0

# example2 geometry: symmetric equal bumps so both registrations of the
# single-peak curve carry comparable elastic cost
EX2_CENTERS = (0.3, 0.7)
EX2_SINGLE_CENTER = 0.5
EX2_WIDTH = 0.06
EX2_KAPPA = 40.0
EX2_N_TWO_PEAK = 6


@dataclass(frozen=True)
class SimSpec:
    """Scenario parameters for the template-plus-warps generator."""

    scenario: str = "example1"
    n: int = 100
    m_grid: int = 101
    b_true: int = 8
    m_gamma_true: int = 5
    kappa_true: float = 50.0
    noise_sigma2: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.m_grid < 3:
            raise ValueError("need n >= 1 functions and m_grid >= 3 points")
        if self.kappa_true <= 0.0 or self.noise_sigma2 < 0.0:
            raise ValueError("kappa_true must be positive, noise_sigma2 >= 0")


@dataclass(frozen=True, eq=False)
class SimTruth:
    """Ground truth shipped alongside simulated data."""

    scenario: str
    partition: Partition
    warps: np.ndarray  # (n, L) increments actually used
    sigma2: float
    c_true: np.ndarray | None = None


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def simulate_example1(spec: SimSpec) -> tuple[list[FunctionSample], SimTruth]:
    """Draw template coefficients, warps, and noisy observations.

    The template is a unit spline coefficient direction scaled to norm
    TEMPLATE_NORM; each observation is the template acted on by the inverse
    of that function's warp, plus N(0, noise_sigma2) noise in square-root
    slope space, integrated back to function values from zero.
    """
    if spec.scenario != "example1":
        raise ValueError(f"spec is for scenario {spec.scenario!r}")
    rng = _rng(spec.seed)
    grid = make_uniform_grid(spec.m_grid)
    basis = make_basis(grid, spec.b_true)
    partition = uniform_partition(spec.m_gamma_true)
    n_inc = partition.n_increments

    z = rng.standard_normal(spec.b_true)
    c_true = z / np.linalg.norm(z) * TEMPLATE_NORM
    q_mu = Srvf(grid, synthesize(basis, c_true).values)

    draws = rng.dirichlet(
        np.full(n_inc, spec.kappa_true / n_inc), size=spec.n
    )
    incr = _kernels.floor_simplex(draws)
    noise = rng.standard_normal((spec.n, spec.m_grid)) * np.sqrt(
        spec.noise_sigma2
    )

    data = []
    for i in range(spec.n):
        w_i = Warp(partition, incr[i])
        q_i = warp_action(q_mu, invert(w_i)).values + noise[i]
        data.append(from_srvf(0.0, Srvf(grid, q_i)))
    truth = SimTruth(
        scenario="example1",
        partition=partition,
        warps=incr,
        sigma2=spec.noise_sigma2,
        c_true=c_true,
    )
    return data, truth


def _gauss_bump(x: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((x - center) / width) ** 2)


def simulate_example2(
    seed: int, m_grid: int = 101, m_gamma: int = 5
) -> tuple[list[FunctionSample], SimTruth]:
    """Six two-peak curves and one single-peak curve, noise free.

    Each curve is its shape evaluated through the exact inverse of a
    Dirichlet-increment warp, so observed peaks shift around their nominal
    centers.  The single-peak curve sits exactly between the two bump
    centers of the others, which is what makes its registration ambiguous.
    """
    rng = _rng(seed)
    grid = make_uniform_grid(m_grid)
    partition = uniform_partition(m_gamma)
    n_inc = partition.n_increments
    n = EX2_N_TWO_PEAK + 1

    draws = rng.dirichlet(np.full(n_inc, EX2_KAPPA / n_inc), size=n)
    incr = _kernels.floor_simplex(draws)

    t = grid.points
    knots = partition.knots
    data = []
    for i in range(n):
        nodes = _kernels.node_values(incr[i])
        x = _kernels.pl_eval_inverse(knots, nodes, t)
        if i < EX2_N_TWO_PEAK:
            vals = _gauss_bump(x, EX2_CENTERS[0], EX2_WIDTH) + _gauss_bump(
                x, EX2_CENTERS[1], EX2_WIDTH
            )
        else:
            vals = _gauss_bump(x, EX2_SINGLE_CENTER, EX2_WIDTH)
        data.append(FunctionSample(grid, vals))
    truth = SimTruth(
        scenario="example2", partition=partition, warps=incr, sigma2=0.0
    )
    return data, truth

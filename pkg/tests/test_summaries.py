"""Posterior-summary tests: weighted quantiles and the summary bundle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqreg.gridfn import FunctionSample, make_basis, make_uniform_grid
from seqreg.model import ModelConfig
from seqreg.smc import ParticleSystem
from seqreg.srvf import Srvf, from_srvf
from seqreg.summaries import build_summary, weighted_quantile
from seqreg.warp import uniform_partition

PROBS = np.linspace(0.0, 1.0, 21)


# ---------------------------------------------------------- weighted_quantile


def test_weighted_quantile_matches_numpy_under_uniform_weights():
    rng = np.random.default_rng(7)
    for j in (2, 5, 37, 400):
        v = rng.standard_normal(j) * rng.uniform(0.1, 10)
        out = weighted_quantile(v, np.full(j, 1.0 / j), PROBS)
        assert np.allclose(out, np.quantile(v, PROBS), atol=1e-12)


def test_weighted_quantile_single_particle():
    out = weighted_quantile([3.25], [1.0], [0.0, 0.5, 1.0])
    assert np.array_equal(out, [3.25, 3.25, 3.25])


def test_weighted_quantile_all_mass_on_largest_value():
    out = weighted_quantile([1.0, 2.0, 5.0], [0.0, 0.0, 1.0], PROBS)
    assert np.all(out == 5.0)


def test_weighted_quantile_tracks_concentrated_mass():
    v = np.linspace(0.0, 1.0, 2001)
    w = np.exp(-0.5 * ((v - 0.7) / 0.01) ** 2)
    w /= w.sum()
    lo, med, hi = weighted_quantile(v, w, [0.025, 0.5, 0.975])
    assert abs(med - 0.7) < 0.005
    assert 0.65 < lo < 0.69 and 0.71 < hi < 0.75


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**31 - 1))
def test_weighted_quantile_is_monotone_and_bounded(j, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(j)
    w = rng.uniform(0.05, 1.0, size=j)
    w /= w.sum()
    out = weighted_quantile(v, w, PROBS)
    spread = v.max() - v.min()
    assert np.all(np.diff(out) >= -1e-15)
    assert abs(out[0] - v.min()) <= 1e-12 * spread
    assert abs(out[-1] - v.max()) <= 1e-12 * spread
    assert np.all(out >= v.min() - 1e-15) and np.all(out <= v.max() + 1e-15)


# -------------------------------------------------------------- build_summary


def make_summary_inputs(j=64, n=3, m=41, b=4, m_gamma=4, seed=13,
                        drift=0.0):
    rng = np.random.default_rng(seed)
    grid = make_uniform_grid(m)
    cfg = ModelConfig(
        basis=make_basis(grid, b), partition=uniform_partition(m_gamma)
    )
    coeffs = rng.normal(scale=0.5, size=(j, b))
    alpha = np.full(m_gamma - 1, 40.0)
    if drift:
        alpha = alpha * (1.0 + drift * np.arange(m_gamma - 1))
    incs = rng.dirichlet(alpha, size=(j, n))
    sigma2 = rng.uniform(0.01, 0.05, size=j)
    lw = rng.normal(scale=0.3, size=j)
    lw -= np.log(np.exp(lw).sum())
    sys = ParticleSystem(cfg, coeffs, incs, sigma2, lw, seed=1)
    data = [
        FunctionSample(grid, np.sin(2 * np.pi * grid.points) + 0.1 * i)
        for i in range(n)
    ]
    return sys, data


def test_build_summary_structure():
    sys, data = make_summary_inputs()
    s = build_summary(sys, data)
    m = sys.cfg.basis.grid.m
    n = sys.n_functions

    assert np.array_equal(s.grid_points, sys.cfg.basis.grid.points)
    assert np.all(s.template_lower <= s.template_mean + 1e-15)
    assert np.all(s.template_mean <= s.template_upper + 1e-15)
    assert s.sigma2_lower <= s.sigma2_upper
    assert s.sigma2_mean > 0.0

    assert s.phase_mean_increments.shape == (n, sys.cfg.n_increments)
    assert np.all(s.phase_mean_increments > 0.0)
    assert np.allclose(s.phase_mean_increments.sum(axis=1), 1.0, atol=1e-12)

    assert s.phase_mean_values.shape == (n, m)
    assert np.all(np.diff(s.phase_mean_values, axis=1) >= -1e-15)
    assert np.allclose(s.phase_mean_values[:, 0], 0.0)
    assert np.allclose(s.phase_mean_values[:, -1], 1.0)

    assert s.registered.shape == (n, m)
    # registered curve i samples datum i along its mean warp
    i = 1
    expect = np.interp(
        s.phase_mean_values[i], s.grid_points, data[i].values
    )
    assert np.allclose(s.registered[i], expect, atol=1e-12)

    # small systems keep every particle in the spaghetti sample
    assert s.spaghetti_index.size == sys.n_particles
    assert np.allclose(s.spaghetti_weight.sum(), 1.0, atol=1e-12)


def test_build_summary_interval_level_widens_with_level():
    sys, data = make_summary_inputs(j=500)
    narrow = build_summary(sys, data, level=0.5)
    wide = build_summary(sys, data, level=0.99)
    assert np.all(
        wide.template_upper - wide.template_lower
        >= narrow.template_upper - narrow.template_lower - 1e-15
    )
    assert wide.sigma2_upper - wide.sigma2_lower >= (
        narrow.sigma2_upper - narrow.sigma2_lower
    )


def test_build_summary_does_not_mutate_the_system():
    sys, data = make_summary_inputs(drift=1.0)
    before = (sys.coeffs.copy(), sys.warps.copy(), sys.log_weights.copy())
    build_summary(sys, data)
    assert np.array_equal(sys.coeffs, before[0])
    assert np.array_equal(sys.warps, before[1])
    assert np.array_equal(sys.log_weights, before[2])


def test_build_summary_centered_flag_changes_the_gauge():
    # warps share a strong common drift, so centering must move the
    # reported mean phase toward the identity
    sys, data = make_summary_inputs(drift=1.5, seed=3)
    cen = build_summary(sys, data)
    raw = build_summary(sys, data, centered=False)
    ident = np.full(sys.cfg.n_increments, 1.0 / sys.cfg.n_increments)
    gap_cen = np.abs(cen.phase_mean_increments - ident).mean()
    gap_raw = np.abs(raw.phase_mean_increments - ident).mean()
    assert gap_cen < 0.5 * gap_raw


def test_build_summary_single_particle_bands_collapse():
    sys, data = make_summary_inputs(j=1)
    s = build_summary(sys, data, centered=False)
    assert np.array_equal(s.template_lower, s.template_mean)
    assert np.array_equal(s.template_upper, s.template_mean)
    assert s.sigma2_lower == s.sigma2_mean == s.sigma2_upper

    # the one template curve is the integrated SRVF of the basis expansion
    q = Srvf(sys.cfg.basis.grid,
             sys.cfg.basis.phi @ sys.coeffs[0])
    assert np.allclose(
        s.template_mean, from_srvf(0.0, q).values, atol=1e-12
    )


def test_build_summary_spaghetti_capped():
    sys, data = make_summary_inputs(j=1000, n=1)
    s = build_summary(sys, data)
    assert s.spaghetti_index.size == 200
    assert s.spaghetti_curves.shape == (200, sys.cfg.basis.grid.m)
    assert np.array_equal(np.diff(s.spaghetti_index),
                          np.full(199, 5))


def test_build_summary_rejects_wrong_data_length():
    sys, data = make_summary_inputs(n=3)
    with pytest.raises(ValueError):
        build_summary(sys, data[:2])

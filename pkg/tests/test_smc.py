"""Sequential-updater operations: weights, resampling, kernels, centering."""

from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from seqreg import model, smc
from seqreg.gridfn import make_basis, make_uniform_grid
from seqreg.model import ModelConfig
from seqreg.srvf import Srvf, warp_action
from seqreg.warp import Warp, identity_warp, invert, karcher_mean_warps, uniform_partition


@pytest.fixture(scope="module")
def cfg():
    grid = make_uniform_grid(41)
    return ModelConfig(
        basis=make_basis(grid, 4),
        partition=uniform_partition(4),
        resample_fraction=0.0,  # structural tests control resampling explicitly
    )


def make_system(cfg, seed, j=4, n=2, spread=1.0):
    """Random particle system with simulated data rows matching it."""
    rng = np.random.default_rng(seed)
    coeffs = rng.normal(scale=spread, size=(j, cfg.basis.b))
    warps = rng.dirichlet(np.full(cfg.n_increments, 8.0), size=(j, n))
    sigma2 = rng.uniform(0.05, 0.2, size=j)
    lw = np.full(j, -np.log(j))
    sys = smc.ParticleSystem(cfg, coeffs, warps, sigma2, lw, seed=seed)
    template = Srvf(cfg.basis.grid, cfg.basis.phi @ coeffs[0])
    data = [
        Srvf(
            cfg.basis.grid,
            warp_action(template, invert(Warp(cfg.partition, warps[0, i]))).values
            + rng.normal(scale=0.1, size=cfg.grid_m),
        )
        for i in range(n)
    ]
    return sys, data


# ---------------------------------------------------------------------------
# effective sample size and resampling


def test_ess_uniform_weights():
    assert smc.ess(np.full(100, 0.01)) == pytest.approx(100.0, abs=1e-9)


def test_ess_degenerate_weights():
    w = np.zeros(10)
    w[3] = 1.0
    assert smc.ess(w) == pytest.approx(1.0, abs=1e-12)


def test_ess_two_live_particles():
    assert smc.ess(np.array([0.5, 0.5, 0.0, 0.0])) == pytest.approx(2.0, abs=1e-12)


def test_ess_rejects_unnormalized_weights():
    with pytest.raises(ValueError):
        smc.ess(np.array([0.5, 0.3]))
    with pytest.raises(ValueError):
        smc.ess(np.array([1.5, -0.5]))


def test_resample_degenerate_weights_copies_the_survivor(cfg):
    sys, _ = make_system(cfg, seed=1, j=6)
    lw = np.full(6, -np.inf)
    lw[2] = 0.0
    sys.log_weights = lw
    smc.resample_multinomial(sys)
    assert np.all(sys.coeffs == sys.coeffs[0])
    assert np.all(sys.warps == sys.warps[0])
    assert np.allclose(sys.weights, 1.0 / 6.0)


def test_resample_frequencies_track_weights(cfg):
    j = 5000
    rng = np.random.default_rng(7)
    sys, _ = make_system(cfg, seed=2, j=j)
    # mark each particle so copies are countable after resampling
    sys.coeffs = np.arange(j, dtype=float)[:, None] * np.ones(cfg.basis.b)
    w = rng.dirichlet(np.full(j, 0.1))
    sys.log_weights = np.log(w + 1e-300)
    smc.resample_multinomial(sys)
    counts = np.bincount(sys.coeffs[:, 0].astype(int), minlength=j)
    for idx in np.argsort(w)[-3:]:
        se = np.sqrt(w[idx] * (1.0 - w[idx]) / j)
        assert abs(counts[idx] / j - w[idx]) < 4.0 * se + 1e-12


# ---------------------------------------------------------------------------
# new-function augmentation


def test_new_phase_warp_for_own_template_is_identity(cfg):
    rng = np.random.default_rng(3)
    c = rng.normal(size=cfg.basis.b)
    p = model.Particle(c, (), 0.1)
    q_new = Srvf(cfg.basis.grid, cfg.basis.phi @ c)
    w = smc.init_new_phase(p, q_new, cfg)
    assert np.allclose(
        w.increments, identity_warp(cfg.partition).increments, atol=1e-9
    )


def test_augment_weight_update_matches_posterior_ratio(cfg):
    sys, data = make_system(cfg, seed=4, j=3, n=2)
    rng = np.random.default_rng(5)
    f_new = Srvf(cfg.basis.grid, data[0].values + rng.normal(scale=0.1, size=cfg.grid_m))
    before = [sys.particle(j) for j in range(3)]
    lw_before = sys.log_weights.copy()
    smc.augment_and_weight(sys, f_new)
    deltas = np.array(
        [
            model.log_posterior(sys.particle(j), data + [f_new], cfg)
            - model.log_posterior(before[j], data, cfg)
            for j in range(3)
        ]
    )
    expected = lw_before + deltas
    expected -= np.log(np.exp(expected - expected.max()).sum()) + expected.max()
    assert np.allclose(sys.log_weights, expected, atol=1e-10)
    assert sys.n_functions == 3


def test_augment_uses_each_particles_own_alignment(cfg):
    sys, data = make_system(cfg, seed=6, j=3, n=0)
    f_new = data if data else None
    rng = np.random.default_rng(6)
    f_new = Srvf(cfg.basis.grid, cfg.basis.phi @ sys.coeffs[1])
    smc.augment_and_weight(sys, f_new)
    for j in range(3):
        expected = smc.init_new_phase(
            model.Particle(sys.coeffs[j], (), float(sys.sigma2[j])), f_new, cfg
        )
        assert np.allclose(sys.warps[j, 0], expected.increments, atol=1e-12)


def test_augment_triggers_resample_on_weight_collapse(cfg):
    cfg_r = replace(cfg, resample_fraction=0.5)
    sys, data = make_system(cfg_r, seed=7, j=40, n=1)
    # one particle fits the new function far better than the rest
    rng = np.random.default_rng(8)
    sys.sigma2 = np.full(40, 0.01)
    sys.coeffs = np.tile(sys.coeffs[0], (40, 1))
    sys.coeffs[1:] += rng.normal(scale=3.0, size=(39, cfg.basis.b))
    f_new = Srvf(cfg_r.basis.grid, cfg_r.basis.phi @ sys.coeffs[0])
    smc.augment_and_weight(sys, f_new)
    assert sys._resampled
    assert np.allclose(sys.weights, 1.0 / 40.0)
    assert sys.n_functions == 2


def test_augment_rejects_foreign_grid(cfg):
    sys, _ = make_system(cfg, seed=9, j=2, n=1)
    with pytest.raises(ValueError):
        smc.augment_and_weight(sys, Srvf(make_uniform_grid(21), np.zeros(21)))


# ---------------------------------------------------------------------------
# rejuvenation kernels: degenerate counts and prior invariance


def test_zero_step_sweeps_change_nothing(cfg):
    sys, data = make_system(cfg, seed=10, j=3, n=2)
    c0, w0 = sys.coeffs.copy(), sys.warps.copy()
    smc.mh_sweep_coeffs(sys, data, k=0)
    smc.mh_sweep_warps(sys, data, k=0)
    assert np.array_equal(sys.coeffs, c0)
    assert np.array_equal(sys.warps, w0)
    assert sys._accept_coeffs == 0.0 and sys._accept_warps == 0.0


def test_coefficient_sweep_preserves_the_prior():
    grid = make_uniform_grid(41)
    cfg = ModelConfig(
        basis=make_basis(grid, 4),
        partition=uniform_partition(4),
        likelihood_on=False,
    )
    j = 4000
    rng = np.random.default_rng(11)
    coeffs = rng.normal(scale=np.sqrt(cfg.sigma_c), size=(j, 4))
    sys = smc.ParticleSystem(
        cfg,
        coeffs,
        np.zeros((j, 0, cfg.n_increments)),
        np.full(j, 0.1),
        np.full(j, -np.log(j)),
        seed=12,
        update_index=1,
    )
    smc.mh_sweep_coeffs(sys, [], k=5)
    assert sys._accept_coeffs > 0.05  # the chain genuinely moved
    pooled = sys.coeffs.ravel()
    se_mean = np.sqrt(cfg.sigma_c / pooled.size)
    assert abs(pooled.mean()) < 3.0 * se_mean
    # fourth-moment-based standard error for the sample variance of a Gaussian
    se_var = cfg.sigma_c * np.sqrt(2.0 / pooled.size)
    assert abs(pooled.var() - cfg.sigma_c) < 3.0 * se_var


def test_warp_sweep_preserves_the_prior():
    grid = make_uniform_grid(41)
    cfg = ModelConfig(
        basis=make_basis(grid, 4),
        partition=uniform_partition(5),
        kappa=5.0,
        likelihood_on=False,
        theta_prop=8.0,  # large moves make stationarity violations visible
    )
    j = 3000
    alpha = cfg.kappa / cfg.n_increments
    rng = np.random.default_rng(13)
    warps = rng.dirichlet(np.full(cfg.n_increments, alpha), size=(j, 1))
    sys = smc.ParticleSystem(
        cfg,
        rng.normal(size=(j, 4)),
        warps,
        np.full(j, 0.1),
        np.full(j, -np.log(j)),
        seed=14,
        update_index=1,
    )
    dummy = [Srvf(grid, np.zeros(grid.m))]
    smc.mh_sweep_warps(sys, dummy, k=10)
    assert 0.05 < sys._accept_warps < 0.95
    d = sys.warps[:, 0, :]
    p = 1.0 / cfg.n_increments
    var = p * (1.0 - p) / (cfg.kappa + 1.0)
    se_mean = np.sqrt(var / j)
    for coord in range(cfg.n_increments):
        assert abs(d[:, coord].mean() - p) < 3.5 * se_mean
    # full-distribution check on one coordinate (particles are independent)
    ks = stats.kstest(d[:, 0], stats.beta(alpha, cfg.kappa - alpha).cdf)
    assert ks.statistic < 1.628 / np.sqrt(j)  # 1% critical value


def test_warp_sweep_requires_matching_data(cfg):
    sys, data = make_system(cfg, seed=15, j=2, n=2)
    with pytest.raises(ValueError):
        smc.mh_sweep_warps(sys, data[:1])


# ---------------------------------------------------------------------------
# noise-variance refresh


def test_gibbs_draws_match_the_conditional_distribution(cfg):
    j = 4000
    sys, data = make_system(cfg, seed=16, j=1, n=2)
    shape, scale = model.sigma2_full_conditional_params(
        sys.particle(0), data, cfg
    )
    big = smc.ParticleSystem(
        cfg,
        np.tile(sys.coeffs[0], (j, 1)),
        np.tile(sys.warps[0], (j, 1, 1)),
        np.full(j, 0.1),
        np.full(j, -np.log(j)),
        seed=17,
        update_index=1,
    )
    lw0 = big.log_weights.copy()
    smc.gibbs_sigma(big, data)
    assert np.array_equal(big.log_weights, lw0)
    assert np.all(big.sigma2 > 0.0)
    ks = stats.kstest(big.sigma2, stats.invgamma(a=shape, scale=scale).cdf)
    assert ks.statistic < 1.628 / np.sqrt(j)


def test_gibbs_without_likelihood_samples_the_prior(cfg):
    j = 4000
    cfg_off = replace(cfg, likelihood_on=False)
    sys, data = make_system(cfg_off, seed=18, j=j, n=1)
    smc.gibbs_sigma(sys, data)
    ks = stats.kstest(
        sys.sigma2, stats.invgamma(a=cfg.alpha_sigma, scale=cfg.beta_sigma).cdf
    )
    assert ks.statistic < 1.628 / np.sqrt(j)


# ---------------------------------------------------------------------------
# centering as a read-out gauge fix


def test_center_moves_mean_warp_to_identity(cfg):
    rng = np.random.default_rng(19)
    sys, _ = make_system(cfg, seed=20, j=2, n=6)
    sys.warps = rng.dirichlet(np.full(cfg.n_increments, 10.0), size=(2, 6))
    smc.center(sys, update_weights=False)
    for j in range(2):
        km = karcher_mean_warps(
            [Warp(cfg.partition, d) for d in sys.warps[j]]
        )
        assert np.max(np.abs(km.increments - 1.0 / cfg.n_increments)) < 5e-3


def test_center_of_identity_warps_changes_nothing(cfg):
    sys, _ = make_system(cfg, seed=21, j=3, n=4)
    sys.warps = np.full_like(sys.warps, 1.0 / cfg.n_increments)
    c0 = sys.coeffs.copy()
    smc.center(sys, update_weights=False)
    assert np.allclose(sys.coeffs, c0, atol=1e-10)
    assert np.allclose(sys.warps, 1.0 / cfg.n_increments, atol=1e-9)


def test_center_weight_flag_controls_reweighting(cfg):
    sys, _ = make_system(cfg, seed=22, j=4, n=3)
    lw0 = sys.log_weights.copy()
    smc.center(sys, update_weights=False)
    assert np.array_equal(sys.log_weights, lw0)
    sys2, _ = make_system(cfg, seed=22, j=4, n=3)
    smc.center(sys2, update_weights=True)
    assert not np.array_equal(sys2.log_weights, lw0)
    assert np.exp(sys2.log_weights).sum() == pytest.approx(1.0, abs=1e-12)


def test_center_likelihood_change_vanishes_with_mean_warp_deviation():
    # simultaneous warping of template and warps is likelihood-preserving
    # in the continuum; on the grid the change decays linearly with the
    # mean warp's deviation from identity
    grid = make_uniform_grid(101)
    cfg = ModelConfig(basis=make_basis(grid, 8), partition=uniform_partition(5))
    rng = np.random.default_rng(23)
    c = rng.normal(size=8)
    q_obs = rng.normal(size=(1, 101))

    def loglik_change(eps):
        d = np.full(cfg.n_increments, 1.0 / cfg.n_increments)
        d[0] += eps
        d[-1] -= eps
        sys = smc.ParticleSystem(
            cfg, c[None].copy(), d[None, None, :], np.array([0.01]),
            np.array([0.0]), seed=1,
        )
        def ll():
            ssq = model.residual_ssq(
                cfg, q_obs, sys.coeffs[0] @ cfg.basis.phi.T, sys.warps[0]
            )
            return model.loglik_from_ssq(ssq, 0.01, cfg.grid_m).sum()
        before = ll()
        smc.center(sys, update_weights=False)
        return abs(ll() - before)

    assert loglik_change(1e-6) < 0.05
    ratio = loglik_change(1e-3) / loglik_change(1e-4)
    assert 5.0 < ratio < 20.0


def test_centered_copy_leaves_original_untouched(cfg):
    sys, _ = make_system(cfg, seed=24, j=3, n=4)
    c0, w0, lw0 = sys.coeffs.copy(), sys.warps.copy(), sys.log_weights.copy()
    out = smc.centered_copy(sys)
    assert np.array_equal(sys.coeffs, c0)
    assert np.array_equal(sys.warps, w0)
    assert np.array_equal(out.log_weights, lw0)
    assert not np.allclose(out.warps, w0)
    km = karcher_mean_warps([Warp(cfg.partition, d) for d in out.warps[0]])
    assert np.max(np.abs(km.increments - 1.0 / cfg.n_increments)) < 5e-2


# ---------------------------------------------------------------------------
# a full update and its reproducibility


def test_assimilate_bookkeeping(cfg):
    sys, data = make_system(cfg, seed=25, j=8, n=2)
    rng = np.random.default_rng(26)
    f_new = Srvf(cfg.basis.grid, data[0].values + rng.normal(scale=0.1, size=41))
    smc.assimilate(sys, f_new, data)
    assert sys.n_functions == 3
    assert np.exp(sys.log_weights).sum() == pytest.approx(1.0, abs=1e-9)
    rec = sys.history[-1]
    assert rec.n == 3
    assert 1.0 <= rec.ess_after <= 8.0
    assert 0.0 <= rec.accept_coeffs <= 1.0
    assert 0.0 <= rec.accept_warps <= 1.0


def test_assimilate_requires_full_history(cfg):
    sys, data = make_system(cfg, seed=27, j=2, n=2)
    with pytest.raises(ValueError):
        smc.assimilate(sys, data[0], [])


def test_update_results_do_not_depend_on_worker_count(cfg):
    results = []
    for workers in (1, 3):
        sys, data = make_system(cfg, seed=28, j=50, n=2)
        rng = np.random.default_rng(29)
        f_new = Srvf(
            cfg.basis.grid, data[1].values + rng.normal(scale=0.1, size=41)
        )
        smc.assimilate(sys, f_new, data, workers=workers)
        results.append(
            (sys.coeffs.copy(), sys.warps.copy(), sys.log_weights.copy(),
             sys.sigma2.copy())
        )
    for a, b in zip(results[0], results[1]):
        assert np.array_equal(a, b)


def test_stage_streams_are_stable_and_distinct():
    a = smc.stage_stream(5, 3, smc.STAGE_COEFF, 7).random(4)
    b = smc.stage_stream(5, 3, smc.STAGE_COEFF, 7).random(4)
    c = smc.stage_stream(5, 3, smc.STAGE_COEFF, 8).random(4)
    d = smc.stage_stream(5, 4, smc.STAGE_COEFF, 7).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_particle_round_trip(cfg):
    sys, _ = make_system(cfg, seed=30, j=3, n=2)
    p = sys.particle(1)
    assert np.array_equal(p.c, sys.coeffs[1])
    assert p.sigma2 == sys.sigma2[1]
    back = smc.ParticleSystem.from_particles(
        cfg, sys.particles, sys.weights, seed=0
    )
    assert np.allclose(back.coeffs, sys.coeffs)
    assert np.allclose(back.warps, sys.warps)

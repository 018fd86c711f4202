"""Sequential updater: particle augmentation, rejuvenation, centering.

When a new function arrives, every particle is extended with a warp for it
(by aligning the new function to that particle's template), importance
weights absorb the new likelihood and warp prior, and the system is
rejuvenated by Metropolis sweeps over coefficients and warps and a Gibbs
draw of the noise variance.

The template/warp decomposition is identifiable only up to a simultaneous
warp of both, so reported quantities are gauge-fixed by the centering
transform (mean warp = identity).  Centering is a read-out step — applied
to a copy when summarizing, via centered_copy — never part of the
transition kernels: on a finite grid the transform moves the warped
template slightly off the basis span, and repeating that inside a chain or
updater accumulates into a measurable bias of the sampled posterior.

Randomness is organized so that results cannot depend on scheduling: each
(update, stage, particle) triple owns a counter-based generator spawned
from the master seed, every stage pre-draws a fixed count of variates, and
the only cross-particle randomness (resampling) draws from the stage's
master stream on the coordinator.  Worker threads only ever split the
alignment loop, whose per-particle results are combined in particle order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from time import perf_counter

import numpy as np
from scipy.special import logsumexp

from . import _kernels, model
from .gridfn import FunctionSample, trapezoid_weights
from .model import ModelConfig, Particle
from .srvf import Srvf, to_srvf
from .warp import Warp, dp_align, increments_of

__all__ = [
    "ParticleSystem",
    "UpdateRecord",
    "ess",
    "resample_multinomial",
    "init_new_phase",
    "augment_and_weight",
    "mh_sweep_coeffs",
    "mh_sweep_warps",
    "center",
    "centered_copy",
    "gibbs_sigma",
    "assimilate",
    "stage_stream",
]

logger = logging.getLogger(__name__)

# stream labels, one per randomized stage of an update
STAGE_RESAMPLE = 0
STAGE_COEFF = 1
STAGE_WARP = 2
STAGE_SIGMA = 3
STAGE_BATCH_COEFF = 4  # used by the batch sampler's coefficient step

# rows processed together when sweeping warps (particles x functions)
_ROW_BLOCK = 8192


def stage_stream(
    seed: int, update_index: int, stage: int, particle: int | None = None
) -> np.random.Generator:
    """Counter-based generator owned by one (update, stage[, particle])."""
    key = (update_index, stage) if particle is None else (
        update_index,
        stage,
        particle,
    )
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=key))
    )


@dataclass
class UpdateRecord:
    """Diagnostics for one assimilation step."""

    update_index: int
    n: int
    ess_before: float
    resampled: bool
    accept_coeffs: float
    accept_warps: float
    ess_after: float
    wall_time: float = 0.0


@dataclass(eq=False)
class ParticleSystem:
    """Weighted particle approximation of the posterior after n functions.

    Particle states are stored as stacked arrays (coefficients (J, B), warp
    increments (J, n, L), variances (J,)) plus normalized log weights.
    """

    cfg: ModelConfig
    coeffs: np.ndarray
    warps: np.ndarray
    sigma2: np.ndarray
    log_weights: np.ndarray
    seed: int
    update_index: int = 0
    history: list[UpdateRecord] = field(default_factory=list)

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        j = self.coeffs.shape[0]
        self.warps = np.asarray(self.warps, dtype=float).reshape(
            j, -1, self.cfg.n_increments
        )
        self.sigma2 = np.asarray(self.sigma2, dtype=float).reshape(j)
        self.log_weights = np.asarray(self.log_weights, dtype=float).reshape(j)
        if j < 1:
            raise ValueError("need at least one particle")
        if np.any(self.sigma2 <= 0.0):
            raise ValueError("sigma2 must be positive")

    @classmethod
    def from_particles(
        cls, cfg: ModelConfig, particles: list[Particle], weights, seed: int
    ) -> "ParticleSystem":
        coeffs = np.stack([p.c for p in particles])
        n = len(particles[0].warps)
        if n:
            warps = np.stack(
                [[w.increments for w in p.warps] for p in particles]
            )
        else:
            warps = np.zeros((len(particles), 0, cfg.n_increments))
        sigma2 = np.array([p.sigma2 for p in particles])
        w = np.asarray(weights, dtype=float)
        return cls(cfg, coeffs, warps, sigma2, np.log(w), seed)

    @property
    def n_particles(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_functions(self) -> int:
        return self.warps.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def particle(self, j: int) -> Particle:
        ws = tuple(
            Warp(self.cfg.partition, self.warps[j, i])
            for i in range(self.n_functions)
        )
        return Particle(self.coeffs[j].copy(), ws, float(self.sigma2[j]))

    @property
    def particles(self) -> list[Particle]:
        return [self.particle(j) for j in range(self.n_particles)]


def ess(weights) -> float:
    """Effective sample size 1 / sum(w^2) of normalized weights."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty vector")
    if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-8:
        raise ValueError("weights must be nonnegative and sum to one")
    return float(1.0 / (w @ w))


def resample_multinomial(sys: ParticleSystem) -> ParticleSystem:
    """Multinomial resampling via inverse-CDF lookup of stage uniforms."""
    j = sys.n_particles
    rng = stage_stream(sys.seed, sys.update_index, STAGE_RESAMPLE)
    u = rng.random(j)
    cum = np.cumsum(sys.weights)
    cum[-1] = 1.0
    idx = np.minimum(np.searchsorted(cum, u, side="right"), j - 1)
    sys.coeffs = sys.coeffs[idx]
    sys.warps = sys.warps[idx]
    sys.sigma2 = sys.sigma2[idx]
    sys.log_weights = np.full(j, -np.log(j))
    return sys


def init_new_phase(particle: Particle, q_new: Srvf, cfg: ModelConfig) -> Warp:
    """Warp for a new function: align it to this particle's template and
    project the alignment onto the model partition."""
    q_mu = Srvf(cfg.basis.grid, cfg.basis.phi @ particle.c)
    return increments_of(dp_align(q_mu, q_new), cfg.partition)


def _as_srvf(f) -> Srvf:
    return f if isinstance(f, Srvf) else to_srvf(f)


def augment_and_weight(
    sys: ParticleSystem, f_new, workers: int = 1
) -> ParticleSystem:
    """Extend every particle with a warp for the new function and fold the
    incremental likelihood times warp prior into the weights; resample when
    the effective sample size drops below the configured fraction."""
    cfg = sys.cfg
    q_new = _as_srvf(f_new)
    if not np.array_equal(q_new.grid.points, cfg.basis.grid.points):
        raise ValueError("new function lives on a different grid")
    j = sys.n_particles
    grid = cfg.basis.grid
    knots = cfg.partition.knots
    templates = sys.coeffs @ cfg.basis.phi.T

    def align_one(jj: int) -> np.ndarray:
        return dp_align(Srvf(grid, templates[jj]), q_new).values

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            fine_vals = list(ex.map(align_one, range(j)))
    else:
        fine_vals = [align_one(jj) for jj in range(j)]
    d_new = _kernels.project_pl(knots, grid.points, np.stack(fine_vals))

    incr = model.log_prior_d_arr(d_new, cfg)
    if cfg.likelihood_on:
        ssq = model.residual_ssq(cfg, q_new.values, templates, d_new)
        incr = incr + model.loglik_from_ssq(ssq, sys.sigma2, cfg.grid_m)
    lw = sys.log_weights + incr
    lw = lw - logsumexp(lw)

    sys.warps = np.concatenate([sys.warps, d_new[:, None, :]], axis=1)
    sys.log_weights = lw
    ess_now = ess(np.exp(lw))
    sys._ess_weighted = ess_now
    sys._resampled = bool(ess_now < cfg.resample_fraction * j)
    if sys._resampled:
        resample_multinomial(sys)
    return sys


def mh_sweep_coeffs(sys: ParticleSystem, data: list, k: int | None = None):
    """Random-walk Metropolis on template coefficients, K steps per
    particle, proposal covariance from the weighted particle scatter."""
    cfg = sys.cfg
    k_steps = cfg.k_mh if k is None else k
    j, b = sys.coeffs.shape
    if k_steps == 0:
        sys._accept_coeffs = 0.0
        return sys
    q_obs = [_as_srvf(f).values for f in data]
    n = len(q_obs)
    use_lik = cfg.likelihood_on and n > 0

    scatter = (sys.coeffs.T * sys.weights) @ sys.coeffs / max(j - 1, 1)
    chol = np.linalg.cholesky(scatter + 1e-8 * np.eye(b))

    z = np.empty((j, k_steps, b))
    u = np.empty((j, k_steps))
    for jj in range(j):
        rs = stage_stream(sys.seed, sys.update_index, STAGE_COEFF, jj)
        z[jj] = rs.standard_normal((k_steps, b))
        u[jj] = rs.random(k_steps)

    phi_t = cfg.basis.phi.T

    def ssq_total(coeffs: np.ndarray) -> np.ndarray:
        q_mu = coeffs @ phi_t
        total = np.zeros(j)
        for i in range(n):
            total += model.residual_ssq(cfg, q_obs[i], q_mu, sys.warps[:, i])
        return total

    coeffs = sys.coeffs
    lp_cur = model.log_prior_c_arr(coeffs, cfg)
    ll_cur = -ssq_total(coeffs) / (2.0 * sys.sigma2) if use_lik else 0.0
    accepted = 0
    for kk in range(k_steps):
        prop = coeffs + z[:, kk] @ chol.T
        lp_prop = model.log_prior_c_arr(prop, cfg)
        ll_prop = -ssq_total(prop) / (2.0 * sys.sigma2) if use_lik else 0.0
        acc = np.log(u[:, kk]) < (ll_prop + lp_prop) - (ll_cur + lp_cur)
        coeffs = np.where(acc[:, None], prop, coeffs)
        lp_cur = np.where(acc, lp_prop, lp_cur)
        ll_cur = np.where(acc, ll_prop, ll_cur)
        accepted += int(acc.sum())
    sys.coeffs = coeffs
    sys._accept_coeffs = accepted / (j * k_steps)
    return sys


def mh_sweep_warps(sys: ParticleSystem, data: list, k: int | None = None):
    """Metropolis moves on each function's warp: perturb by composing with
    a Dirichlet-distributed warp, K steps per (particle, function) pair.

    The acceptance ratio carries, besides likelihood and prior, the
    forward/reverse densities of the composition proposal and its exact
    change of variables: composition rescales each interior knot value by
    the current (resp. proposed) warp's slope there, so the correction is
    a ratio of slope products.  With that Jacobian the move leaves any
    target over increments invariant; value-based stand-ins demonstrably
    bias the chain away from its stationary law.
    """
    cfg = sys.cfg
    k_steps = cfg.k_mh if k is None else k
    j = sys.n_particles
    n = sys.n_functions
    if k_steps == 0 or n == 0:
        sys._accept_warps = 0.0
        return sys
    knots = cfg.partition.knots
    t = cfg.basis.grid.points
    n_inc = cfg.n_increments
    alpha_prior = cfg.kappa / n_inc
    alpha_prop = cfg.theta / n_inc
    use_lik = cfg.likelihood_on

    q_obs = np.stack([_as_srvf(f).values for f in data])
    if q_obs.shape[0] != n:
        raise ValueError("data length does not match warps carried")
    q_mu = sys.coeffs @ cfg.basis.phi.T

    g_all = np.empty((j, n, k_steps, n_inc))
    u_all = np.empty((j, n, k_steps))
    for jj in range(j):
        rs = stage_stream(sys.seed, sys.update_index, STAGE_WARP, jj)
        g_all[jj] = rs.standard_gamma(alpha_prop, size=(n, k_steps, n_inc))
        u_all[jj] = rs.random((n, k_steps))

    block = max(1, _ROW_BLOCK // j)
    accepted = 0
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        nb = i1 - i0
        rows = j * nb
        cur_d = sys.warps[:, i0:i1].reshape(rows, n_inc)
        q_rows = np.broadcast_to(q_obs[i0:i1], (j, nb, q_obs.shape[1])).reshape(
            rows, -1
        )
        mu_rows = np.repeat(q_mu, nb, axis=0)
        s2_rows = np.repeat(sys.sigma2, nb)

        def row_ssq(d_inv: np.ndarray) -> np.ndarray:
            gv, rs_ = _kernels.warp_factors(
                knots, _kernels.node_values(d_inv), t
            )
            r = q_rows - _kernels.interp_rows(t, mu_rows, gv) * rs_
            return (r * r).sum(axis=-1)

        cur_inv = _kernels.invert_increments(knots, cur_d)
        ll_cur = -row_ssq(cur_inv) / (2.0 * s2_rows) if use_lik else 0.0
        lpd_cur = _kernels.dirichlet_logpdf(cur_d, alpha_prior)
        for kk in range(k_steps):
            d_p = _kernels.floor_simplex(
                g_all[:, i0:i1, kk].reshape(rows, n_inc)
            )
            d_star = _kernels.compose_increments(knots, cur_d, d_p)
            star_inv = _kernels.invert_increments(knots, d_star)
            # reverse perturbation: the exact inverse of the proposed warp
            # applied to the current knot values, so that replaying it on
            # the proposal lands back on the current warp exactly
            cur_nodes = _kernels.node_values(cur_d)
            star_nodes = _kernels.node_values(d_star)
            vrev = _kernels.pl_eval_inverse(
                knots, star_nodes, cur_nodes[:, 1:-1]
            )
            d_rev = _kernels.increments_from_interior(vrev)
            ll_star = -row_ssq(star_inv) / (2.0 * s2_rows) if use_lik else 0.0
            lpd_star = _kernels.dirichlet_logpdf(d_star, alpha_prior)
            # the proposal acts on interior knot values one at a time, so
            # its change of variables is the product of warp slopes there
            vp = _kernels.node_values(d_p)[:, 1:-1]
            jac_fwd = np.log(_kernels.pl_slopes(knots, cur_d, vp)).sum(axis=-1)
            jac_rev = np.log(_kernels.pl_slopes(knots, d_star, vrev)).sum(
                axis=-1
            )
            fwd = _kernels.dirichlet_logpdf(d_p, alpha_prop)
            rev = _kernels.dirichlet_logpdf(d_rev, alpha_prop)
            dlog = (ll_star + lpd_star + rev + jac_fwd) - (
                ll_cur + lpd_cur + fwd + jac_rev
            )
            acc = np.log(u_all[:, i0:i1, kk].reshape(rows)) < dlog
            mcol = acc[:, None]
            cur_d = np.where(mcol, d_star, cur_d)
            cur_inv = np.where(mcol, star_inv, cur_inv)
            lpd_cur = np.where(acc, lpd_star, lpd_cur)
            if use_lik:
                ll_cur = np.where(acc, ll_star, ll_cur)
            accepted += int(acc.sum())
        sys.warps[:, i0:i1] = cur_d.reshape(j, nb, n_inc)
    sys._accept_warps = accepted / (j * n * k_steps)
    return sys


def center(
    sys: ParticleSystem, update_weights: bool | None = None
) -> ParticleSystem:
    """Identifiability transform: shift each particle's mean warp into its
    template.

    With gbar the inverse Karcher mean of a particle's warps, the template
    is warped by gbar (coefficients refit by orthonormal projection) and
    every warp is composed with gbar, making the particle's warps average
    to the identity.  Simultaneous warping preserves residuals exactly in
    the continuum; on the grid the warped template must be re-projected
    onto the basis, which perturbs the likelihood in proportion to how far
    the mean warp sat from identity.  That is why this transform is used
    to gauge-fix read-outs (see centered_copy) rather than being applied
    inside the samplers.

    update_weights=True multiplies each weight by the prior ratio of the
    new state to the old one and renormalizes; None defers to
    cfg.center_weights.  When centering is used purely to evaluate
    gauge-fixed functionals of the particles, pass False: the weights
    belong to the posterior approximation and must not change.
    """
    cfg = sys.cfg
    j = sys.n_particles
    n = sys.n_functions
    if n == 0:
        return sys
    knots = cfg.partition.knots
    t = cfg.basis.grid.points
    n_inc = cfg.n_increments

    mu_d = np.empty((j, n_inc))
    chunk = max(1, 2_000_000 // max(n * n_inc, 1))
    for a in range(0, j, chunk):
        z = slice(a, min(a + chunk, j))
        mu_d[z] = _kernels.karcher_increments(knots, sys.warps[z])
    gbar = _kernels.invert_increments(knots, mu_d)

    gv, rs = _kernels.warp_factors(knots, _kernels.node_values(gbar), t)
    q_new = _kernels.interp_rows(t, sys.coeffs @ cfg.basis.phi.T, gv) * rs
    w_quad = trapezoid_weights(cfg.basis.grid)
    c_new = q_new @ (w_quad[:, None] * cfg.basis.phi)

    new_warps = np.empty_like(sys.warps)
    block = max(1, _ROW_BLOCK // j)
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        new_warps[:, i0:i1] = _kernels.compose_increments(
            knots, sys.warps[:, i0:i1], gbar[:, None, :]
        )

    do_weights = cfg.center_weights if update_weights is None else update_weights
    if do_weights:
        alpha_prior = cfg.kappa / n_inc
        dlp = model.log_prior_c_arr(c_new, cfg) - model.log_prior_c_arr(
            sys.coeffs, cfg
        )
        dlp += _kernels.dirichlet_logpdf(new_warps, alpha_prior).sum(axis=-1)
        dlp -= _kernels.dirichlet_logpdf(sys.warps, alpha_prior).sum(axis=-1)
        lw = sys.log_weights + dlp
        sys.log_weights = lw - logsumexp(lw)

    sys.coeffs = c_new
    sys.warps = new_warps
    return sys


def centered_copy(sys: ParticleSystem) -> ParticleSystem:
    """Gauge-fixed view of a particle system for reporting.

    Returns a new system whose particles are centered (per-particle mean
    warp = identity) with the weights of the original: a deterministic
    per-particle change of representative, not a reweighting.  The input
    is left untouched.
    """
    out = ParticleSystem(
        sys.cfg,
        sys.coeffs.copy(),
        sys.warps.copy(),
        sys.sigma2.copy(),
        sys.log_weights.copy(),
        seed=sys.seed,
        update_index=sys.update_index,
        history=list(sys.history),
    )
    if out.n_functions:
        center(out, update_weights=False)
    return out


def gibbs_sigma(sys: ParticleSystem, data: list) -> ParticleSystem:
    """Exact conditional draw of each particle's noise variance."""
    cfg = sys.cfg
    j = sys.n_particles
    n = len(data)
    if n != sys.n_functions:
        raise ValueError("data length does not match warps carried")
    use_lik = cfg.likelihood_on and n > 0
    if use_lik:
        q_mu = sys.coeffs @ cfg.basis.phi.T
        total = np.zeros(j)
        for i in range(n):
            total += model.residual_ssq(
                cfg, _as_srvf(data[i]).values, q_mu, sys.warps[:, i]
            )
        shape = cfg.alpha_sigma + 0.5 * n * cfg.grid_m
        scale = cfg.beta_sigma + 0.5 * total
    else:
        shape = cfg.alpha_sigma
        scale = np.full(j, cfg.beta_sigma)
    g = np.empty(j)
    for jj in range(j):
        g[jj] = stage_stream(
            sys.seed, sys.update_index, STAGE_SIGMA, jj
        ).standard_gamma(shape)
    sys.sigma2 = scale / g
    return sys


def assimilate(
    sys: ParticleSystem, f_new, data_so_far: list, workers: int = 1
) -> ParticleSystem:
    """One full sequential update with the new function.

    data_so_far holds the previously assimilated functions in arrival
    order; the new function is appended for the rejuvenation sweeps.
    """
    if len(data_so_far) != sys.n_functions:
        raise ValueError(
            "data_so_far must list exactly the functions already assimilated"
        )
    t_start = perf_counter()
    sys.update_index += 1
    augment_and_weight(sys, f_new, workers=workers)
    data = [_as_srvf(f) for f in [*data_so_far, f_new]]
    mh_sweep_coeffs(sys, data)
    mh_sweep_warps(sys, data)
    gibbs_sigma(sys, data)
    rec = UpdateRecord(
        update_index=sys.update_index,
        n=sys.n_functions,
        ess_before=sys._ess_weighted,
        resampled=sys._resampled,
        accept_coeffs=sys._accept_coeffs,
        accept_warps=sys._accept_warps,
        ess_after=ess(sys.weights),
        wall_time=perf_counter() - t_start,
    )
    sys.history.append(rec)
    logger.info(
        "update %d: n=%d ess=%.1f->%.1f%s acc_c=%.2f acc_d=%.2f (%.2fs)",
        sys.update_index,
        rec.n,
        rec.ess_before,
        rec.ess_after,
        " resampled" if rec.resampled else "",
        rec.accept_coeffs,
        rec.accept_warps,
        rec.wall_time,
    )
    return sys

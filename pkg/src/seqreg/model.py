"""Hierarchical model densities: the single source of truth.

Observed functions are modeled in square-root slope space as a warped
common template plus white noise:

    q_i = action(template(c), inverse(w_i)) + noise,  noise ~ N(0, sigma2 I)

with independent priors: Gaussian coefficients c, symmetric-Dirichlet warp
increments, inverse-gamma noise variance.  Every sampler stage evaluates
densities through this module (the array helpers below are the exact same
code path the scalar functions use), so acceptance ratios in the batch and
sequential samplers cannot drift apart.

The likelihood sum-of-squares is a plain coordinate sum over the grid, not
a quadrature rule; with a uniform grid the two differ only in the constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .gridfn import BasisSet
from .srvf import Srvf
from .warp import Partition, Warp

__all__ = [
    "ModelConfig",
    "Particle",
    "log_likelihood_one",
    "log_prior_c",
    "log_prior_d",
    "log_prior_sigma2",
    "log_posterior",
    "sigma2_full_conditional_params",
]


@dataclass(frozen=True, eq=False)
class ModelConfig:
    """Model and sampler hyperparameters.

    sigma_c and sigma2 are variances.  theta_prop is the concentration of
    the warp random-walk proposal; None means the default 100 per segment.
    likelihood_on is a test hook that drops the data term from every
    density, turning all kernels into prior samplers.
    """

    basis: BasisSet
    partition: Partition
    sigma_c: float = 20.0
    kappa: float = 5.0
    alpha_sigma: float = 4.0
    beta_sigma: float = 0.01
    theta_prop: float | None = None
    k_mh: int = 5
    resample_fraction: float = 0.5
    center_weights: bool = True
    likelihood_on: bool = True

    def __post_init__(self):
        for name in ("sigma_c", "kappa", "alpha_sigma", "beta_sigma"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.theta_prop is not None and self.theta_prop <= 0.0:
            raise ValueError("theta_prop must be positive")
        if self.k_mh < 0:
            raise ValueError("k_mh must be nonnegative")
        if not 0.0 <= self.resample_fraction <= 1.0:
            raise ValueError("resample_fraction must lie in [0, 1]")

    @property
    def n_increments(self) -> int:
        return self.partition.n_increments

    @property
    def theta(self) -> float:
        if self.theta_prop is not None:
            return self.theta_prop
        return 100.0 * self.n_increments

    @property
    def grid_m(self) -> int:
        return self.basis.grid.m


@dataclass(frozen=True, eq=False)
class Particle:
    """One joint state: template coefficients, one warp per function seen
    so far, and the noise variance."""

    c: np.ndarray
    warps: tuple[Warp, ...]
    sigma2: float

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 1:
            raise ValueError("coefficients must be one-dimensional")
        if self.sigma2 <= 0.0:
            raise ValueError("sigma2 must be positive")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "warps", tuple(self.warps))


# ---------------------------------------------------------------------------
# array helpers (arbitrary leading batch shapes)


def warped_template_rows(cfg: ModelConfig, q_mu: np.ndarray, d: np.ndarray):
    """Action of the inverse of the warps encoded by d on template rows.

    q_mu: (..., M) template srvf values; d: (..., L) increments.  Returns
    the model mean for the corresponding observation, shape (..., M).
    """
    knots = cfg.partition.knots
    t = cfg.basis.grid.points
    d_inv = _kernels.invert_increments(knots, d)
    gv, rs = _kernels.warp_factors(knots, _kernels.node_values(d_inv), t)
    return _kernels.interp_rows(t, q_mu, gv) * rs


def residual_ssq(cfg, q_obs: np.ndarray, q_mu: np.ndarray, d: np.ndarray):
    """Sum of squared residuals between observed srvf rows and the model
    mean, along the grid axis."""
    r = q_obs - warped_template_rows(cfg, q_mu, d)
    return (r * r).sum(axis=-1)


def loglik_from_ssq(ssq, sigma2, m: int):
    return -0.5 * m * np.log(2.0 * np.pi * sigma2) - ssq / (2.0 * sigma2)


def log_prior_c_arr(c: np.ndarray, cfg: ModelConfig):
    c = np.asarray(c, dtype=float)
    b = c.shape[-1]
    return -0.5 * b * np.log(2.0 * np.pi * cfg.sigma_c) - (c * c).sum(
        axis=-1
    ) / (2.0 * cfg.sigma_c)


def log_prior_d_arr(d: np.ndarray, cfg: ModelConfig):
    return _kernels.dirichlet_logpdf(d, cfg.kappa / cfg.n_increments)


# ---------------------------------------------------------------------------
# scalar densities


def log_likelihood_one(
    q_i: Srvf, c, w_i: Warp, sigma2: float, cfg: ModelConfig
) -> float:
    """Log density of one observed srvf given template coefficients, its
    warp, and the noise variance."""
    if sigma2 <= 0.0:
        raise ValueError("sigma2 must be positive")
    if not np.array_equal(q_i.grid.points, cfg.basis.grid.points):
        raise ValueError("observation grid differs from the basis grid")
    if not cfg.likelihood_on:
        return 0.0
    q_mu = cfg.basis.phi @ np.asarray(c, dtype=float)
    ssq = residual_ssq(cfg, q_i.values, q_mu, w_i.increments)
    return float(loglik_from_ssq(ssq, sigma2, cfg.grid_m))


def log_prior_c(c, cfg: ModelConfig) -> float:
    return float(log_prior_c_arr(c, cfg))


def log_prior_d(w: Warp, cfg: ModelConfig) -> float:
    return float(log_prior_d_arr(w.increments, cfg))


def log_prior_sigma2(sigma2: float, cfg: ModelConfig) -> float:
    if sigma2 <= 0.0:
        return -np.inf
    a, b = cfg.alpha_sigma, cfg.beta_sigma
    return float(
        a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(sigma2) - b / sigma2
    )


def log_posterior(p: Particle, data: list[Srvf], cfg: ModelConfig) -> float:
    """Joint log density of a particle given all data observed so far."""
    if len(p.warps) != len(data):
        raise ValueError("particle carries a warp per observed function")
    total = (
        log_prior_c(p.c, cfg)
        + log_prior_sigma2(p.sigma2, cfg)
        + sum(log_prior_d(w, cfg) for w in p.warps)
    )
    if data and cfg.likelihood_on:
        q_obs = np.stack([q.values for q in data])
        d = np.stack([w.increments for w in p.warps])
        q_mu = cfg.basis.phi @ p.c
        ssq = residual_ssq(cfg, q_obs, q_mu, d)
        total += loglik_from_ssq(ssq, p.sigma2, cfg.grid_m).sum()
    return float(total)


def sigma2_full_conditional_params(
    p: Particle, data: list[Srvf], cfg: ModelConfig
) -> tuple[float, float]:
    """Inverse-gamma (shape, scale) of sigma2 given everything else.

    With the likelihood hook off this is just the prior, so Gibbs draws
    sample the prior exactly.
    """
    if not data or not cfg.likelihood_on:
        return cfg.alpha_sigma, cfg.beta_sigma
    q_obs = np.stack([q.values for q in data])
    d = np.stack([w.increments for w in p.warps])
    q_mu = cfg.basis.phi @ p.c
    ssq = residual_ssq(cfg, q_obs, q_mu, d).sum()
    shape = cfg.alpha_sigma + 0.5 * len(data) * cfg.grid_m
    scale = cfg.beta_sigma + 0.5 * ssq
    return float(shape), float(scale)

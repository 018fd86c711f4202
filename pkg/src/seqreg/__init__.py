"""Sequential Bayesian registration of functional data.

A library and CLI for jointly estimating a common template and
per-function time warps from functional observations, either in one batch
MCMC fit or by assimilating functions one at a time into a particle
approximation of the posterior.
"""

from .errors import DataFormatError, NumericalError
from .gridfn import (
    BasisSet,
    FunctionSample,
    Grid,
    derivative,
    interp_linear,
    make_basis,
    make_uniform_grid,
    synthesize,
    trapezoid_weights,
)
from .mcmc import McmcSettings, mcmc_batch
from .model import (
    ModelConfig,
    Particle,
    log_likelihood_one,
    log_posterior,
    log_prior_c,
    log_prior_d,
    log_prior_sigma2,
    sigma2_full_conditional_params,
)
from .simdata import SimSpec, SimTruth, simulate_example1, simulate_example2
from .smc import (
    ParticleSystem,
    UpdateRecord,
    assimilate,
    augment_and_weight,
    center,
    centered_copy,
    ess,
    gibbs_sigma,
    init_new_phase,
    mh_sweep_coeffs,
    mh_sweep_warps,
    resample_multinomial,
)
from .srvf import Srvf, from_srvf, l2_distance, to_srvf, warp_action
from .summaries import SummaryBundle, build_summary, weighted_quantile
from .warp import (
    EPS_INCREMENT,
    FineWarp,
    Partition,
    Warp,
    compose,
    dp_align,
    eval_warp,
    identity_warp,
    increments_of,
    invert,
    karcher_mean_warps,
    uniform_partition,
)

__all__ = [
    "BasisSet",
    "DataFormatError",
    "EPS_INCREMENT",
    "FineWarp",
    "FunctionSample",
    "Grid",
    "McmcSettings",
    "ModelConfig",
    "NumericalError",
    "Particle",
    "ParticleSystem",
    "Partition",
    "SimSpec",
    "SimTruth",
    "Srvf",
    "SummaryBundle",
    "UpdateRecord",
    "Warp",
    "assimilate",
    "augment_and_weight",
    "build_summary",
    "center",
    "centered_copy",
    "compose",
    "derivative",
    "dp_align",
    "ess",
    "eval_warp",
    "from_srvf",
    "gibbs_sigma",
    "identity_warp",
    "increments_of",
    "init_new_phase",
    "interp_linear",
    "invert",
    "karcher_mean_warps",
    "l2_distance",
    "log_likelihood_one",
    "log_posterior",
    "log_prior_c",
    "log_prior_d",
    "log_prior_sigma2",
    "make_basis",
    "make_uniform_grid",
    "mcmc_batch",
    "mh_sweep_coeffs",
    "mh_sweep_warps",
    "resample_multinomial",
    "sigma2_full_conditional_params",
    "simulate_example1",
    "simulate_example2",
    "synthesize",
    "to_srvf",
    "trapezoid_weights",
    "uniform_partition",
    "warp_action",
    "weighted_quantile",
]

"""Command-line interface.

Subcommands: ``simulate`` writes synthetic data plus a truth sidecar,
``batch`` fits an initial block of functions by MCMC and saves a state
file, ``assimilate`` folds further functions into a saved state one at a
time, ``summarize`` writes posterior summary tables, and ``benchmark``
times one sequential update against a from-scratch batch refit as the
number of functions grows.

Exit codes: 0 success, 2 usage errors, 3 malformed input files, 4 numerical
failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys as _sys
from pathlib import Path
from time import perf_counter

import numpy as np

from . import stateio
from .errors import DataFormatError, NumericalError
from .gridfn import make_basis
from .mcmc import McmcSettings, mcmc_batch
from .model import ModelConfig, log_posterior
from .simdata import SimSpec, simulate_example1, simulate_example2
from .smc import assimilate
from .srvf import to_srvf
from .summaries import build_summary
from .warp import uniform_partition

logger = logging.getLogger(__name__)

_CONFIG_KEYS = {
    "b",
    "m_gamma",
    "sigma_c",
    "kappa",
    "alpha_sigma",
    "beta_sigma",
    "theta_prop",
    "k_mh",
    "resample_fraction",
    "center_weights",
    "likelihood_on",
}


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise DataFormatError(f"cannot read config {path}: {e}") from e
    if not isinstance(cfg, dict):
        raise DataFormatError(f"config {path} must hold a JSON object")
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise DataFormatError(
            f"config {path}: unknown keys {sorted(unknown)}"
        )
    return cfg


def _model_config(grid, overrides: dict) -> ModelConfig:
    opts = dict(overrides)
    b = int(opts.pop("b", 13))
    m_gamma = int(opts.pop("m_gamma", 5))
    return ModelConfig(
        basis=make_basis(grid, b),
        partition=uniform_partition(m_gamma),
        **opts,
    )


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.scenario == "example1":
        spec = SimSpec(
            scenario="example1",
            n=args.n,
            m_grid=args.m_grid,
            b_true=args.b_true,
            m_gamma_true=args.m_gamma_true,
            kappa_true=args.kappa_true,
            noise_sigma2=args.noise_sigma2,
            seed=args.seed,
        )
        data, truth = simulate_example1(spec)
    else:
        data, truth = simulate_example2(args.seed, m_grid=args.m_grid)
    stateio.write_data_csv(out / "data.csv", data)
    stateio.write_truth_json(out / "truth.json", truth)
    logger.info("wrote %d functions to %s", len(data), out / "data.csv")
    return 0


def cmd_batch(args) -> int:
    data = stateio.read_data_csv(args.data)
    if args.n_init < 1 or args.n_init > len(data):
        raise ValueError(
            f"--n-init must be in [1, {len(data)}], got {args.n_init}"
        )
    cfg = _model_config(data[0].grid, _load_config(args.config))
    settings = McmcSettings(
        iterations=args.iters,
        burn_in=args.burnin,
        thin=args.thin,
        c_step=args.c_step,
        adapt=not args.no_adapt,
        seed=args.seed,
    )
    t0 = perf_counter()
    system = mcmc_batch(data[: args.n_init], cfg, settings, args.particles)
    stateio.write_state(args.out, system)
    logger.info(
        "batch fit of %d functions in %.1fs -> %s",
        args.n_init,
        perf_counter() - t0,
        args.out,
    )
    return 0


def cmd_assimilate(args) -> int:
    system = stateio.read_state(args.state)
    data = stateio.read_data_csv(args.data)
    n0 = system.n_functions
    if n0 + args.count > len(data):
        raise ValueError(
            f"state already holds {n0} functions; cannot assimilate "
            f"{args.count} more from {len(data)} columns"
        )
    if not np.array_equal(
        data[0].grid.points, system.cfg.basis.grid.points
    ):
        raise DataFormatError("data grid does not match the saved state")
    before = len(system.history)
    for k in range(args.count):
        assimilate(
            system, data[n0 + k], data[: n0 + k], workers=args.workers
        )
    out = args.out if args.out is not None else args.state
    stateio.write_state(out, system)
    diag = (
        args.diagnostics
        if args.diagnostics is not None
        else str(out) + ".diag.csv"
    )
    stateio.append_diagnostics_csv(diag, system.history[before:])
    logger.info(
        "assimilated %d function(s), now n=%d -> %s",
        args.count,
        system.n_functions,
        out,
    )
    return 0


def cmd_summarize(args) -> int:
    system = stateio.read_state(args.state)
    data = stateio.read_data_csv(args.data)
    if len(data) < system.n_functions:
        raise ValueError(
            f"state holds {system.n_functions} functions but data has "
            f"only {len(data)} columns"
        )
    bundle = build_summary(system, data[: system.n_functions])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t = bundle.grid_points
    stateio.write_table_csv(
        out / "template_band.csv",
        ["t", "mean", "lower", "upper"],
        zip(t, bundle.template_mean, bundle.template_lower, bundle.template_upper),
    )
    stateio.write_table_csv(
        out / "sigma2.csv",
        ["mean", "lower", "upper"],
        [[bundle.sigma2_mean, bundle.sigma2_lower, bundle.sigma2_upper]],
    )
    n_inc = system.cfg.n_increments
    stateio.write_table_csv(
        out / "phase_means.csv",
        ["function"]
        + [f"d{k + 1}" for k in range(n_inc)]
        + [f"gamma_t{m + 1}" for m in range(t.size)],
        (
            [i + 1]
            + list(bundle.phase_mean_increments[i])
            + list(bundle.phase_mean_values[i])
            for i in range(system.n_functions)
        ),
    )
    stateio.write_table_csv(
        out / "registered.csv",
        ["t"] + [f"f{i + 1}" for i in range(system.n_functions)],
        (
            [t[m]] + [bundle.registered[i][m] for i in range(system.n_functions)]
            for m in range(t.size)
        ),
    )
    stateio.write_table_csv(
        out / "particles_sample.csv",
        ["particle", "weight"] + [f"q_t{m + 1}" for m in range(t.size)],
        (
            [int(bundle.spaghetti_index[k]), bundle.spaghetti_weight[k]]
            + list(bundle.spaghetti_curves[k])
            for k in range(bundle.spaghetti_index.size)
        ),
    )
    stateio.append_diagnostics_csv(out / "diagnostics.csv", system.history)
    logger.info("wrote summary tables to %s", out)
    return 0


def _error_metrics(system, truth) -> dict:
    """Distances of posterior mean and mode to the simulation truth."""
    w = system.weights
    out = {}
    n = system.n_functions
    d_true = truth.warps[:n]
    d_mean = np.einsum("j,jil->il", w, system.warps)
    out["d_err_mean"] = float(
        np.linalg.norm(d_mean - d_true, axis=-1).mean()
    )
    j_mode = int(np.argmax(w))
    out["d_err_mode"] = float(
        np.linalg.norm(system.warps[j_mode] - d_true, axis=-1).mean()
    )
    if truth.c_true is not None and truth.c_true.size == system.coeffs.shape[1]:
        c_mean = w @ system.coeffs
        out["c_err_mean"] = float(np.linalg.norm(c_mean - truth.c_true))
        out["c_err_mode"] = float(
            np.linalg.norm(system.coeffs[j_mode] - truth.c_true)
        )
    else:
        out["c_err_mean"] = float("nan")
        out["c_err_mode"] = float("nan")
    return out


def cmd_benchmark(args) -> int:
    data = stateio.read_data_csv(args.data)
    truth = (
        stateio.read_truth_json(args.truth) if args.truth is not None else None
    )
    if not (1 <= args.n_init < args.n_end <= len(data)):
        raise ValueError(
            f"need 1 <= --n-init < --n-end <= {len(data)} data columns"
        )
    cfg = _model_config(data[0].grid, _load_config(args.config))
    settings = McmcSettings(
        iterations=args.iters,
        burn_in=args.burnin,
        thin=1,
        adapt=True,
        seed=args.seed,
    )
    system = mcmc_batch(data[: args.n_init], cfg, settings, args.particles)
    rows = []
    for n in range(args.n_init + 1, args.n_end + 1):
        t0 = perf_counter()
        assimilate(system, data[n - 1], data[: n - 1], workers=args.workers)
        t_step = perf_counter() - t0
        if (n - args.n_init) % args.n_step != 0:
            continue
        t1 = perf_counter()
        refit = mcmc_batch(data[:n], cfg, settings, args.particles)
        t_refit = perf_counter() - t1
        row = {
            "n": n,
            "smc_step_seconds": t_step,
            "mcmc_seconds": t_refit,
        }
        if truth is not None:
            row.update(
                {f"smc_{k}": v for k, v in _error_metrics(system, truth).items()}
            )
            # for the batch sample the mode is the retained draw with the
            # highest joint density, not the highest weight (all equal)
            q_n = [to_srvf(f) for f in data[:n]]
            lp = [
                log_posterior(refit.particle(jj), q_n, cfg)
                for jj in range(refit.n_particles)
            ]
            j_mode = int(np.argmax(lp))
            mcmc_err = _error_metrics(refit, truth)
            mcmc_err["d_err_mode"] = float(
                np.linalg.norm(
                    refit.warps[j_mode] - truth.warps[:n], axis=-1
                ).mean()
            )
            if (
                truth.c_true is not None
                and truth.c_true.size == refit.coeffs.shape[1]
            ):
                mcmc_err["c_err_mode"] = float(
                    np.linalg.norm(refit.coeffs[j_mode] - truth.c_true)
                )
            row.update({f"mcmc_{k}": v for k, v in mcmc_err.items()})
        rows.append(row)
        logger.info(
            "n=%d: step %.2fs vs refit %.2fs", n, t_step, t_refit
        )
    header = list(rows[0].keys()) if rows else ["n"]
    stateio.write_table_csv(
        args.out, header, ([r[k] for k in header] for r in rows)
    )
    return 0


def _add_common(sp) -> None:
    sp.add_argument("--seed", type=int, default=0, help="master seed")
    sp.add_argument(
        "--config", default=None, help="JSON file of model hyperparameters"
    )
    sp.add_argument(
        "--workers", type=int, default=1, help="alignment worker threads"
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="seqreg",
        description="Sequential Bayesian registration of functional data",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="write synthetic data and truth")
    _add_common(sp)
    sp.add_argument(
        "--scenario", choices=["example1", "example2"], required=True
    )
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--m-grid", type=int, default=101)
    sp.add_argument("--b-true", type=int, default=8)
    sp.add_argument("--m-gamma-true", type=int, default=5)
    sp.add_argument("--kappa-true", type=float, default=50.0)
    sp.add_argument("--noise-sigma2", type=float, default=0.01)
    sp.add_argument("--out", default=".", help="output directory")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("batch", help="fit an initial block by MCMC")
    _add_common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--n-init", type=int, required=True)
    sp.add_argument("--particles", type=int, required=True)
    sp.add_argument("--iters", type=int, default=50_000)
    sp.add_argument("--burnin", type=int, default=40_000)
    sp.add_argument("--thin", type=int, default=1)
    sp.add_argument("--c-step", type=float, default=0.1)
    sp.add_argument("--no-adapt", action="store_true")
    sp.add_argument("--out", default="state.json")
    sp.set_defaults(func=cmd_batch)

    sp = sub.add_parser("assimilate", help="fold new functions into a state")
    _add_common(sp)
    sp.add_argument("--state", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--out", default=None, help="defaults to --state")
    sp.add_argument("--diagnostics", default=None)
    sp.set_defaults(func=cmd_assimilate)

    sp = sub.add_parser("summarize", help="write posterior summary tables")
    _add_common(sp)
    sp.add_argument("--state", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", default=".")
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser(
        "benchmark", help="time one update against a batch refit"
    )
    _add_common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--truth", default=None)
    sp.add_argument("--n-init", type=int, required=True)
    sp.add_argument("--n-end", type=int, required=True)
    sp.add_argument("--n-step", type=int, default=5)
    sp.add_argument("--particles", type=int, default=200)
    sp.add_argument("--iters", type=int, default=2_000)
    sp.add_argument("--burnin", type=int, default=1_500)
    sp.add_argument("--out", default="benchmark.csv")
    sp.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataFormatError as e:
        print(f"seqreg: {e}", file=_sys.stderr)
        return 3
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"seqreg: numerical failure: {e}", file=_sys.stderr)
        return 4
    except ValueError as e:
        print(f"seqreg: {e}", file=_sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

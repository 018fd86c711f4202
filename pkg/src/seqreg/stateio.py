"""On-disk formats: data CSVs, truth sidecars, state files, diagnostics.

The data interchange format is a plain CSV with header ``t,f1,...,fn`` and
one row per grid point.  Floats are written with 17 significant digits so
values survive a round trip exactly.  State files are JSON with a pinned
schema version and a fixed key order, and contain no wall-clock fields, so
re-serializing an identical system yields identical bytes.
"""

from __future__ import annotations

import csv
import json
import os
from typing import Iterable

import numpy as np

from .errors import DataFormatError
from .gridfn import FunctionSample, Grid, make_basis
from .model import ModelConfig
from .simdata import SimTruth
from .smc import ParticleSystem, UpdateRecord
from .warp import Partition

__all__ = [
    "SCHEMA_VERSION",
    "write_data_csv",
    "read_data_csv",
    "write_truth_json",
    "read_truth_json",
    "write_state",
    "read_state",
    "append_diagnostics_csv",
    "write_table_csv",
]

SCHEMA_VERSION = 1


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_table_csv(path, header: list[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [c if isinstance(c, (str, int)) else _fmt(c) for c in row]
            )


def write_data_csv(path, data: list[FunctionSample]) -> None:
    if not data:
        raise ValueError("nothing to write")
    grid = data[0].grid
    header = ["t"] + [f"f{i + 1}" for i in range(len(data))]
    cols = [f.values for f in data]
    rows = (
        [grid.points[m]] + [col[m] for col in cols] for m in range(grid.m)
    )
    write_table_csv(path, header, rows)


def read_data_csv(path) -> list[FunctionSample]:
    """Parse the standard functional-data CSV into per-function samples."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataFormatError(f"{path}: empty file") from None
            rows = list(reader)
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e
    header = [h.strip() for h in header]
    if not header or header[0] != "t" or len(header) < 2:
        raise DataFormatError(
            f"{path}: header must be 't,f1,...', got {header[:4]}"
        )
    width = len(header)
    parsed = []
    for k, row in enumerate(rows):
        if not row:
            continue
        if len(row) != width:
            raise DataFormatError(
                f"{path}: row {k + 2} has {len(row)} fields, expected {width}"
            )
        try:
            parsed.append([float(c) for c in row])
        except ValueError as e:
            raise DataFormatError(f"{path}: row {k + 2}: {e}") from e
    arr = np.array(parsed)
    if arr.ndim != 2 or arr.shape[0] < 3:
        raise DataFormatError(f"{path}: need at least 3 grid rows")
    try:
        grid = Grid(arr[:, 0])
        return [FunctionSample(grid, arr[:, i]) for i in range(1, width)]
    except ValueError as e:
        raise DataFormatError(f"{path}: {e}") from e


def write_truth_json(path, truth: SimTruth) -> None:
    payload = {
        "scenario": truth.scenario,
        "partition": truth.partition.knots.tolist(),
        "warps": truth.warps.tolist(),
        "sigma2": truth.sigma2,
        "c_true": None if truth.c_true is None else truth.c_true.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def read_truth_json(path) -> SimTruth:
    try:
        with open(path) as fh:
            payload = json.load(fh)
        c_true = payload["c_true"]
        return SimTruth(
            scenario=payload["scenario"],
            partition=Partition(np.array(payload["partition"])),
            warps=np.array(payload["warps"]),
            sigma2=float(payload["sigma2"]),
            c_true=None if c_true is None else np.array(c_true),
        )
    except (OSError, KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise DataFormatError(f"bad truth file {path}: {e}") from e


def _cfg_payload(cfg: ModelConfig) -> dict:
    return {
        "grid": cfg.basis.grid.points.tolist(),
        "b": cfg.basis.b,
        "partition": cfg.partition.knots.tolist(),
        "sigma_c": cfg.sigma_c,
        "kappa": cfg.kappa,
        "alpha_sigma": cfg.alpha_sigma,
        "beta_sigma": cfg.beta_sigma,
        "theta_prop": cfg.theta_prop,
        "k_mh": cfg.k_mh,
        "resample_fraction": cfg.resample_fraction,
        "center_weights": cfg.center_weights,
        "likelihood_on": cfg.likelihood_on,
    }


def _cfg_from_payload(p: dict) -> ModelConfig:
    grid = Grid(np.array(p["grid"]))
    return ModelConfig(
        basis=make_basis(grid, int(p["b"])),
        partition=Partition(np.array(p["partition"])),
        sigma_c=float(p["sigma_c"]),
        kappa=float(p["kappa"]),
        alpha_sigma=float(p["alpha_sigma"]),
        beta_sigma=float(p["beta_sigma"]),
        theta_prop=None if p["theta_prop"] is None else float(p["theta_prop"]),
        k_mh=int(p["k_mh"]),
        resample_fraction=float(p["resample_fraction"]),
        center_weights=bool(p["center_weights"]),
        likelihood_on=bool(p["likelihood_on"]),
    )


def write_state(path, sys: ParticleSystem) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "cfg": _cfg_payload(sys.cfg),
        "n": sys.n_functions,
        "j": sys.n_particles,
        "particles": {
            "coeffs": sys.coeffs.tolist(),
            "warps": sys.warps.tolist(),
            "sigma2": sys.sigma2.tolist(),
        },
        "weights": sys.weights.tolist(),
        "rng_state": {"seed": sys.seed, "update_index": sys.update_index},
        "history": [
            {
                "update_index": r.update_index,
                "n": r.n,
                "ess_before": r.ess_before,
                "resampled": r.resampled,
                "accept_coeffs": r.accept_coeffs,
                "accept_warps": r.accept_warps,
                "ess_after": r.ess_after,
            }
            for r in sys.history
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def read_state(path) -> ParticleSystem:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise DataFormatError(f"cannot read state {path}: {e}") from e
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DataFormatError(
            f"{path}: schema_version {version!r} unsupported "
            f"(expected {SCHEMA_VERSION})"
        )
    try:
        cfg = _cfg_from_payload(payload["cfg"])
        parts = payload["particles"]
        coeffs = np.array(parts["coeffs"], dtype=float)
        warps = np.array(parts["warps"], dtype=float)
        if warps.size == 0:
            warps = warps.reshape(coeffs.shape[0], 0, cfg.n_increments)
        sigma2 = np.array(parts["sigma2"], dtype=float)
        weights = np.array(payload["weights"], dtype=float)
        rng = payload["rng_state"]
        history = [
            UpdateRecord(
                update_index=int(h["update_index"]),
                n=int(h["n"]),
                ess_before=float(h["ess_before"]),
                resampled=bool(h["resampled"]),
                accept_coeffs=float(h["accept_coeffs"]),
                accept_warps=float(h["accept_warps"]),
                ess_after=float(h["ess_after"]),
            )
            for h in payload["history"]
        ]
        if coeffs.shape[0] != payload["j"] or warps.shape[1] != payload["n"]:
            raise ValueError("particle array shapes disagree with metadata")
        if abs(weights.sum() - 1.0) > 1e-6 or np.any(weights < 0.0):
            raise ValueError("weights are not normalized")
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"bad state file {path}: {e}") from e
    return ParticleSystem(
        cfg,
        coeffs,
        warps,
        sigma2,
        np.log(np.maximum(weights, 1e-300)),
        seed=int(rng["seed"]),
        update_index=int(rng["update_index"]),
        history=history,
    )


def append_diagnostics_csv(path, records: list[UpdateRecord]) -> None:
    """Append per-update rows, writing the header on first use."""
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(
                [
                    "update_index",
                    "n",
                    "ess_before",
                    "resampled",
                    "accept_coeffs",
                    "accept_warps",
                    "ess_after",
                    "wall_time",
                ]
            )
        for r in records:
            writer.writerow(
                [
                    r.update_index,
                    r.n,
                    _fmt(r.ess_before),
                    int(r.resampled),
                    _fmt(r.accept_coeffs),
                    _fmt(r.accept_warps),
                    _fmt(r.ess_after),
                    _fmt(r.wall_time),
                ]
            )

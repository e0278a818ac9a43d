"""spconf command line: surfaces, replication studies and closed-form bias.

Exit status is 0 on success, 1 when the configuration or inputs are
invalid and 2 when the computation itself fails.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from ._backend import BACKEND
from .bias import (
    bias_gsem_fixed,
    bias_spatialplus_fixed,
    c_surface,
    gls_report,
    ols_report,
)
from .config import SUBCOMMANDS, dump_resolved, load_mapping, parse_config
from .csvio import emit_csv
from .errors import ConfigError, DomainError, SpconfError
from .estimators import fit_icar_gibbs
from .experiments import (
    areal_design,
    areal_replicate,
    default_workers,
    run_areal_study,
    run_geostat_study,
    study_seed,
    summarize_errors,
)
from .numerics import PrecisionMetric
from .smoothers import (
    centering_smoother,
    gls_intercept_smoother,
    identity_smoother,
    matrix_smoother,
    thin_plate_smoother,
    zero_smoother,
)

RESOLVED_NAME = "resolved-config.yaml"
MANIFEST_NAME = "run-manifest.json"


# ---------------------------------------------------------------- bias inputs

_BIAS_KEYS = {"x", "z", "beta_x", "beta_z", "beta0", "metric", "covariance", "locations", "smoother_x", "smoother_y"}
_SMOOTHER_KEYS = {"type", "lam", "hat"}


def _vector(inputs, key, n=None):
    try:
        v = np.asarray(inputs[key], dtype=float)
    except KeyError:
        raise ConfigError(f"inputs: missing {key!r}") from None
    except (TypeError, ValueError):
        raise ConfigError(f"inputs: {key!r} must be a list of numbers") from None
    if v.ndim != 1 or (n is not None and v.shape[0] != n) or not np.all(np.isfinite(v)):
        raise ConfigError(f"inputs: {key!r} must be a finite vector" + (f" of length {n}" if n else ""))
    return v


def _scalar(inputs, key, default=None):
    v = inputs.get(key, default)
    if v is None:
        raise ConfigError(f"inputs: missing {key!r}")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"inputs: {key!r} must be a number")
    return float(v)


def _metric(inputs, n):
    if "metric" in inputs and "covariance" in inputs:
        raise ConfigError("inputs: give either 'metric' or 'covariance', not both")
    try:
        if "metric" in inputs:
            return PrecisionMetric(np.asarray(inputs["metric"], dtype=float))
        if "covariance" in inputs:
            return PrecisionMetric.from_covariance(np.asarray(inputs["covariance"], dtype=float))
    except (SpconfError, ValueError, TypeError) as exc:
        raise ConfigError(f"inputs: invalid metric: {exc}") from exc
    return PrecisionMetric.identity(n)


def _smoother(spec, n, which, inputs, metric, response):
    if spec is None:
        raise ConfigError(f"inputs: {which} is required for this model")
    if not isinstance(spec, dict):
        raise ConfigError(f"inputs: {which} must be a mapping with a 'type'")
    unknown = set(spec) - _SMOOTHER_KEYS
    if unknown:
        raise ConfigError(f"inputs: unknown key(s) in {which}: {', '.join(sorted(unknown))}")
    kind = spec.get("type")
    if kind == "zero":
        return zero_smoother(n)
    if kind == "identity":
        return identity_smoother(n)
    if kind == "centering":
        return centering_smoother(n)
    if kind == "gls_intercept":
        return gls_intercept_smoother(metric)
    if kind == "matrix":
        hat = np.asarray(spec.get("hat"), dtype=float)
        if hat.shape != (n, n):
            raise ConfigError(f"inputs: {which}.hat must be {n}x{n}")
        return matrix_smoother(hat)
    if kind == "thin_plate":
        if "locations" not in inputs:
            raise ConfigError("inputs: thin_plate smoothers need 'locations'")
        locs = np.asarray(inputs["locations"], dtype=float)
        lam = spec.get("lam", "gcv")
        if lam == "gcv":
            if response is None:
                raise ConfigError(f"inputs: {which} cannot use GCV (its response is random); give lam")
            return thin_plate_smoother(locs, response=response)
        if isinstance(lam, bool) or not isinstance(lam, (int, float)):
            raise ConfigError(f"inputs: {which}.lam must be a number or 'gcv'")
        return thin_plate_smoother(locs, lam=float(lam))
    raise ConfigError(f"inputs: {which}.type must be one of zero, identity, centering, gls_intercept, matrix, thin_plate")


def bias_from_inputs(model, inputs):
    """Evaluate the closed-form bias of ``model`` for an inputs mapping."""
    if not isinstance(inputs, dict):
        raise ConfigError("inputs: expected a mapping")
    unknown = set(inputs) - _BIAS_KEYS
    if unknown:
        raise ConfigError(f"inputs: unknown key(s): {', '.join(sorted(unknown))}")
    x = _vector(inputs, "x")
    n = x.shape[0]
    z = _vector(inputs, "z", n)
    beta_z = _scalar(inputs, "beta_z")
    metric = _metric(inputs, n)
    try:
        if model == "ols":
            return ols_report(x, z, beta_z)
        if model == "gls":
            return gls_report(x, z, beta_z, metric)
        beta_x = _scalar(inputs, "beta_x")
        sx = _smoother(inputs.get("smoother_x"), n, "smoother_x", inputs, metric, x)
        if model == "splus":
            return bias_spatialplus_fixed(x, z, beta_x, beta_z, sx, metric)
        if model == "gsem":
            sy = _smoother(inputs.get("smoother_y"), n, "smoother_y", inputs, metric, None)
            return bias_gsem_fixed(x, z, beta_x, beta_z, sx, sy, _scalar(inputs, "beta0", 0.0))
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown bias model {model!r}")


def bias_record(report):
    c = report.components
    return {
        "model": report.model,
        "bias": report.bias,
        "a2": c.get("a2"),
        "b2": c.get("b2"),
        "intercept_term": c.get("intercept"),
        "n": report.n,
        "fingerprint": report.fingerprint,
    }


# ---------------------------------------------------------------- runners


def _surface_records(cfg, workers):
    records = []
    for spec in cfg.surface_specs():
        for cell in c_surface(spec, workers=workers):
            records.append({
                "nu": spec.nu, "theta_c": cell.theta_c, "theta_u": cell.theta_u, "p_c": spec.p_c, "p_z": spec.p_z,
                "c_s_mean": cell.c_s_mean, "c_s_mcse": cell.c_s_mcse, "c_ns_mean": cell.c_ns_mean,
                "c_ns_mcse": cell.c_ns_mcse, "n_fail": cell.n_fail,
            })
    return records


def _icar_trace(cfg):
    """Trace of the ICAR chain for the first scenario's first replicate."""
    study = cfg.areal_config()
    q, _, zs = areal_design(study)
    x, y = areal_replicate(study, 0, 0, zs[study.scenarios()[0][0]])
    mi = study.models.index("ICAR")
    _, chain = fit_icar_gibbs(y, x, q, study.gibbs, np.random.default_rng(study_seed(study.seed, 2, 0, 0, mi)))
    d = chain.draws
    return [
        {"iteration": chain.burn_in + i, "beta_x": d["beta_x"][i], "sigma2": d["sigma2"][i],
         "tau2": d["tau2"][i], "intercept": d["intercept"][i]}
        for i in range(chain.retained)
    ]


def execute(cfg, workers=None):
    """Run a resolved configuration and write its outputs; returns the output paths."""
    workers = default_workers() if workers is None else workers
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    (out / RESOLVED_NAME).write_text(dump_resolved(cfg), encoding="utf-8")
    written = [RESOLVED_NAME]
    extra = {}
    if cfg.subcommand == "surface":
        emit_csv(_surface_records(cfg, workers), "surface", out / "surface.csv")
        written.append("surface.csv")
    elif cfg.subcommand in ("geostat-study", "areal-study"):
        if cfg.subcommand == "geostat-study":
            table = run_geostat_study(cfg.geostat_config(), workers)
        else:
            table = run_areal_study(cfg.areal_config(), workers)
        emit_csv(table.rows, "error-table", out / "errors.csv")
        emit_csv(summarize_errors(table), "summary", out / "summary.csv")
        written += ["errors.csv", "summary.csv"]
        extra["locations_fingerprint"] = table.locations_fingerprint
        extra["flagged_rows"] = sum(r.flagged for r in table.rows)
        if cfg.subcommand == "areal-study" and cfg.params["trace"] and "ICAR" in cfg.params["models"]:
            emit_csv(_icar_trace(cfg), "mcmc-trace", out / "trace.csv")
            written.append("trace.csv")
    else:
        inputs = load_mapping(cfg.params["inputs"])
        report = bias_from_inputs(cfg.params["model"], inputs)
        emit_csv([bias_record(report)], "bias-report", out / "bias-report.csv")
        written.append("bias-report.csv")
    manifest = {
        "subcommand": cfg.subcommand,
        "seed": cfg.seed,
        "preset": cfg.preset,
        "package_version": __version__,
        "kernel_backend": BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pyyaml": yaml.__version__,
        "outputs": written + [MANIFEST_NAME],
        **extra,
        "timing": f"started {started}; wall time {time.perf_counter() - t0:.3f} s; workers {workers}",
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return [out / name for name in written + [MANIFEST_NAME]]


def build_parser():
    parser = argparse.ArgumentParser(prog="spconf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = subs.add_parser(name)
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--preset", choices=("desk", "paper"), help="scale preset")
        p.add_argument("--workers", type=int, help="worker processes (default: $SPCONF_WORKERS or 1)")
        if name == "bias":
            p.add_argument("--model", choices=("ols", "gls", "splus", "gsem"))
            p.add_argument("--inputs", help="JSON or YAML file with x, z, coefficients and smoothers")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "out": args.out, "preset": args.preset}
    if args.subcommand == "bias":
        overrides.update(model=args.model, inputs=args.inputs)
    try:
        mapping = load_mapping(args.config) if args.config else {}
        if mapping.get("subcommand", args.subcommand) != args.subcommand:
            raise ConfigError(f"config is for {mapping['subcommand']!r}, not {args.subcommand!r}")
        mapping["subcommand"] = args.subcommand
        cfg = parse_config(mapping, **overrides)
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        paths = execute(cfg, args.workers)
    except ConfigError as exc:
        print(f"spconf: invalid configuration: {exc}", file=sys.stderr)
        return 1
    except (SpconfError, OSError, np.linalg.LinAlgError) as exc:
        print(f"spconf: {args.subcommand} failed: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())

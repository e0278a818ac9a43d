"""CSV schemas and writers for every output table."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, is_dataclass

SCHEMAS = {
    "surface": ("nu", "theta_c", "theta_u", "p_c", "p_z", "c_s_mean", "c_s_mcse", "c_ns_mean", "c_ns_mcse", "n_fail"),
    "error-table": (
        "study", "scenario", "theta_c", "theta_u", "rho", "z_mode", "beta_z", "model", "replicate",
        "beta_x_hat", "error", "abs_error", "flagged", "message", "seed_key",
    ),
    "summary": (
        "study", "scenario", "model", "n_ok", "n_flagged", "median", "q1", "q3",
        "whisker_low", "whisker_high", "mean_error", "mcse", "empty",
    ),
    "bias-report": ("model", "bias", "a2", "b2", "intercept_term", "n", "fingerprint"),
    "mcmc-trace": ("iteration", "beta_x", "sigma2", "tau2", "intercept"),
}


def format_value(v):
    """Text for one cell; floats use 17 significant digits so they round-trip exactly."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if hasattr(v, "dtype"):
        return format_value(v.item())
    return str(v)


def _as_mapping(rec):
    if isinstance(rec, dict):
        return rec
    if is_dataclass(rec):
        return asdict(rec)
    raise TypeError(f"cannot serialize record of type {type(rec).__name__}")


def emit_csv(records, schema, path):
    """Write ``records`` (dicts or dataclasses) under a documented schema.

    Columns are exactly ``SCHEMAS[schema]`` in that order; extra record
    fields are dropped and missing ones are an error. An empty record set
    produces a header-only file.
    """
    if schema not in SCHEMAS:
        raise ValueError(f"unknown schema {schema!r}; expected one of {sorted(SCHEMAS)}")
    cols = SCHEMAS[schema]
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for rec in records:
                m = _as_mapping(rec)
                missing = [c for c in cols if c not in m]
                if missing:
                    raise KeyError(f"record lacks columns {missing} for schema {schema!r}")
                w.writerow([format_value(m[c]) for c in cols])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path):
    """Rows as dicts of strings (header from the file)."""
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def parse_float(text):
    return float("nan") if text == "" else float(text)

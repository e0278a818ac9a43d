"""Strict YAML run configuration.

A config is a flat mapping: ``subcommand``, ``seed``, ``preset`` and ``out``
plus the parameters of that subcommand. Unknown keys are rejected, every
default is materialized, and the resolved mapping is written back out so a
run can be repeated from it exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .bias import SurfaceSpec
from .errors import ConfigError, SpconfError
from .estimators import GibbsConfig
from .experiments import AREAL_MODELS, GEOSTAT_MODELS, ArealStudyConfig, GeostatStudyConfig

SUBCOMMANDS = ("surface", "geostat-study", "areal-study", "bias")
PRESETS = ("desk", "paper")
BIAS_MODELS = ("ols", "gls", "splus", "gsem")
COMMON_KEYS = ("subcommand", "seed", "preset", "out")

_TENTHS = [round(0.1 * k, 10) for k in range(1, 11)]


@dataclass(frozen=True)
class Field:
    kind: str
    default: object
    paper: object = None  # paper-preset default when it differs
    check: object = None
    note: str = ""

    def default_for(self, preset):
        return self.paper if (preset == "paper" and self.paper is not None) else self.default


def _pos(v):
    return v > 0


def _unit_open(v):
    return all(0 < p < 1 for p in v)


def _nonneg(v):
    return v >= 0


def _pos_list(v):
    return len(v) > 0 and all(t > 0 for t in v)


def _rho_list(v):
    return len(v) > 0 and all(-1 <= r <= 1 for r in v)


def _sub(options):
    def check(v):
        return len(v) > 0 and all(m in options for m in v)
    return check


SCHEMA = {
    "surface": {
        "nu": Field("float", 2.0, check=_pos, note="> 0"),
        "theta_c": Field("floats", _TENTHS, check=_pos_list, note="non-empty, > 0"),
        "theta_u": Field("floats", _TENTHS, check=_pos_list, note="non-empty, > 0"),
        "p_c": Field("floats", [0.1, 0.5, 0.9], check=lambda v: len(v) > 0 and _unit_open(v), note="each in (0,1)"),
        "p_z": Field("floats", [0.1, 0.5, 0.9], check=lambda v: len(v) > 0 and _unit_open(v), note="each in (0,1)"),
        "side": Field("int", 10, check=lambda v: v >= 2, note=">= 2"),
        "replicates": Field("int", 200, check=lambda v: v >= 2, note=">= 2"),
        "nugget": Field("float", 1e-8, check=_nonneg, note=">= 0"),
    },
    "geostat-study": {
        "n": Field("int", 100, paper=400, check=lambda v: v >= 10, note=">= 10"),
        "window": Field("float", 10.0, check=_pos, note="> 0"),
        "theta_c": Field("floats", [1.0, 5.0, 10.0], check=_pos_list, note="non-empty, > 0"),
        "theta_u": Field("floats", [1.0, 5.0, 10.0], check=_pos_list, note="non-empty, > 0"),
        "rho": Field("floats", [-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9], check=_rho_list, note="each in [-1,1]"),
        "cells": Field("cells", None, note="list of [theta_c, theta_u, rho] or null"),
        "replicates": Field("int", 30, paper=100, check=lambda v: v >= 1, note=">= 1"),
        "sigma2_field": Field("float", 0.1, check=_pos, note="> 0"),
        "beta0": Field("float", 0.3),
        "beta_x": Field("float", 3.0),
        "beta_z": Field("float", 1.0),
        "sigma2": Field("float", 0.1, check=_nonneg, note=">= 0"),
        "models": Field("strs", list(GEOSTAT_MODELS), check=_sub(GEOSTAT_MODELS), note=f"subset of {GEOSTAT_MODELS}"),
    },
    "areal-study": {
        "side": Field("int", 11, check=lambda v: v >= 2, note=">= 2"),
        "z_modes": Field("strs", ["random", "eigenvector"], check=_sub(("random", "eigenvector")),
                         note="subset of (random, eigenvector)"),
        "beta_z": Field("floats", [-1.0, 0.0], check=lambda v: len(v) > 0, note="non-empty"),
        "z_sd": Field("float", 0.09, check=_pos, note="> 0"),
        "x_slope": Field("float", 0.5),
        "x_sd": Field("float", 0.01, check=_nonneg, note=">= 0"),
        "noise_sd": Field("float", 0.15, check=_nonneg, note=">= 0"),
        "beta_x": Field("float", 3.0),
        "replicates": Field("int", 30, paper=100, check=lambda v: v >= 1, note=">= 1"),
        "iterations": Field("int", 8000, paper=80000, check=lambda v: v >= 1, note=">= 1"),
        "burn_in": Field("int", 2000, paper=20000, check=_nonneg, note=">= 0 and < iterations"),
        "prior_shape": Field("float", 0.01, check=_pos, note="> 0"),
        "prior_rate": Field("float", 0.01, check=_pos, note="> 0"),
        "models": Field("strs", list(AREAL_MODELS), check=_sub(AREAL_MODELS), note=f"subset of {AREAL_MODELS}"),
        "trace": Field("bool", False),
    },
    "bias": {
        "model": Field("str", None, check=lambda v: v in BIAS_MODELS, note=f"one of {BIAS_MODELS}"),
        "inputs": Field("str", None, check=lambda v: len(v) > 0, note="path to a JSON/YAML inputs file"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    seed: int
    preset: str
    out: str
    params: dict = field(default_factory=dict)

    def to_mapping(self):
        return {"subcommand": self.subcommand, "seed": self.seed, "preset": self.preset,
                "out": self.out, **self.params}

    # -- typed views

    def surface_specs(self):
        p = self.params
        return [
            SurfaceSpec(nu=p["nu"], theta_c=tuple(p["theta_c"]), theta_u=tuple(p["theta_u"]), p_c=pc, p_z=pz,
                        side=p["side"], replicates=p["replicates"], seed=self.seed, nugget=p["nugget"])
            for pc in p["p_c"] for pz in p["p_z"]
        ]

    def geostat_config(self):
        p = dict(self.params)
        cells = p.pop("cells")
        return GeostatStudyConfig(
            n=p["n"], window=p["window"], theta_c=tuple(p["theta_c"]), theta_u=tuple(p["theta_u"]),
            rho=tuple(p["rho"]), cells=None if cells is None else tuple(tuple(c) for c in cells),
            replicates=p["replicates"], sigma2_field=p["sigma2_field"], beta0=p["beta0"],
            beta_x=p["beta_x"], beta_z=p["beta_z"], sigma2=p["sigma2"], models=tuple(p["models"]),
            seed=self.seed,
        )

    def areal_config(self):
        p = self.params
        gibbs = GibbsConfig(p["iterations"], p["burn_in"], p["prior_shape"], p["prior_rate"])
        return ArealStudyConfig(
            side=p["side"], z_modes=tuple(p["z_modes"]), beta_z=tuple(p["beta_z"]), z_sd=p["z_sd"],
            x_slope=p["x_slope"], x_sd=p["x_sd"], noise_sd=p["noise_sd"], beta_x=p["beta_x"],
            replicates=p["replicates"], gibbs=gibbs, models=tuple(p["models"]), seed=self.seed,
        )


def _coerce(key, kind, value):
    def bad(expected):
        return ConfigError(f"{key}: expected {expected}, got {value!r}")

    def num(v):
        if isinstance(v, str):
            # PyYAML reads exponent literals such as 1e-8 as strings
            try:
                v = float(v)
            except ValueError:
                raise bad("a number") from None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise bad("a number")
        v = float(v)
        if not math.isfinite(v):
            raise bad("a finite number")
        return v

    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("an integer")
        return int(value)
    if kind == "float":
        return num(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise bad("true or false")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise bad("a string")
        return value
    if kind == "floats":
        if not isinstance(value, list):
            raise bad("a list of numbers")
        return [num(v) for v in value]
    if kind == "strs":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise bad("a list of strings")
        return list(value)
    if kind == "cells":
        if value is None:
            return None
        if not isinstance(value, list) or not value:
            raise bad("a non-empty list of [theta_c, theta_u, rho]")
        out = []
        for c in value:
            if not isinstance(c, list) or len(c) != 3:
                raise bad("a list of [theta_c, theta_u, rho] triples")
            tc, tu, r = (num(v) for v in c)
            if not (tc > 0 and tu > 0 and -1 <= r <= 1):
                raise ConfigError(f"{key}: cell {c} violates theta > 0 and rho in [-1,1]")
            out.append([tc, tu, r])
        return out
    raise AssertionError(kind)


def resolve(mapping, overrides=None) -> RunConfig:
    """Validate a raw mapping (plus CLI overrides) into a :class:`RunConfig`."""
    if not isinstance(mapping, dict):
        raise ConfigError("configuration must be a mapping")
    raw = dict(mapping)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    sub = raw.get("subcommand")
    if sub not in SUBCOMMANDS:
        raise ConfigError(f"subcommand: must be one of {SUBCOMMANDS}, got {sub!r}")
    schema = SCHEMA[sub]
    unknown = sorted(set(raw) - set(schema) - set(COMMON_KEYS))
    if unknown:
        raise ConfigError(f"unknown configuration key(s) for {sub}: {', '.join(unknown)}")
    seed = raw.get("seed")
    if seed is None:
        raise ConfigError("seed: a seed is required (no clock-based seeding)")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
    preset = raw.get("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"preset: must be one of {PRESETS}, got {preset!r}")
    out = raw.get("out")
    if out is None:
        raise ConfigError("out: an output directory is required")
    if not isinstance(out, str):
        raise ConfigError(f"out: expected a path string, got {out!r}")

    params = {}
    for key, spec in schema.items():
        if key in raw:
            value = _coerce(key, spec.kind, raw[key])
        else:
            value = spec.default_for(preset)
            if value is None and spec.kind != "cells":
                raise ConfigError(f"{key}: required for {sub}")
            value = list(value) if isinstance(value, list) else value
        if value is not None and spec.check is not None and not spec.check(value):
            raise ConfigError(f"{key}: {value!r} violates constraint ({spec.note})")
        params[key] = value
    if sub == "areal-study" and not params["burn_in"] < params["iterations"]:
        raise ConfigError("burn_in: must be smaller than iterations")
    cfg = RunConfig(sub, seed, preset, out, params)
    try:
        if sub == "surface":
            cfg.surface_specs()
        elif sub == "geostat-study":
            cfg.geostat_config()
        elif sub == "areal-study":
            cfg.areal_config()
    except SpconfError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_mapping(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return {} if data is None else data


def parse_config(source=None, **overrides) -> RunConfig:
    """Build a :class:`RunConfig` from a YAML file path or a mapping plus overrides."""
    mapping = {} if source is None else (source if isinstance(source, dict) else load_mapping(source))
    return resolve(mapping, overrides)


def dump_resolved(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_mapping(), sort_keys=False, default_flow_style=None)

"""Replication studies: geostatistical (continuous space) and areal (lattice).

Every random quantity is drawn from a ``numpy.random.SeedSequence`` whose
spawn key names it:

* ``(0,)`` frozen study-level quantities (locations, the random ``z``)
* ``(1, scenario, replicate)`` the simulated data set
* ``(2, scenario, replicate, model)`` the stream a stochastic fit consumes

so any row can be recomputed in isolation and output does not depend on
how scenarios are scheduled across workers.
"""
from __future__ import annotations

import itertools
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bias import fingerprint
from .datagen import (
    ConfoundedFieldSpec,
    GeneratingCoefficients,
    areal_confounder,
    areal_covariate,
    generate_response,
    sample_confounded_fields,
)
from .errors import DomainError, SpconfError
from .estimators import (
    GibbsConfig,
    fit_bayes_ols_gibbs,
    fit_gls_reml,
    fit_gsem,
    fit_icar_gibbs,
    fit_ols,
    fit_spatial_plus,
    fit_spatial_spline,
)
from .numerics import CorrelationKernel, graph_laplacian, grid_centroids, rook_adjacency

GEOSTAT_MODELS = ("OLS", "S-REML", "PS", "S+", "gSEM")
AREAL_MODELS = ("BayesOLS", "ICAR", "PS", "S+", "gSEM")
WORKERS_ENV = "SPCONF_WORKERS"


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise DomainError(f"{WORKERS_ENV} must be a positive integer") from None


@dataclass(frozen=True)
class GeostatStudyConfig:
    n: int = 400
    window: float = 10.0
    theta_c: tuple = (1.0, 5.0, 10.0)
    theta_u: tuple = (1.0, 5.0, 10.0)
    rho: tuple = (-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9)
    cells: tuple | None = None  # explicit (theta_c, theta_u, rho) triples; overrides the grids
    replicates: int = 100
    sigma2_field: float = 0.1
    beta0: float = 0.3
    beta_x: float = 3.0
    beta_z: float = 1.0
    sigma2: float = 0.1
    models: tuple = GEOSTAT_MODELS
    seed: int = 0

    def __post_init__(self):
        if self.n < 10:
            raise DomainError("geostat study needs n >= 10")
        if not self.window > 0:
            raise DomainError("window must be > 0")
        if self.replicates < 1:
            raise DomainError("replicates must be >= 1")
        if self.cells is None and not (self.theta_c and self.theta_u and self.rho):
            raise DomainError("parameter grids must be non-empty")
        if self.cells is not None and not self.cells:
            raise DomainError("cells must be non-empty when given")
        for m in self.models:
            if m not in GEOSTAT_MODELS:
                raise DomainError(f"unknown geostat model {m!r}")
        for tc, tu, r in self.scenarios():
            if not (tc > 0 and tu > 0 and -1 <= r <= 1):
                raise DomainError(f"invalid cell ({tc}, {tu}, {r})")
        if not self.sigma2_field > 0 or self.sigma2 < 0:
            raise DomainError("variances must be positive")

    def scenarios(self):
        if self.cells is not None:
            return [tuple(float(v) for v in c) for c in self.cells]
        return [(float(a), float(b), float(c)) for a, b, c in itertools.product(self.theta_c, self.theta_u, self.rho)]

    @classmethod
    def desk(cls, **kw):
        return cls(**{"n": 100, "replicates": 30, **kw})

    @classmethod
    def paper(cls, **kw):
        return cls(**kw)


@dataclass(frozen=True)
class ArealStudyConfig:
    side: int = 11
    z_modes: tuple = ("random", "eigenvector")
    beta_z: tuple = (-1.0, 0.0)
    z_sd: float = 0.09
    x_slope: float = 0.5
    x_sd: float = 0.01
    noise_sd: float = 0.15
    beta_x: float = 3.0
    replicates: int = 100
    gibbs: GibbsConfig = field(default_factory=GibbsConfig.paper)
    models: tuple = AREAL_MODELS
    seed: int = 0

    def __post_init__(self):
        if self.side < 2:
            raise DomainError("grid side must be >= 2")
        if self.replicates < 1:
            raise DomainError("replicates must be >= 1")
        for m in self.z_modes:
            if m not in ("random", "eigenvector"):
                raise DomainError(f"unknown z mode {m!r}")
        for m in self.models:
            if m not in AREAL_MODELS:
                raise DomainError(f"unknown areal model {m!r}")
        if not (self.z_sd > 0 and self.x_sd >= 0 and self.noise_sd >= 0):
            raise DomainError("standard deviations must be non-negative (z_sd > 0)")
        if not self.z_modes or not self.beta_z:
            raise DomainError("z_modes and beta_z must be non-empty")

    def scenarios(self):
        # ordered (random, -1), (smooth, -1), (random, 0), (smooth, 0) with the defaults
        return [(m, float(b)) for b in self.beta_z for m in self.z_modes]

    @classmethod
    def desk(cls, **kw):
        return cls(**{"replicates": 30, "gibbs": GibbsConfig.desk(), **kw})

    @classmethod
    def paper(cls, **kw):
        return cls(**kw)


@dataclass
class ErrorRow:
    study: str
    scenario: int
    theta_c: float | None
    theta_u: float | None
    rho: float | None
    z_mode: str | None
    beta_z: float
    model: str
    replicate: int
    beta_x_hat: float
    error: float
    abs_error: float
    flagged: bool
    message: str
    seed_key: str
    wall_time: float = 0.0


@dataclass
class ErrorTable:
    rows: list
    locations_fingerprint: str
    wall_time: float = 0.0


def study_seed(master, *key):
    return np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))


def _key_str(master, *key):
    return "-".join(str(int(k)) for k in (master, *key))


def _record(rows, base, model, rep, beta_true, fn, seed_key):
    t0 = time.perf_counter()
    try:
        est = float(fn())
        if not math.isfinite(est):
            raise SpconfError("non-finite estimate")
        flagged, msg = False, ""
    except (SpconfError, np.linalg.LinAlgError, ValueError, ArithmeticError) as exc:
        est, flagged, msg = float("nan"), True, f"{type(exc).__name__}: {exc}"
    err = est - beta_true
    rows.append(ErrorRow(**base, model=model, replicate=rep, beta_x_hat=est, error=err,
                         abs_error=abs(err), flagged=flagged, message=msg, seed_key=seed_key,
                         wall_time=time.perf_counter() - t0))


def _reraise(exc):
    def fail():
        raise exc
    return fail


def geostat_locations(config: GeostatStudyConfig):
    rng = np.random.default_rng(study_seed(config.seed, 0))
    return rng.uniform(0.0, config.window, size=(config.n, 2))


def _geostat_scenario(config: GeostatStudyConfig, s, locs):
    tc, tu, rho = config.scenarios()[s]
    spec = ConfoundedFieldSpec(
        config.sigma2_field, config.sigma2_field, config.sigma2_field, rho,
        CorrelationKernel.exponential(tc), CorrelationKernel.exponential(tu),
    )
    coeffs = GeneratingCoefficients(config.beta0, config.beta_x, config.beta_z, config.sigma2)
    base = dict(study="geostat", scenario=s, theta_c=tc, theta_u=tu, rho=rho, z_mode=None, beta_z=config.beta_z)
    rows = []
    try:
        factors = spec.factors(locs)
    except SpconfError as exc:
        for rep in range(config.replicates):
            for mi, model in enumerate(config.models):
                _record(rows, base, model, rep, config.beta_x, _reraise(exc),
                        _key_str(config.seed, 2, s, rep, mi))
        return rows
    fitters = {
        "OLS": lambda y, x: fit_ols(y, x).beta_x,
        "S-REML": lambda y, x: fit_gls_reml(y, x, locs).beta_x,
        "PS": lambda y, x: fit_spatial_spline(y, x, locs).beta_x,
        "S+": lambda y, x: fit_spatial_plus(y, x, locs).beta_x,
        "gSEM": lambda y, x: fit_gsem(y, x, locs).beta_x,
    }
    for rep in range(config.replicates):
        rng = np.random.default_rng(study_seed(config.seed, 1, s, rep))
        x, z = sample_confounded_fields(spec, locs, rng, factors=factors)
        y = generate_response(x, z, coeffs, rng)
        for mi, model in enumerate(config.models):
            _record(rows, base, model, rep, config.beta_x, lambda f=fitters[model]: f(y, x),
                    _key_str(config.seed, 2, s, rep, mi))
    return rows


def _run_pool(job, args, workers):
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(job, args))
    return [job(a) for a in args]


def _geostat_job(args):
    return _geostat_scenario(*args)


def run_geostat_study(config: GeostatStudyConfig, workers=None) -> ErrorTable:
    """Simulate and fit every (scenario, replicate, model) of the geostatistical study.

    Locations are drawn once from the master seed and shared by all
    scenarios. Failed fits become flagged rows.
    """
    workers = default_workers() if workers is None else workers
    t0 = time.perf_counter()
    locs = geostat_locations(config)
    parts = _run_pool(_geostat_job, [(config, s, locs) for s in range(len(config.scenarios()))], workers)
    rows = [r for part in parts for r in part]
    return ErrorTable(rows, fingerprint(locs), time.perf_counter() - t0)


def areal_design(config: ArealStudyConfig):
    """Graph Laplacian, centroids and the two fixed confounders of the areal study."""
    q = graph_laplacian(rook_adjacency(config.side))
    centroids = grid_centroids(config.side)
    rng = np.random.default_rng(study_seed(config.seed, 0))
    zs = {
        "random": areal_confounder("random", rng, n=q.shape[0], sd=config.z_sd),
        "eigenvector": areal_confounder("eigenvector", q=q, reference=centroids[:, 0]),
    }
    return q, centroids, zs


def areal_replicate(config: ArealStudyConfig, s, rep, z):
    """``(x, y)`` of replicate ``rep`` in scenario ``s`` given that scenario's fixed ``z``."""
    beta_z = config.scenarios()[s][1]
    rng = np.random.default_rng(study_seed(config.seed, 1, s, rep))
    x = areal_covariate(z, rng, config.x_slope, config.x_sd)
    y = config.beta_x * x + beta_z * z + rng.standard_normal(z.shape[0]) * config.noise_sd
    return x, y


def _areal_scenario(config: ArealStudyConfig, s, q, centroids, z):
    mode, beta_z = config.scenarios()[s]
    base = dict(study="areal", scenario=s, theta_c=None, theta_u=None, rho=None, z_mode=mode, beta_z=beta_z)
    rows = []
    for rep in range(config.replicates):
        x, y = areal_replicate(config, s, rep, z)
        for mi, model in enumerate(config.models):
            seed = study_seed(config.seed, 2, s, rep, mi)
            fit = {
                "BayesOLS": lambda: fit_bayes_ols_gibbs(y, x, config.gibbs, np.random.default_rng(seed))[0].beta_x,
                "ICAR": lambda: fit_icar_gibbs(y, x, q, config.gibbs, np.random.default_rng(seed))[0].beta_x,
                "PS": lambda: fit_spatial_spline(y, x, centroids).beta_x,
                "S+": lambda: fit_spatial_plus(y, x, centroids).beta_x,
                "gSEM": lambda: fit_gsem(y, x, centroids).beta_x,
            }[model]
            _record(rows, base, model, rep, config.beta_x, fit, _key_str(config.seed, 2, s, rep, mi))
    return rows


def _areal_job(args):
    return _areal_scenario(*args)


def run_areal_study(config: ArealStudyConfig, workers=None) -> ErrorTable:
    """Simulate and fit every (scenario, replicate, model) of the areal study.

    Both confounders are fixed for the whole study; each replicate redraws
    the covariate noise and the response noise.
    """
    workers = default_workers() if workers is None else workers
    t0 = time.perf_counter()
    q, centroids, zs = areal_design(config)
    args = [(config, s, q, centroids, zs[mode]) for s, (mode, _) in enumerate(config.scenarios())]
    parts = _run_pool(_areal_job, args, workers)
    rows = [r for part in parts for r in part]
    return ErrorTable(rows, fingerprint(centroids), time.perf_counter() - t0)


# ---------------------------------------------------------------- summaries


@dataclass
class SummaryRow:
    study: str
    scenario: int
    model: str
    n_ok: int
    n_flagged: int
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    mean_error: float
    mcse: float
    empty: bool = False


def boxplot_stats(values):
    """Median, quartiles and Tukey whiskers (linear-interpolation quantiles).

    Whiskers are the most extreme observations within 1.5 IQR of the box.
    """
    v = np.sort(np.asarray(values, dtype=float))
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75], method="linear")
    iqr = q3 - q1
    lo = v[v >= q1 - 1.5 * iqr].min()
    hi = v[v <= q3 + 1.5 * iqr].max()
    return float(med), float(q1), float(q3), float(lo), float(hi)


def summarize_errors(table) -> list:
    """One summary per (study, scenario, model), in first-appearance order.

    Statistics of ``abs_error`` exclude flagged rows; a group with no
    usable row is returned with ``empty=True`` and NaN statistics.
    """
    rows = table.rows if isinstance(table, ErrorTable) else list(table)
    if not rows:
        raise DomainError("cannot summarize an empty table")
    groups = {}
    for r in rows:
        groups.setdefault((r.study, r.scenario, r.model), []).append(r)
    out = []
    nan = float("nan")
    for (study, scen, model), grp in groups.items():
        ok = [r for r in grp if not r.flagged]
        n_flag = len(grp) - len(ok)
        if not ok:
            out.append(SummaryRow(study, scen, model, 0, n_flag, nan, nan, nan, nan, nan, nan, nan, True))
            continue
        abs_err = [r.abs_error for r in ok]
        err = np.array([r.error for r in ok])
        mcse = float(err.std(ddof=1) / math.sqrt(err.size)) if err.size > 1 else nan
        out.append(SummaryRow(study, scen, model, len(ok), n_flag, *boxplot_stats(abs_err), float(err.mean()), mcse))
    return out


def median_abs_error(summary, scenario, model):
    for row in summary:
        if row.scenario == scenario and row.model == model:
            return row.median
    raise KeyError((scenario, model))

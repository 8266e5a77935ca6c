import logging
import math
from dataclasses import dataclass
from functools import wraps
from typing import Callable

import numpy as np
import pandas as pd

from sdeselect.config import ExperimentConfig, apply_overrides, load_config
from sdeselect.errors import ConfigError, IndividualError, SDESelectError
from sdeselect.models.process import CovariateSet, SamplePath, TimeGrid, standardize
from sdeselect.models.simulate import PATH_STREAM, derive_seed, euler_maruyama
from sdeselect.models.spec import DiffusionSpec, DriftSpec, ModelSpec
from sdeselect.models.store import ResultStore
from sdeselect.utils.analytics import Analytics
from sdeselect.utils.asymptotics import (DeltaSearchSpace, SweepSetup, convergence_sweep, delta_inf,
                                         uv_time_average_diagnostic)
from sdeselect.utils.bayes import Prior
from sdeselect.utils.estimation import fit_ckls
from sdeselect.utils.selection import enumerate_masks, mask_label, select_single, select_system
from sdeselect.utils.series import load_series_csv

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Command:
    name: str
    help: str
    handler: Callable


COMMANDS: dict[str, Command] = {}


def command(name, help=""):
    def register(handler):
        COMMANDS[name] = Command(name, help, handler)
        return handler
    return register


def config_required(f):
    """Load the config named on the command line, apply overrides and open the store"""
    @wraps(f)
    def decorated_function(args):
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        cfg = apply_overrides(cfg, args.seed, args.replications, args.prior_draws, args.out)
        print(f"seed={cfg.seeds.master}", flush=True)
        store = ResultStore(cfg.output.directory, cfg.seeds.master, cfg.digest[:16])
        f(cfg, store)
        return 0
    return decorated_function


# nested CKLS special cases: label and the theta coordinates held fixed
CKLS_VARIANTS = (
    ("ckls", {}),
    ("vasicek", {3: 0.0}),
    ("cir", {3: 0.5}),
    ("gbm", {0: 0.0, 3: 1.0}),
    ("brownian", {1: 0.0, 3: 0.0}),
)


def _ckls_bounds(cfg, fixed=None):
    bounds = np.column_stack([cfg.ckls.lower, cfg.ckls.upper]).astype(float)
    for j, value in (fixed or {}).items():
        bounds[j] = value
    return bounds


def _load_covariates(cfg, grid):
    if cfg.data.covariates:
        covs = load_series_csv(cfg.resolve(cfg.data.covariates), kind="covariates").series
        if covs.grid != grid:
            raise ConfigError("data.path and data.covariates must share one time grid")
    else:
        covs = CovariateSet.empty(grid)
    if cfg.model.links:
        if len(cfg.model.links) != covs.p:
            raise ConfigError(f"model.links has {len(cfg.model.links)} entries for {covs.p} covariate columns")
        covs = CovariateSet(covs.grid, covs.series, cfg.model.links)
    if cfg.model.standardize and covs.p:
        covs = standardize(covs)
    return covs


def _load_observed(cfg):
    path = load_series_csv(cfg.resolve(cfg.data.path), kind="path").series
    return path, _load_covariates(cfg, path.grid)


def _load_observed_system(cfg):
    """One path per value column of data.path; every individual shares data.covariates"""
    series = load_series_csv(cfg.resolve(cfg.data.path), kind="auto").series
    if isinstance(series, SamplePath):
        paths = [series]
    else:
        paths = [SamplePath(series.grid, row) for row in series.series]
    return paths, _load_covariates(cfg, paths[0].grid)


def _data_family(cfg, path, covs):
    """Linear drift with the diffusion frozen at its CKLS fit"""
    fit = fit_ckls(path, _ckls_bounds(cfg), Analytics(cfg).schedule(), cfg.seeds.master)
    logger.info("diffusion frozen at %s", fit.model.diffusion)
    return ModelSpec(DriftSpec("linear", (0.0, 0.0)), fit.model.diffusion, (0,) * covs.p, (1.0,))


def _truth_table(model: ModelSpec) -> pd.DataFrame:
    names = [f"beta{j + 1}" for j in range(model.n_beta)] + [f"xi{j}" for j in range(len(model.xi))]
    return pd.DataFrame({"parameter": names, "value": model.theta})


@command("simulate", "simulate covariates and one path from the configured true model")
@config_required
def simulate(cfg, store):
    study = Analytics(cfg).build_study(cfg.seeds.master)
    path = study.simulate(cfg.seeds.master)
    store.write_covariates("covariates.csv", study.covariates)
    store.write_path("path.csv", path)
    table = _truth_table(study.truth)
    table.insert(0, "mask", mask_label(study.truth.mask))
    store.write_table("truth.csv", table)


@command("covariates", "simulate the covariate series only")
@config_required
def covariates(cfg, store):
    store.write_covariates("covariates.csv", Analytics(cfg).build_covariates(cfg.seeds.master))


@command("logbf", "log Bayes factor of every covariate mask")
@config_required
def logbf(cfg, store):
    analytics = Analytics(cfg)
    rows = []
    if cfg.data.path:
        # observed data: every mask against the intercept-only model
        if cfg.prior.kind == "truth-point":
            raise ConfigError("prior.kind = truth-point needs simulated data")
        path, covs = _load_observed(cfg)
        family = _data_family(cfg, path, covs)
        ranking = select_single(path, covs, family, analytics.prior_builder(None), cfg.mc.prior_draws,
                                cfg.seeds.master)
        base = next(e for e in ranking.entries if not any(e.mask))
        for entry in sorted(ranking.entries, key=lambda e: e.mask):
            se = math.hypot(entry.estimate.std_error, base.estimate.std_error)
            rows.append({"mask": mask_label(entry.mask), "log_bf": entry.value - base.value, "std_error": se,
                         "ess": entry.estimate.ess})
        T = path.grid.horizon
    else:
        study = analytics.build_study(cfg.seeds.master)
        path = study.simulate(cfg.seeds.master)
        for mask in enumerate_masks(study.covariates.p):
            est = analytics.mask_estimate(study, study.truth, path, mask, cfg.seeds.master, "ratio")
            rows.append({"mask": mask_label(mask), "log_bf": est.value, "std_error": est.std_error,
                         "ess": est.ess})
        T = study.grid.horizon
    table = pd.DataFrame(rows)
    table["normalized"] = table["log_bf"] / T
    store.write_table("logbf.csv", table)


@command("select", "rank covariate masks per individual, or run the system study")
@config_required
def select(cfg, store):
    analytics = Analytics(cfg)
    if cfg.data.path:
        if cfg.prior.kind == "truth-point":
            raise ConfigError("prior.kind = truth-point needs simulated data")
        paths, covs = _load_observed_system(cfg)
        if len(paths) > 1:
            _select_observed_system(cfg, store, analytics, paths, covs)
            return
        path = paths[0]
        family = _data_family(cfg, path, covs)
        builder = analytics.prior_builder(None)
    elif cfg.study.individuals > 1:
        report = analytics.run_system_study()
        store.write_table("system.csv", report.table)
        losing = int((report.table.loc[~report.table["truth"], "normalized_log_bf"] < 0).sum())
        logger.info("%s system study: %d of %d wrong combinations lose to the truth", report.kind, losing,
                    len(report.table) - 1)
        return
    else:
        study = analytics.build_study(cfg.seeds.master)
        path, covs, family = study.simulate(cfg.seeds.master), study.covariates, study.family
        builder = analytics.prior_builder(study.truth)
    ranking = select_single(path, covs, family, builder, cfg.mc.prior_draws, cfg.seeds.master)
    store.write_table("ranking.csv", ranking.to_frame())
    logger.info("winner %s", mask_label(ranking.winner))


def _select_observed_system(cfg, store, analytics, paths, covs):
    """Independent rankings for observed individuals, one per path column"""
    families = []
    for i, path in enumerate(paths):
        try:
            families.append(_data_family(cfg, path, covs))
        except SDESelectError as exc:
            raise IndividualError(i, exc) from exc
    selection = select_system(paths, [covs] * len(paths), families, analytics.prior_builder(None),
                              cfg.mc.prior_draws, cfg.seeds.master)
    frames = []
    for i, ranking in enumerate(selection.rankings):
        frame = ranking.to_frame()
        frame.insert(0, "individual", i)
        frames.append(frame)
    store.write_table("rankings.csv", pd.concat(frames, ignore_index=True))
    logger.info("winners %s", "/".join(mask_label(w) for w in selection.winners))


@command("replicate", "replicated log Bayes factors of every mask")
@config_required
def replicate(cfg, store):
    report = Analytics(cfg).run_replications()
    store.write_table("replications.csv", report.table)
    logger.info("%s study: %d replicates, %.1fs", report.kind, report.replicates, report.wall_time)


@command("asymptotics", "convergence sweep, delta and U/V diagnostics in the constant-ratio family")
@config_required
def asymptotics(cfg, store):
    sw = cfg.sweep
    family = ModelSpec(DriftSpec("ratio", (0.0,)), DiffusionSpec.constant(1.0))
    truth = family.with_params([sw.eta0, 1.0])
    prior = Prior.uniform([sw.prior_low, 1.0], [sw.prior_high, 1.0])

    space = DeltaSearchSpace(((sw.prior_low, sw.prior_high),), ((1.0, 1.0),))
    delta = delta_inf(space, (1.0,), sw.eta0, seed=cfg.seeds.master)
    store.write_table("delta.csv", pd.DataFrame([{
        "delta": delta.delta, "beta": delta.argmin["beta"][0], "xi0": delta.argmin["xi"][0],
        "resolution": delta.grid_resolution,
    }]))

    truth_prior = None
    if sw.eta0_spread > 0:
        truth_prior = Prior.uniform([sw.eta0 - sw.eta0_spread, 1.0], [sw.eta0 + sw.eta0_spread, 1.0])
    setup = SweepSetup(family, truth, prior, sw.horizons, sw.dt, cfg.mc.replications, cfg.mc.prior_draws,
                       cfg.seeds.master, truth_prior=truth_prior,
                       delta_target=delta.delta if truth_prior is None else None,
                       variance_floor=sw.variance_floor, n_jobs=cfg.mc.workers)
    result = convergence_sweep(setup)
    store.write_table("sweep.csv", result.table)
    logger.info("mean converging: %s, variance persistent: %s", result.mean_converging,
                result.variance_persistent)

    steps = int(round(max(sw.horizons) / sw.dt))
    grid = TimeGrid(0.0, steps * sw.dt, steps)
    rival = family.with_params([sw.prior_low, 1.0])
    uv = uv_time_average_diagnostic(truth, rival, CovariateSet.empty(grid), 0.0, sw.horizons,
                                    cfg.mc.replications, cfg.seeds.master)
    store.write_table("uv.csv", uv)


@command("fit-ckls", "fit CKLS and its nested special cases, compared by BIC")
@config_required
def fit_ckls_command(cfg, store):
    analytics = Analytics(cfg)
    if cfg.data.path:
        path = load_series_csv(cfg.resolve(cfg.data.path), kind="path").series
    else:
        theta = cfg.ckls.theta
        model = ModelSpec(DriftSpec("ckls", theta[:2]), DiffusionSpec("ckls", theta[2:]))
        path = euler_maruyama(model, None, cfg.ckls.x0, analytics.grid(),
                              derive_seed(cfg.seeds.master, PATH_STREAM))
        store.write_path("path.csv", path)

    fits = []
    for label, fixed in CKLS_VARIANTS:
        try:
            fits.append((label, fit_ckls(path, _ckls_bounds(cfg, fixed), analytics.schedule(),
                                         cfg.seeds.master)))
        except SDESelectError as exc:
            if label == "ckls":
                raise
            logger.warning("%s fit skipped: %s", label, exc)
    store.write_fits("fits.csv", fits)
    best = min(fits, key=lambda item: item[1].bic)
    logger.info("lowest BIC: %s (%.6g)", best[0], best[1].bic)

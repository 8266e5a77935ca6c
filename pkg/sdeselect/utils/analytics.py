"""
Simulation studies and the replication harness.

A study is built from an ExperimentConfig: covariates from drifting SDEs
(standardized over time), true parameters xi ~ N(mu, truth_sd^2) with
mu ~ N(0, truth_mean_sd^2), linear-affine drift and constant diffusion.
"""

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from sdeselect.config import ExperimentConfig
from sdeselect.errors import IndividualError, ReplicateError
from sdeselect.models.process import CovariateSet, SamplePath, TimeGrid, standardize
from sdeselect.models.simulate import (COMBINATION_STREAM, COVARIATE_STREAM, INDIVIDUAL_STREAM, MASK_STREAM,
                                       PATH_STREAM, PRIOR_STREAM, REPLICATE_STREAM, TRUTH_STREAM,
                                       derive_seed, drifting_covariate_sdes, euler_maruyama, rng_for,
                                       simulate_covariates)
from sdeselect.models.spec import DiffusionSpec, DriftSpec, ModelSpec
from sdeselect.utils.bayes import LogBFEstimate, Prior, combine_estimates, log_marginal_mc, log_marginal_ratio_mc
from sdeselect.utils.estimation import AnnealingSchedule
from sdeselect.utils.selection import (MLEPriorBuilder, enumerate_masks, mask_code, mask_label,
                                       sample_wrong_combinations)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Study:
    grid: TimeGrid
    covariates: CovariateSet
    truth: ModelSpec
    family: ModelSpec
    mu: np.ndarray
    x0: float

    def simulate(self, seed: int, truth: ModelSpec | None = None) -> SamplePath:
        return euler_maruyama(truth if truth is not None else self.truth, self.covariates, self.x0, self.grid,
                              derive_seed(seed, PATH_STREAM))


class TruthPointBuilder:
    """Point-mass prior at the true parameters re-targeted to each mask"""

    def __init__(self, truth: ModelSpec):
        self.truth = truth

    def __call__(self, family, path, covs, seed) -> Prior:
        return Prior.point(self.truth.with_mask(family.mask).theta)


@dataclass(frozen=True, eq=False)
class ReplicationReport:
    table: pd.DataFrame
    replicates: int
    wall_time: float
    kind: str

    def mean_of(self, mask) -> float:
        row = self.table.loc[self.table["mask"] == mask_label(mask)]
        return float(row["mean"].iloc[0])


@dataclass(frozen=True, eq=False)
class SystemReport:
    truth_masks: tuple
    table: pd.DataFrame
    kind: str = "ratio"


class Analytics:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg

    def schedule(self):
        a = self.cfg.annealing
        return AnnealingSchedule(a.t_initial, a.cooling, a.steps_per_temp, a.t_min,
                                 a.proposal_scale, a.restarts)

    def grid(self):
        g = self.cfg.grid
        return TimeGrid(g.t0, g.t_end, g.n_steps)

    def build_covariates(self, seed):
        """Covariate paths on the study grid, standardized when configured"""
        model = self.cfg.model
        sdes = drifting_covariate_sdes(rng_for(seed, COVARIATE_STREAM), model.covariate_sd, model.covariates)
        covs = simulate_covariates(sdes, self.grid(), seed)
        if model.links:
            covs = CovariateSet(covs.grid, covs.series, model.links)
        return standardize(covs) if model.standardize and covs.p else covs

    def build_study(self, seed, sigma=None, mask=None):
        """Covariates, true model and family template for one individual"""
        model = self.cfg.model
        mask = tuple(mask) if mask is not None else tuple(model.true_mask)
        sigma = model.sigma if sigma is None else sigma
        covs = self.build_covariates(seed)
        rng = rng_for(seed, TRUTH_STREAM)
        n_params = 2 + 1 + sum(mask)
        mu = rng.normal(0.0, model.truth_mean_sd, size=n_params)
        theta = rng.normal(mu, model.truth_sd)
        diffusion = DiffusionSpec.constant(sigma)
        truth = ModelSpec(DriftSpec("linear", theta[:2]), diffusion, mask, theta[2:])
        family = ModelSpec(DriftSpec("linear", (0.0, 0.0)), diffusion, (0,) * covs.p, (1.0,))
        return Study(self.grid(), covs, truth, family, mu, model.x0)

    def prior_builder(self, truth):
        if self.cfg.prior.kind == "truth-point":
            return TruthPointBuilder(truth)
        return MLEPriorBuilder(self.cfg.prior.sd, self.cfg.annealing.bound, self.schedule())

    def redraw_truth(self, study, seed):
        """Truth with xi ~ N(mu, truth_sd^2) drawn afresh for a replicate"""
        theta = rng_for(seed, TRUTH_STREAM).normal(study.mu, self.cfg.model.truth_sd)
        return study.truth.with_params(theta)

    def mask_estimate(self, study, truth, path, mask, seed, kind) -> LogBFEstimate:
        """Log Bayes factor (ratio kind) or log marginal (marginal kind) of one mask"""
        mask_seed = derive_seed(seed, MASK_STREAM, mask_code(mask))
        family = study.family.with_mask(mask)
        prior = self.prior_builder(truth)(family, path, study.covariates, mask_seed)
        draws = self.cfg.mc.prior_draws
        prior_seed = derive_seed(mask_seed, PRIOR_STREAM)
        if kind == "ratio":
            return log_marginal_ratio_mc(path, study.covariates, family, prior, truth, draws, prior_seed)
        return log_marginal_mc(path, study.covariates, family, prior, draws, prior_seed)

    def single_replicate(self, study, r):
        """Normalized value of every mask on one fresh data set"""
        seed_r = derive_seed(self.cfg.seeds.master, REPLICATE_STREAM, r)
        kind = self.cfg.study.kind
        truth = study.truth if kind == "ratio" else self.redraw_truth(study, seed_r)
        try:
            path = study.simulate(seed_r, truth)
            T = study.grid.horizon
            values = {mask: self.mask_estimate(study, truth, path, mask, seed_r, kind).value / T
                      for mask in enumerate_masks(study.covariates.p)}
        except Exception as exc:
            raise ReplicateError(r, exc) from exc
        logger.info("replicate %d done", r)
        return values

    def run_replications(self) -> ReplicationReport:
        started = time.perf_counter()
        study = self.build_study(self.cfg.seeds.master)
        R = self.cfg.mc.replications
        results = Parallel(n_jobs=self.cfg.mc.workers)(
            delayed(self.single_replicate)(study, r) for r in range(R))

        rows = []
        for mask in enumerate_masks(study.covariates.p):
            values = np.array([res[mask] for res in results])
            se = float(np.std(values, ddof=1) / math.sqrt(R)) if R > 1 else math.nan
            rows.append({"mask": mask_label(mask), "mean": float(np.mean(values)), "se": se,
                         "replicates": R})
        wall = time.perf_counter() - started
        logger.info("%d replicates in %.1fs", R, wall)
        return ReplicationReport(pd.DataFrame(rows), R, wall, self.cfg.study.kind)

    def run_system_study(self) -> SystemReport:
        """
        Individuals i = 0..n-1 with sigma_i = sigma + i * sigma_step and random
        true masks; every sampled wrong combination is compared with the
        truth through the (1/nT)-normalized system log Bayes factor.
        With the marginal kind the factor is the difference of summed log
        marginals; individuals whose mask matches the truth cancel exactly.
        """
        cfg = self.cfg
        master = cfg.seeds.master
        kind = cfg.study.kind
        n = cfg.study.individuals
        p = cfg.model.covariates
        studies, paths, truth_masks = [], [], []
        for i in range(n):
            seed_i = derive_seed(master, INDIVIDUAL_STREAM, i)
            mask = tuple(int(b) for b in rng_for(seed_i, MASK_STREAM).integers(0, 2, size=p))
            study = self.build_study(seed_i, cfg.model.sigma + i * cfg.study.sigma_step, mask)
            studies.append(study)
            paths.append(study.simulate(seed_i))
            truth_masks.append(mask)

        count = min(cfg.study.wrong_combinations, 2 ** (p * n) - 1)
        combos = sample_wrong_combinations(truth_masks, p, count,
                                           derive_seed(master, COMBINATION_STREAM))
        cache = {}

        def estimate(i, mask):
            if (i, mask) not in cache:
                seed_i = derive_seed(master, INDIVIDUAL_STREAM, i)
                try:
                    cache[i, mask] = self.mask_estimate(studies[i], studies[i].truth, paths[i], mask,
                                                        seed_i, kind)
                except Exception as exc:
                    raise IndividualError(i, exc) from exc
            return cache[i, mask]

        def compare(combo):
            if kind == "ratio":
                return combine_estimates([estimate(i, mask) for i, mask in enumerate(combo)])
            terms = []
            for i, mask in enumerate(combo):
                if mask == truth_masks[i]:
                    continue
                wrong, right = estimate(i, mask), estimate(i, truth_masks[i])
                terms.append(LogBFEstimate(wrong.value - right.value,
                                           math.hypot(wrong.std_error, right.std_error),
                                           wrong.n_draws + right.n_draws, min(wrong.ess, right.ess)))
            return combine_estimates(terms)

        nT = n * studies[0].grid.horizon
        rows = []
        for combo in [tuple(truth_masks)] + combos:
            est = compare(combo)
            rows.append({"combination": "/".join(mask_label(m) for m in combo),
                         "truth": combo == tuple(truth_masks),
                         "normalized_log_bf": est.value / nT,
                         "std_error": est.std_error / nT})
            logger.info("combination %s: %.6g", rows[-1]["combination"], rows[-1]["normalized_log_bf"])
        return SystemReport(tuple(truth_masks), pd.DataFrame(rows), kind)


def run_replications(cfg: ExperimentConfig) -> ReplicationReport:
    return Analytics(cfg).run_replications()


def run_system_study(cfg: ExperimentConfig) -> SystemReport:
    return Analytics(cfg).run_system_study()

"""
Covariate subset enumeration and the selection drivers for one individual and
for systems of independent individuals.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from sdeselect.errors import IndividualError, ModelMismatchError
from sdeselect.models.process import CovariateSet, SamplePath
from sdeselect.models.simulate import INDIVIDUAL_STREAM, MASK_STREAM, PRIOR_STREAM, derive_seed, rng_for
from sdeselect.models.spec import ModelSpec
from sdeselect.utils.bayes import LogBFEstimate, Prior, log_marginal_mc
from sdeselect.utils.estimation import AnnealingSchedule, fit_mle

logger = logging.getLogger(__name__)

MAX_COVARIATES = 20

PriorBuilder = Callable[[ModelSpec, SamplePath, CovariateSet, int], Prior]


def enumerate_masks(p: int) -> list[tuple]:
    """All 2^p inclusion masks in lexicographic order"""
    if not 0 <= p <= MAX_COVARIATES:
        raise ValueError(f"mask enumeration supports 0..{MAX_COVARIATES} covariates, got {p}")
    return list(itertools.product((0, 1), repeat=p))


def mask_code(mask: Sequence[int]) -> int:
    code = 0
    for bit in mask:
        code = 2 * code + int(bit)
    return code


def mask_label(mask: Sequence[int]) -> str:
    """Bitstring form used in CSV output; '-' for the empty mask"""
    return "".join(str(int(b)) for b in mask) or "-"


def parse_mask(label: str) -> tuple:
    return () if label == "-" else tuple(int(c) for c in label)


@dataclass(frozen=True)
class RankingEntry:
    mask: tuple
    estimate: LogBFEstimate

    @property
    def value(self) -> float:
        return self.estimate.value


def _rank_key(entry: RankingEntry):
    # larger value first, then fewer covariates, then lexicographic mask
    return (-entry.value, sum(entry.mask), entry.mask)


@dataclass(frozen=True)
class ModelRanking:
    entries: tuple
    winner: tuple

    @classmethod
    def from_estimates(cls, estimates: dict) -> "ModelRanking":
        entries = tuple(sorted((RankingEntry(tuple(m), e) for m, e in estimates.items()), key=_rank_key))
        return cls(entries, entries[0].mask)

    def value_of(self, mask) -> float:
        for entry in self.entries:
            if entry.mask == tuple(mask):
                return entry.value
        raise KeyError(f"mask {mask_label(mask)} was not ranked")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "mask": [mask_label(e.mask) for e in self.entries],
            "value": [e.value for e in self.entries],
            "std_error": [e.estimate.std_error for e in self.entries],
            "ess": [e.estimate.ess for e in self.entries],
            "rank": list(range(1, len(self.entries) + 1)),
        })


class MLEPriorBuilder:
    """
    Normal prior centred at the annealing MLE of each masked model, every
    component with the same sd. Parameters are searched in [-bound, bound].
    """

    def __init__(self, sd: float, bound: float = 10.0, schedule: AnnealingSchedule | None = None):
        self.sd = sd
        self.bound = bound
        self.schedule = schedule

    def bounds_for(self, family: ModelSpec) -> np.ndarray:
        return np.tile([-self.bound, self.bound], (family.n_params, 1))

    def __call__(self, family: ModelSpec, path: SamplePath, covs: CovariateSet, seed: int) -> Prior:
        fit = fit_mle(family, path, covs, self.bounds_for(family), self.schedule, seed)
        logger.debug("mask %s MLE %s", mask_label(family.mask), fit.theta_hat)
        return Prior.normal(fit.theta_hat, self.sd)


def select_single(path: SamplePath, covs: CovariateSet, family: ModelSpec,
                  prior_builder: PriorBuilder, m: int, seed: int,
                  masks: Sequence[Sequence[int]] | None = None) -> ModelRanking:
    """
    Marginal likelihood of every candidate mask, ranked. Mask c builds its
    prior from derive_seed(seed, 4, code(c)) and draws from the prior stream
    under that seed, so a mask's value does not depend on the candidate list.
    """
    masks = [tuple(m_) for m_ in masks] if masks is not None else enumerate_masks(covs.p)
    if not masks:
        raise ModelMismatchError("no candidate masks")
    estimates = {}
    for mask in masks:
        mask_seed = derive_seed(seed, MASK_STREAM, mask_code(mask))
        try:
            candidate = family.with_mask(mask)
            prior = prior_builder(candidate, path, covs, mask_seed)
            estimates[mask] = log_marginal_mc(path, covs, candidate, prior, m,
                                              derive_seed(mask_seed, PRIOR_STREAM))
        except Exception as exc:
            exc.add_note(f"while evaluating mask {mask_label(mask)}")
            raise
        logger.info("mask %s marginal %.6g (se %.3g)", mask_label(mask),
                    estimates[mask].value, estimates[mask].std_error)
    return ModelRanking.from_estimates(estimates)


@dataclass(frozen=True)
class SystemSelection:
    rankings: tuple
    horizon: float

    @property
    def winners(self) -> tuple:
        return tuple(r.winner for r in self.rankings)

    @property
    def n(self) -> int:
        return len(self.rankings)

    def score(self, combination: Sequence[Sequence[int]]) -> float:
        """Sum over individuals of the log marginal of each individual's mask"""
        if len(combination) != self.n:
            raise ModelMismatchError(f"combination has {len(combination)} masks for {self.n} individuals")
        return float(np.sum([r.value_of(mask) for r, mask in zip(self.rankings, combination)]))

    def compare(self, candidate, reference) -> float:
        """(1/nT)-normalized log Bayes factor of candidate against reference"""
        return (self.score(candidate) - self.score(reference)) / (self.n * self.horizon)

    def comparison_table(self, candidates, reference) -> pd.DataFrame:
        return pd.DataFrame({
            "combination": ["/".join(mask_label(m) for m in c) for c in candidates],
            "normalized_log_bf": [self.compare(c, reference) for c in candidates],
        })


def select_system(paths: Sequence[SamplePath], covsets: Sequence[CovariateSet],
                  families: ModelSpec | Sequence[ModelSpec], prior_builder: PriorBuilder, m: int,
                  seed: int, candidates: Sequence | None = None) -> SystemSelection:
    """
    Independent selection per individual; individual i runs select_single
    with seed derive_seed(seed, 2, i).
    """
    n = len(paths)
    if isinstance(families, ModelSpec):
        families = [families] * n
    candidates = candidates if candidates is not None else [None] * n
    if not n == len(covsets) == len(families) == len(candidates):
        raise ModelMismatchError("system inputs must have one entry per individual")
    horizons = {p.grid.horizon for p in paths}
    if len(horizons) != 1:
        raise ModelMismatchError("all individuals must be observed over the same horizon")

    rankings = []
    for i in range(n):
        try:
            rankings.append(select_single(paths[i], covsets[i], families[i], prior_builder, m,
                                          derive_seed(seed, INDIVIDUAL_STREAM, i), candidates[i]))
        except Exception as exc:
            raise IndividualError(i, exc) from exc
        logger.info("individual %d winner %s", i, mask_label(rankings[-1].winner))
    return SystemSelection(tuple(rankings), horizons.pop())


def sample_wrong_combinations(truth: Sequence[Sequence[int]], p: int, count: int,
                              seed: int) -> list[tuple]:
    """count distinct per-individual mask combinations, uniform over all but the truth"""
    truth = tuple(tuple(int(b) for b in mask) for mask in truth)
    n = len(truth)
    available = 2 ** (p * n) - 1
    if count > available:
        raise ValueError(f"only {available} wrong combinations exist, {count} requested")
    rng = rng_for(seed)
    chosen, seen = [], {truth}
    while len(chosen) < count:
        combo = tuple(tuple(int(b) for b in rng.integers(0, 2, size=p)) for _ in range(n))
        if combo not in seen:
            seen.add(combo)
            chosen.append(combo)
    return chosen

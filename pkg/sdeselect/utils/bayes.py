"""
Priors, Monte Carlo marginal likelihoods and log Bayes factors.

Continuous priors are integrated by plain prior-draw Monte Carlo:
log mean_j exp(r_j), evaluated with logsumexp. Priors with finite support
(point masses and discrete atoms) are integrated exactly by enumerating
the atoms, which gives std_error 0.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from sdeselect.errors import IndividualError, ModelMismatchError, PriorError
from sdeselect.models.process import CovariateSet, SamplePath
from sdeselect.models.simulate import INDIVIDUAL_STREAM, derive_seed, rng_for
from sdeselect.models.spec import ModelSpec
from sdeselect.utils.girsanov import LikelihoodKernel

logger = logging.getLogger(__name__)

ESS_WARNING = 10.0

PRIOR_KINDS = ("normal", "point", "discrete", "uniform")


@dataclass(frozen=True, eq=False)
class Prior:
    """
    Distribution over the flat parameter vector theta = (beta, xi).

    kind      normal    means, sds (independent components, sds > 0)
              point     means (the single atom)
              discrete  atoms (rows), weights summing to 1
              uniform   means = lower corner, sds = upper corner
    """
    kind: str
    means: np.ndarray = field(default_factory=lambda: np.empty(0))
    sds: np.ndarray = field(default_factory=lambda: np.empty(0))
    atoms: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    weights: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise PriorError(f"unknown prior kind '{self.kind}'")
        for name in ("means", "sds", "weights"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "atoms", np.atleast_2d(np.asarray(self.atoms, dtype=float)))

        if self.kind == "normal":
            if self.means.shape != self.sds.shape:
                raise PriorError("normal prior needs one sd per mean")
            if not np.all(self.sds > 0):
                raise PriorError("normal prior sds must be positive")
        elif self.kind == "uniform":
            if self.means.shape != self.sds.shape or not np.all(self.sds >= self.means):
                raise PriorError("uniform prior needs lower <= upper per component")
        elif self.kind == "discrete":
            if self.atoms.shape[0] != self.weights.shape[0] or self.atoms.shape[0] == 0:
                raise PriorError("discrete prior needs one weight per atom")
            if np.any(self.weights < 0) or not math.isclose(self.weights.sum(), 1.0, abs_tol=1e-12):
                raise PriorError("discrete prior weights must be non-negative and sum to 1")
        finite = [self.means, self.sds, self.atoms, self.weights]
        if not all(np.all(np.isfinite(a)) for a in finite):
            raise PriorError("prior parameters must be finite")

    @classmethod
    def normal(cls, means, sds) -> "Prior":
        means = np.atleast_1d(np.asarray(means, dtype=float))
        sds = np.broadcast_to(np.asarray(sds, dtype=float), means.shape)
        return cls("normal", means, sds)

    @classmethod
    def point(cls, theta) -> "Prior":
        return cls("point", theta)

    @classmethod
    def discrete(cls, atoms, weights) -> "Prior":
        return cls("discrete", atoms=atoms, weights=weights)

    @classmethod
    def uniform(cls, lower, upper) -> "Prior":
        return cls("uniform", lower, upper)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1] if self.kind == "discrete" else self.means.shape[0]

    @property
    def is_finite_support(self) -> bool:
        return self.kind in ("point", "discrete")

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Atoms and their log weights (finite-support kinds only)"""
        if self.kind == "point":
            return self.means[None, :], np.zeros(1)
        if self.kind == "discrete":
            with np.errstate(divide="ignore"):
                return self.atoms, np.log(self.weights)
        raise PriorError(f"{self.kind} prior has no finite support")

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        if self.kind == "normal":
            return self.means + self.sds * rng.standard_normal((m, self.dim))
        if self.kind == "uniform":
            return rng.uniform(self.means, self.sds, size=(m, self.dim))
        if self.kind == "point":
            return np.tile(self.means, (m, 1))
        idx = rng.choice(self.atoms.shape[0], size=m, p=self.weights)
        return self.atoms[idx]

    def log_pdf(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if self.kind == "normal":
            return float(np.sum(norm.logpdf(theta, self.means, self.sds)))
        if self.kind == "uniform":
            inside = np.all((theta >= self.means) & (theta <= self.sds))
            width = self.sds - self.means
            # zero-width components act as point masses
            return float(-np.sum(np.log(width[width > 0]))) if inside else -np.inf
        atoms, log_w = self.support()
        hits = np.all(atoms == theta, axis=1)
        return float(logsumexp(log_w[hits])) if hits.any() else -np.inf


@dataclass(frozen=True)
class LogBFEstimate:
    value: float
    std_error: float
    n_draws: int
    ess: float

    @property
    def degenerate(self) -> bool:
        return self.ess < ESS_WARNING

    def normalized(self, n: int, T: float) -> float:
        return normalized_log_bf(self, n, T)


def sample_prior(prior: Prior, seed: int, m: int) -> np.ndarray:
    """m iid draws, one per row"""
    if m < 1:
        raise PriorError(f"need at least one draw, got m={m}")
    return prior.sample(rng_for(seed), m)


def _check_prior(prior: Prior, family: ModelSpec) -> None:
    if prior.dim != family.n_params:
        raise PriorError(f"prior has dimension {prior.dim}, model needs {family.n_params}")


def _estimate(log_r: np.ndarray, log_w: np.ndarray | None = None) -> LogBFEstimate:
    """
    log of the mean of exp(log_r), or of the log_w-weighted sum when the
    weights of an exactly enumerated support are given
    """
    m = log_r.shape[0]
    log_terms = log_r if log_w is None else log_r + log_w
    finite = np.isfinite(log_terms)
    if not finite.any():
        raise PriorError("every prior draw has zero likelihood weight")

    if log_w is None:
        value = float(logsumexp(log_r)) - math.log(m)
    else:
        value = float(logsumexp(log_terms))

    # posterior weights over draws or atoms; prior weights included for a finite support
    w = np.exp(log_terms - np.max(log_terms[finite]))
    ess = min(float(w.sum() ** 2 / np.sum(w * w)), float(m))
    std_error = 0.0
    if log_w is None and m > 1:
        std_error = float(np.std(w, ddof=1) / (math.sqrt(m) * np.mean(w)))
    return LogBFEstimate(value, std_error, m, ess)


def _log_marginal(kernel: LikelihoodKernel, prior: Prior, m: int, seed: int,
                  base_log_density: float | None) -> LogBFEstimate:
    if prior.is_finite_support:
        atoms, log_w = prior.support()
        log_r = kernel.log_density(atoms)
        if base_log_density is not None:
            log_r = log_r - base_log_density
        est = _estimate(log_r, log_w)
    else:
        draws = sample_prior(prior, seed, m)
        log_r = kernel.log_density(draws)
        if base_log_density is not None:
            log_r = log_r - base_log_density
        est = _estimate(log_r, None)
    if est.degenerate and est.n_draws >= ESS_WARNING:
        logger.warning("degenerate importance weights: ess %.2f of %d draws", est.ess, est.n_draws)
    return est


def log_marginal_ratio_mc(path: SamplePath, covs: CovariateSet, family: ModelSpec, prior: Prior,
                          base: ModelSpec, m: int, seed: int) -> LogBFEstimate:
    """
    log of the prior average of f_theta / f_base over theta drawn from prior,
    theta parameterizing the family template.
    """
    if m < 1:
        raise PriorError(f"need at least one draw, got m={m}")
    if base.diffusion != family.diffusion:
        raise ModelMismatchError(f"base diffusion {base.diffusion} differs from {family.diffusion}")
    _check_prior(prior, family)
    kernel = LikelihoodKernel(family, path, covs)
    base_value = float(LikelihoodKernel(base, path, covs).log_density(base.theta)[0])
    return _log_marginal(kernel, prior, m, seed, base_value)


def log_marginal_mc(path: SamplePath, covs: CovariateSet, family: ModelSpec, prior: Prior,
                    m: int, seed: int) -> LogBFEstimate:
    """log of the prior average of f_theta (density against the null-drift law)"""
    if m < 1:
        raise PriorError(f"need at least one draw, got m={m}")
    _check_prior(prior, family)
    return _log_marginal(LikelihoodKernel(family, path, covs), prior, m, seed, None)


def combine_estimates(estimates: Sequence[LogBFEstimate]) -> LogBFEstimate:
    """Sum of independent log Bayes factors; standard errors add in quadrature"""
    value = math.fsum(e.value for e in estimates)
    std_error = math.sqrt(math.fsum(e.std_error ** 2 for e in estimates))
    return LogBFEstimate(value, std_error,
                         sum(e.n_draws for e in estimates),
                         min((e.ess for e in estimates), default=0.0))


def system_log_bf(paths: Sequence[SamplePath], covsets: Sequence[CovariateSet],
                  families: Sequence[ModelSpec], bases: Sequence[ModelSpec],
                  priors: Sequence[Prior], m: int, seed: int) -> LogBFEstimate:
    """
    Log Bayes factor of a whole system of independent individuals: the sum of
    per-individual log_marginal_ratio_mc values, individual i drawing its prior
    sample from derive_seed(seed, 2, i).
    """
    n = len(paths)
    if not n == len(covsets) == len(families) == len(bases) == len(priors):
        raise ModelMismatchError("system inputs must have one entry per individual")
    estimates = []
    for i in range(n):
        try:
            estimates.append(log_marginal_ratio_mc(
                paths[i], covsets[i], families[i], priors[i], bases[i], m,
                derive_seed(seed, INDIVIDUAL_STREAM, i)))
        except Exception as exc:
            raise IndividualError(i, exc) from exc
    return combine_estimates(estimates)


def normalized_log_bf(est: LogBFEstimate, n: int, T: float) -> float:
    if n * T == 0:
        raise ZeroDivisionError("normalization needs n*T > 0")
    return est.value / (n * T)

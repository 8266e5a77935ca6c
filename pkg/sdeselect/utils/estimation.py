"""
Parameter estimation: Girsanov negative log-likelihood, simulated annealing
on a bounded box, CKLS Euler quasi-likelihood fitting and BIC.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import norm

from sdeselect.errors import (DegenerateFitError, ModelMismatchError, OptimizationError, SDESelectError,
                              SeriesFormatError)
from sdeselect.models.process import CovariateSet, SamplePath
from sdeselect.models.simulate import RESTART_STREAM, derive_seed, rng_for
from sdeselect.models.spec import DiffusionSpec, DriftSpec, ModelSpec
from sdeselect.utils.girsanov import LikelihoodKernel, log_density

logger = logging.getLogger(__name__)

MAX_START_ATTEMPTS = 100

# multiplicative proposal-scale adaptation per accepted / rejected move
SCALE_GROW = 1.1
SCALE_SHRINK = 0.9
SCALE_MIN = 1e-9
SCALE_MAX = 1.0


@dataclass(frozen=True)
class AnnealingSchedule:
    """
    Geometric cooling schedule. proposal_scale is a fraction of each
    coordinate's box width; t_initial == t_min runs a single greedy level.
    """
    t_initial: float = 1.0
    cooling: float = 0.95
    steps_per_temp: int = 50
    t_min: float = 1e-4
    proposal_scale: float | tuple = 0.05
    restarts: int = 4
    n_jobs: int = 1

    def __post_init__(self):
        if not self.t_initial > 0 or not self.t_min > 0:
            raise ValueError("temperatures must be positive")
        if self.t_min > self.t_initial:
            raise ValueError(f"t_min ({self.t_min}) exceeds t_initial ({self.t_initial})")
        if not 0 < self.cooling < 1:
            raise ValueError(f"cooling must lie in (0, 1), got {self.cooling}")
        if self.steps_per_temp < 1 or self.restarts < 1:
            raise ValueError("steps_per_temp and restarts must be at least 1")
        if np.any(np.asarray(self.proposal_scale) <= 0):
            raise ValueError("proposal_scale must be positive")

    @property
    def greedy(self) -> bool:
        return self.t_initial == self.t_min

    def temperatures(self) -> list[float]:
        if self.greedy:
            return [0.0]
        levels = []
        t = self.t_initial
        while t >= self.t_min:
            levels.append(t)
            t *= self.cooling
        return levels


@dataclass(frozen=True, eq=False)
class FitResult:
    theta_hat: np.ndarray
    neg_loglik: float
    bic: float
    n_obs: int
    k: int
    family: str = ""
    model: ModelSpec | None = None


def bic(neg_loglik: float, k: int, n_obs: int) -> float:
    """2 * neg_loglik + k * log(n_obs)"""
    if n_obs < 1 or k < 0:
        raise ValueError(f"bic needs n_obs >= 1 and k >= 0, got n_obs={n_obs}, k={k}")
    return 2.0 * neg_loglik + k * math.log(n_obs)


def _as_bounds(bounds) -> np.ndarray:
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(bounds)):
        raise ValueError("bounds must be finite")
    if np.any(bounds[:, 1] < bounds[:, 0]):
        raise ValueError("each bound needs lower <= upper")
    return bounds


def reflect(x: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Fold x back into [lower, upper] by mirror reflection at the walls"""
    width = upper - lower
    out = lower.copy()
    free = width > 0
    y = np.mod(x[free] - lower[free], 2.0 * width[free])
    y = np.where(y > width[free], 2.0 * width[free] - y, y)
    out[free] = lower[free] + y
    return out


def _anneal_once(objective: Callable, bounds: np.ndarray, schedule: AnnealingSchedule,
                 seed: int) -> tuple[np.ndarray, float]:
    rng = rng_for(seed)
    lower, upper = bounds[:, 0], bounds[:, 1]
    width = upper - lower

    for attempt in range(MAX_START_ATTEMPTS):
        x = rng.uniform(lower, upper)
        fx = float(objective(x))
        if np.isfinite(fx):
            break
    else:
        raise OptimizationError(
            f"objective non-finite at {MAX_START_ATTEMPTS} resampled starting points")
    if attempt:
        logger.warning("annealing start needed %d resamples", attempt)

    best_x, best_f = x.copy(), fx
    scale = np.broadcast_to(np.asarray(schedule.proposal_scale, dtype=float), x.shape).copy()

    for temp in schedule.temperatures():
        for _ in range(schedule.steps_per_temp):
            proposal = reflect(x + scale * width * rng.standard_normal(x.shape), lower, upper)
            fp = float(objective(proposal))
            u = rng.uniform()
            if not np.isfinite(fp):
                accept = False
            elif fp <= fx:
                accept = True
            else:
                accept = temp > 0 and u < math.exp(-(fp - fx) / temp)
            if accept:
                x, fx = proposal, fp
                scale = np.minimum(scale * SCALE_GROW, SCALE_MAX)
                if fx < best_f:
                    best_x, best_f = x.copy(), fx
            else:
                scale = np.maximum(scale * SCALE_SHRINK, SCALE_MIN)
    logger.debug("restart seed %d finished at %.6g", seed, best_f)
    return best_x, best_f


def simulated_annealing(objective: Callable[[np.ndarray], float], bounds,
                        schedule: AnnealingSchedule | None = None, seed: int = 0) -> np.ndarray:
    """
    Minimize objective over a box. Restarts use seeds derive_seed(seed, 5, j)
    and may run in parallel; the best point wins, lower restart index on ties.
    """
    schedule = schedule or AnnealingSchedule()
    bounds = _as_bounds(bounds)
    seeds = [derive_seed(seed, RESTART_STREAM, j) for j in range(schedule.restarts)]
    if schedule.n_jobs == 1:
        runs = [_anneal_once(objective, bounds, schedule, s) for s in seeds]
    else:
        runs = Parallel(n_jobs=schedule.n_jobs, prefer="threads")(
            delayed(_anneal_once)(objective, bounds, schedule, s) for s in seeds)
    best = min(range(len(runs)), key=lambda j: (runs[j][1], j))
    return runs[best][0]


def neg_loglik(model: ModelSpec, path: SamplePath, covs: CovariateSet) -> float:
    return -log_density(model, path, covs)


def free_parameter_count(bounds) -> int:
    bounds = _as_bounds(bounds)
    return int(np.count_nonzero(bounds[:, 1] > bounds[:, 0]))


def fit_mle(family: ModelSpec, path: SamplePath, covs: CovariateSet, bounds,
            schedule: AnnealingSchedule | None = None, seed: int = 0) -> FitResult:
    """
    Maximum likelihood over the family's theta = (beta, xi) within bounds.
    Degenerate bound pairs hold a coordinate fixed and are not counted in k.
    """
    bounds = _as_bounds(bounds)
    if bounds.shape[0] != family.n_params:
        raise ModelMismatchError(f"{bounds.shape[0]} bounds for {family.n_params} parameters")
    kernel = LikelihoodKernel(family, path, covs)

    def objective(theta):
        with np.errstate(over="ignore", invalid="ignore"):
            return -kernel.log_density(theta)[0]

    theta = simulated_annealing(objective, bounds, schedule, seed)
    nll = float(objective(theta))
    k = free_parameter_count(bounds)
    n_obs = path.grid.n_steps
    return FitResult(theta, nll, bic(nll, k, n_obs), n_obs, k,
                     family.drift.family, family.with_params(theta))


# CKLS: dX = (theta1 + theta2 X) dt + theta3 X^theta4 dW

def _check_ckls_path(path: SamplePath, bounds: np.ndarray) -> None:
    values = path.values
    if np.ptp(values) == 0.0:
        raise DegenerateFitError("constant path carries no information about CKLS parameters")
    power_lo, power_hi = bounds[3]
    integer_power = power_lo == power_hi and float(power_lo).is_integer()
    if not integer_power and np.any(values <= 0):
        bad = int(np.flatnonzero(values <= 0)[0])
        raise SeriesFormatError("CKLS with fractional power needs strictly positive values", row=bad)


def ckls_quasi_loglik(theta, path: SamplePath) -> float:
    """Euler quasi log-likelihood: Gaussian transitions with variance theta3^2 X^(2 theta4) dt"""
    t1, t2, t3, t4 = (float(v) for v in theta)
    x = path.values[:-1]
    dt = path.grid.dt
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        scale = abs(t3) * np.abs(x) ** t4 * math.sqrt(dt)
        terms = norm.logpdf(path.increments, loc=(t1 + t2 * x) * dt, scale=scale)
    if not np.all(np.isfinite(terms)):
        return -np.inf
    return math.fsum(terms)


def fit_ckls(path: SamplePath, bounds, schedule: AnnealingSchedule | None = None,
             seed: int = 0) -> FitResult:
    """
    Fit (theta1..theta4) by Euler quasi-likelihood, then freeze the diffusion
    theta3 |x|^theta4 and refit the drift under the Girsanov likelihood.
    The returned model carries the frozen diffusion and refit drift.
    """
    bounds = _as_bounds(bounds)
    if bounds.shape[0] != 4:
        raise ModelMismatchError(f"CKLS needs 4 bounds, got {bounds.shape[0]}")
    if bounds[2, 0] < 0:
        raise ValueError("CKLS scale theta3 must be bounded below by 0")
    _check_ckls_path(path, bounds)

    def objective(theta):
        return -ckls_quasi_loglik(theta, path)

    theta = simulated_annealing(objective, bounds, schedule, seed)
    nll = float(objective(theta))
    k = free_parameter_count(bounds)
    n_obs = path.grid.n_steps

    frozen = ModelSpec(DriftSpec("ckls", theta[:2]), DiffusionSpec("ckls", theta[2:]))
    covs = CovariateSet.empty(path.grid)
    try:
        drift_fit = fit_mle(frozen, path, covs, np.vstack([bounds[:2], [[1.0, 1.0]]]), schedule, seed)
        model = drift_fit.model
    except SDESelectError as exc:
        logger.warning("drift refit with frozen diffusion failed: %s", exc)
        model = frozen
    logger.info("CKLS fit theta=%s nll=%.6g", np.array2string(theta, precision=6), nll)
    return FitResult(theta, nll, bic(nll, k, n_obs), n_obs, k, "ckls", model)

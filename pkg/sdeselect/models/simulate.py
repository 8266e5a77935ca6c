"""
Seed derivation and Euler-Maruyama simulation.

Every random stream in an experiment is derived from one master seed:
``derive_seed(master, *keys)`` feeds (master, *keys) to a numpy SeedSequence
and reduces its state to a 64-bit integer. Stream keys used across the
package:

    (0,)       main path
    (1, l)     covariate l
    (2, i)     individual i
    (3, r)     replicate r
    (4, code)  covariate mask with integer code
    (5, j)     annealing restart j
    (6,)       true-parameter draw
    (7,)       prior draws
    (8,)       wrong-combination sampling
"""

import logging
import math
from typing import Sequence

import numpy as np

from sdeselect.errors import GridError, SimulationError
from sdeselect.models.process import CovariateSet, SamplePath, TimeGrid
from sdeselect.models.spec import DiffusionSpec, DriftSpec, ModelSpec, phi_values

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1

PATH_STREAM = 0
COVARIATE_STREAM = 1
INDIVIDUAL_STREAM = 2
REPLICATE_STREAM = 3
MASK_STREAM = 4
RESTART_STREAM = 5
TRUTH_STREAM = 6
PRIOR_STREAM = 7
COMBINATION_STREAM = 8


def derive_seed(master: int, *keys: int) -> int:
    """Independent 64-bit seed for the stream identified by keys"""
    entropy = [int(master) & MASK64] + [int(k) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    if keys:
        seed = derive_seed(seed, *keys)
    return np.random.default_rng(int(seed) & MASK64)


def _check_grid(covs: CovariateSet, grid: TimeGrid) -> None:
    if covs.grid != grid:
        raise GridError(f"covariates live on {covs.grid}, simulation grid is {grid}")


def simulate_paths(model: ModelSpec, covs: CovariateSet | None, x0: float,
                   grid: TimeGrid, seeds: Sequence[int]) -> list[SamplePath]:
    """
    Simulate one path per seed, stepping all paths together.

    X_{k+1} = X_k + phi(t_k) b(t_k, X_k) dt + sigma(t_k, X_k) sqrt(dt) eps_k,
    where path j draws its eps from ``rng_for(seeds[j])``.
    """
    covs = covs if covs is not None else CovariateSet.empty(grid)
    _check_grid(covs, grid)
    n = grid.n_steps
    dt = grid.dt
    sqrt_dt = math.sqrt(dt)

    phi = phi_values(model.xi, model.mask, covs)
    beta = np.asarray(model.drift.beta)[None, :]
    eps = np.stack([rng_for(s).standard_normal(n) for s in seeds]) if len(seeds) else np.empty((0, n))

    values = np.empty((len(seeds), n + 1))
    values[:, 0] = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            x = values[:, k]
            sig = model.diffusion.evaluate(x)
            drift = model.drift.evaluate(beta, x, sig)[0]
            values[:, k + 1] = x + phi[k] * drift * dt + sig * sqrt_dt * eps[:, k]
            if not np.all(np.isfinite(values[:, k + 1])):
                raise SimulationError("non-finite state", step=k + 1)
    return [SamplePath(grid, row) for row in values]


def euler_maruyama(model: ModelSpec, covs: CovariateSet | None, x0: float,
                   grid: TimeGrid, seed: int) -> SamplePath:
    return simulate_paths(model, covs, x0, grid, [seed])[0]


def simulate_covariates(cov_sdes: Sequence[tuple[DriftSpec, DiffusionSpec]], grid: TimeGrid,
                        seed: int, z0: float = 0.0) -> CovariateSet:
    """One Euler-Maruyama path per covariate SDE, each on its own derived stream"""
    rows = []
    for l, (drift, diffusion) in enumerate(cov_sdes):
        model = ModelSpec(drift, diffusion)
        path = euler_maruyama(model, None, z0, grid, derive_seed(seed, COVARIATE_STREAM, l))
        rows.append(path.values)
    if not rows:
        return CovariateSet.empty(grid)
    logger.debug("simulated %d covariate series on %s", len(rows), grid)
    return CovariateSet(grid, np.stack(rows))


def drifting_covariate_sdes(rng: np.random.Generator, sd: float = 0.01,
                            p: int = 3) -> list[tuple[DriftSpec, DiffusionSpec]]:
    """
    Covariate SDEs cycling through three families:
    (a1 + a2 z) dt + dW,  a3 dt + dW  and  a4 z dt + dW,  with a_i ~ N(0, sd^2)
    drawn afresh for every covariate.
    """
    unit = DiffusionSpec.constant(1.0)
    sdes = []
    for l in range(p):
        a = rng.normal(0.0, sd, size=2)
        drift = [
            DriftSpec("linear", (a[0], a[1])),
            DriftSpec("linear", (a[0], 0.0)),
            DriftSpec("linear", (0.0, a[0])),
        ][l % 3]
        sdes.append((drift, unit))
    return sdes

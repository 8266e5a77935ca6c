"""
Discretized Ito functionals and Girsanov log densities.

For a model with drift phi*b and diffusion sigma on a grid path X:

    U = sum_k phi b / sigma^2 * (X_{k+1} - X_k)
    V = sum_k phi^2 b^2 / sigma^2 * dt
    log f = U - V / 2

Sums are left-endpoint and use compensated summation (math.fsum) per row.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from sdeselect.errors import DiffusionFloorError, GridError, ModelMismatchError
from sdeselect.models.process import CovariateSet, SamplePath
from sdeselect.models.spec import ModelSpec, phi_matrix

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class GirsanovStats:
    U: float
    V: float
    cross_V: float | None = None


def _row_sums(terms: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(row) for row in np.atleast_2d(terms)])


def check_compatible(path: SamplePath, covs: CovariateSet) -> None:
    if path.grid != covs.grid:
        raise GridError(f"path grid {path.grid} differs from covariate grid {covs.grid}")


class LikelihoodKernel:
    """
    Girsanov statistics of one model family on one path, for any number of
    parameter vectors at once.

    Everything that does not depend on theta (sigma, 1/sigma^2, increments and
    the covariate design) is computed once here.
    """

    def __init__(self, family: ModelSpec, path: SamplePath, covs: CovariateSet):
        check_compatible(path, covs)
        self.family = family
        self.path = path
        self.dt = path.grid.dt
        self.x = path.values[:-1]
        self.dx = path.increments
        self.sigma = family.diffusion.evaluate(self.x)

        low = np.flatnonzero(~(self.sigma >= SIGMA_FLOOR))
        if low.size:
            raise DiffusionFloorError(float(self.sigma[low[0]]), int(low[0]))
        self.inv_sigma2 = 1.0 / (self.sigma * self.sigma)
        self.design = covs.design(family.mask)[:, :-1]

    def drift(self, thetas) -> np.ndarray:
        """phi * b at every left grid point, shape (m, n_steps)"""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if thetas.shape[1] != self.family.n_params:
            raise ModelMismatchError(
                f"theta has {thetas.shape[1]} entries, model needs {self.family.n_params}")
        nb = self.family.n_beta
        phi = phi_matrix(thetas[:, nb:], self.design)
        return phi * self.family.drift.evaluate(thetas[:, :nb], self.x, self.sigma)

    def quad(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """sum of a*b/sigma^2*dt per row"""
        return _row_sums(a * b * self.inv_sigma2 * self.dt)

    def ito(self, a: np.ndarray) -> np.ndarray:
        return _row_sums(a * self.inv_sigma2 * self.dx)

    def stats(self, thetas) -> tuple[np.ndarray, np.ndarray]:
        d = self.drift(thetas)
        return self.ito(d), self.quad(d, d)

    def log_density(self, thetas) -> np.ndarray:
        U, V = self.stats(thetas)
        return U - V / 2.0


def _kernel(model: ModelSpec, path: SamplePath, covs: CovariateSet) -> LikelihoodKernel:
    return LikelihoodKernel(model, path, covs)


def _check_diffusion(m0: ModelSpec, m1: ModelSpec) -> None:
    if m0.diffusion != m1.diffusion:
        raise ModelMismatchError(
            f"models use different diffusions: {m0.diffusion} vs {m1.diffusion}")


def ito_U(model: ModelSpec, path: SamplePath, covs: CovariateSet) -> float:
    return float(_kernel(model, path, covs).stats(model.theta)[0][0])


def quadrature_V(model: ModelSpec, path: SamplePath, covs: CovariateSet) -> float:
    return float(_kernel(model, path, covs).stats(model.theta)[1][0])


def cross_V(m0: ModelSpec, m1: ModelSpec, path: SamplePath, covs: CovariateSet) -> float:
    _check_diffusion(m0, m1)
    k0 = _kernel(m0, path, covs)
    k1 = _kernel(m1, path, covs)
    return float(k0.quad(k0.drift(m0.theta), k1.drift(m1.theta))[0])


def girsanov_stats(m0: ModelSpec, path: SamplePath, covs: CovariateSet,
                   m1: ModelSpec | None = None) -> GirsanovStats:
    """U and V of m0, plus V_{0,1} when a second model is given"""
    U, V = _kernel(m0, path, covs).stats(m0.theta)
    cross = cross_V(m0, m1, path, covs) if m1 is not None else None
    return GirsanovStats(float(U[0]), float(V[0]), cross)


def interval_stats(model: ModelSpec, path: SamplePath, covs: CovariateSet,
                   k0: int, k1: int) -> GirsanovStats:
    """U and V restricted to grid indices k0..k1"""
    return girsanov_stats(model, path.window(k0, k1), covs.window(k0, k1))


def log_density(model: ModelSpec, path: SamplePath, covs: CovariateSet) -> float:
    return float(_kernel(model, path, covs).log_density(model.theta)[0])


def log_density_ratio(m1: ModelSpec, m0: ModelSpec, path: SamplePath, covs: CovariateSet) -> float:
    _check_diffusion(m0, m1)
    return log_density(m1, path, covs) - log_density(m0, path, covs)


def gaussian_transition_oracle(model: ModelSpec, path: SamplePath, covs: CovariateSet) -> float:
    """
    Euler transition log-likelihood of the model minus that of the null drift.

    Same quantity as log_density, reached through Gaussian densities instead
    of the U/V algebra.
    """
    kernel = _kernel(model, path, covs)
    mean_step = kernel.drift(model.theta)[0] * kernel.dt
    scale = kernel.sigma * math.sqrt(kernel.dt)
    drifted = norm.logpdf(kernel.dx, loc=mean_step, scale=scale)
    null = norm.logpdf(kernel.dx, loc=0.0, scale=scale)
    return math.fsum(drifted - null)

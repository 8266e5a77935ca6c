"""
Drift, diffusion and model specifications.

A model's drift is phi_xi(t) * b_beta(t, x) where phi_xi(t) = xi_0 +
sum over included covariates of xi_l * g_l(z_l(t)). Parameters are carried
as one flat vector theta = (beta..., xi...).
"""

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from sdeselect.errors import ModelMismatchError
from sdeselect.models.process import CovariateSet

DRIFT_ARITY = {
    "linear": 2,  # beta_a + beta_b * x
    "ckls": 2,    # theta_1 + theta_2 * x
    "ratio": 1,   # eta(beta) * sigma(t, x), eta(beta) = beta_1
}

DIFFUSION_ARITY = {
    "constant": 1,  # sigma
    "ckls": 2,      # A * |x|^B
}


def _as_params(values, arity: int, what: str) -> tuple:
    params = tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))
    if len(params) != arity:
        raise ModelMismatchError(f"{what} needs {arity} parameters, got {len(params)}")
    if not all(np.isfinite(params)):
        raise ModelMismatchError(f"{what} parameters must be finite, got {params}")
    return params


@dataclass(frozen=True)
class DriftSpec:
    family: str
    beta: tuple

    def __post_init__(self):
        if self.family not in DRIFT_ARITY:
            raise ModelMismatchError(f"unknown drift family '{self.family}'")
        object.__setattr__(self, "beta", _as_params(self.beta, self.arity, f"{self.family} drift"))

    @property
    def arity(self) -> int:
        return DRIFT_ARITY[self.family]

    def evaluate(self, betas: np.ndarray, x: np.ndarray, sig: np.ndarray) -> np.ndarray:
        """b_beta at every grid point for each row of betas, shape (m, n)"""
        betas = np.atleast_2d(betas)
        if self.family == "ratio":
            return betas[:, 0:1] * sig
        return betas[:, 0:1] + betas[:, 1:2] * x


@dataclass(frozen=True)
class DiffusionSpec:
    family: str
    params: tuple

    def __post_init__(self):
        if self.family not in DIFFUSION_ARITY:
            raise ModelMismatchError(f"unknown diffusion family '{self.family}'")
        params = _as_params(self.params, DIFFUSION_ARITY[self.family], f"{self.family} diffusion")
        if params[0] < 0:
            raise ModelMismatchError(f"diffusion scale must be non-negative, got {params[0]}")
        object.__setattr__(self, "params", params)

    @classmethod
    def constant(cls, sigma: float) -> "DiffusionSpec":
        return cls("constant", (sigma,))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.family == "constant":
            return np.full_like(x, self.params[0])
        scale, power = self.params
        return scale * np.abs(x) ** power


@dataclass(frozen=True)
class ModelSpec:
    drift: DriftSpec
    diffusion: DiffusionSpec
    mask: tuple = ()
    xi: tuple = (1.0,)

    def __post_init__(self):
        mask = tuple(int(b) for b in self.mask)
        if any(b not in (0, 1) for b in mask):
            raise ModelMismatchError(f"mask must be binary, got {mask}")
        xi = tuple(float(v) for v in self.xi)
        if len(xi) != 1 + sum(mask):
            raise ModelMismatchError(
                f"xi has {len(xi)} entries, mask {mask} needs {1 + sum(mask)}")
        if not all(np.isfinite(xi)):
            raise ModelMismatchError("xi must be finite")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "xi", xi)

    @property
    def n_beta(self) -> int:
        return self.drift.arity

    @property
    def n_params(self) -> int:
        return self.n_beta + len(self.xi)

    @property
    def theta(self) -> np.ndarray:
        return np.array(self.drift.beta + self.xi)

    def with_params(self, theta: Sequence[float]) -> "ModelSpec":
        theta = tuple(float(v) for v in theta)
        if len(theta) != self.n_params:
            raise ModelMismatchError(f"theta has {len(theta)} entries, model needs {self.n_params}")
        return replace(self, drift=DriftSpec(self.drift.family, theta[:self.n_beta]),
                       xi=theta[self.n_beta:])

    def with_mask(self, mask: Sequence[int]) -> "ModelSpec":
        """Same model re-targeted to another covariate subset; new coefficients start at 0"""
        mask = tuple(int(b) for b in mask)
        old = dict(zip([l for l, b in enumerate(self.mask) if b], self.xi[1:]))
        xi = (self.xi[0],) + tuple(old.get(l, 0.0) for l, b in enumerate(mask) if b)
        return replace(self, mask=mask, xi=xi)

    def with_diffusion(self, diffusion: DiffusionSpec) -> "ModelSpec":
        return replace(self, diffusion=diffusion)


def phi_matrix(xis: np.ndarray, design: np.ndarray) -> np.ndarray:
    """
    phi for each row of xis over the columns of a covariate design.

    Accumulated one covariate at a time with elementwise operations only, so a
    row evaluates to the same bits whatever the batch size.
    """
    xis = np.atleast_2d(xis)
    phi = np.repeat(xis[:, 0:1], design.shape[1], axis=1)
    for j in range(design.shape[0]):
        phi = phi + xis[:, j + 1:j + 2] * design[j]
    return phi


def phi_values(xi: Sequence[float], mask: Sequence[int], covs: CovariateSet) -> np.ndarray:
    """phi_xi at every grid point"""
    xi = np.asarray(xi, dtype=float)
    design = covs.design(mask)
    if xi.shape[0] != 1 + design.shape[0]:
        raise ModelMismatchError(f"xi has {xi.shape[0]} entries, mask needs {1 + design.shape[0]}")
    return phi_matrix(xi, design)[0]


def phi_eval(model: ModelSpec, covs: CovariateSet, k: int) -> float:
    """xi_0 + sum of xi_l * g_l(z_l(t_k)) over the included covariates"""
    k = covs.grid.check_index(k)
    design = covs.design(model.mask)[:, k:k + 1]
    return float(phi_matrix(np.asarray(model.xi), design)[0, 0])

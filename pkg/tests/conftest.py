import pytest

from sdeselect.models.process import TimeGrid, standardize
from sdeselect.models.simulate import drifting_covariate_sdes, euler_maruyama, rng_for, simulate_covariates
from sdeselect.models.spec import DiffusionSpec, DriftSpec, ModelSpec
from sdeselect.utils.estimation import AnnealingSchedule


@pytest.fixture
def grid():
    return TimeGrid(0.0, 5.0, 500)


@pytest.fixture
def covs(grid):
    """Three standardized covariates from the drifting covariate SDEs"""
    sdes = drifting_covariate_sdes(rng_for(11), 0.01, 3)
    return standardize(simulate_covariates(sdes, grid, 11))


@pytest.fixture
def unit():
    return DiffusionSpec.constant(1.0)


@pytest.fixture
def ou(unit):
    return ModelSpec(DriftSpec("linear", (0.0, -1.0)), unit)


@pytest.fixture
def truth(unit):
    """Linear drift scaled by xi0 + 1.5 z1 - 2 z2 + 0.8 z3"""
    return ModelSpec(DriftSpec("linear", (0.5, -1.0)), unit, (1, 1, 1), (1.0, 1.5, -2.0, 0.8))


@pytest.fixture
def truth_path(truth, covs, grid):
    return euler_maruyama(truth, covs, 0.0, grid, 2024)


@pytest.fixture
def fast_schedule():
    return AnnealingSchedule(t_initial=1.0, cooling=0.7, steps_per_temp=20, t_min=1e-3, restarts=2)

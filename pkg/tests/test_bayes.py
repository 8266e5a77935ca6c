import math

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import norm

from sdeselect.errors import IndividualError, ModelMismatchError, PriorError
from sdeselect.models.process import CovariateSet, TimeGrid
from sdeselect.models.simulate import INDIVIDUAL_STREAM, derive_seed, euler_maruyama
from sdeselect.models.spec import DiffusionSpec, DriftSpec, ModelSpec
from sdeselect.utils.bayes import (LogBFEstimate, Prior, combine_estimates, log_marginal_mc,
                                   log_marginal_ratio_mc, normalized_log_bf, sample_prior, system_log_bf)
from sdeselect.utils.girsanov import log_density


class TestPrior:
    def test_normal_sampling_deterministic(self):
        prior = Prior.normal([0.0, 1.0], 0.5)
        np.testing.assert_array_equal(sample_prior(prior, 7, 10), sample_prior(prior, 7, 10))
        assert sample_prior(prior, 7, 10).shape == (10, 2)

    @pytest.mark.parametrize("build", [
        lambda: Prior.normal([0.0], [0.0]),
        lambda: Prior.uniform([1.0], [0.0]),
        lambda: Prior.discrete([[0.0], [1.0]], [0.5, 0.6]),
        lambda: Prior("cauchy"),
        lambda: Prior.point([np.nan]),
    ])
    def test_invalid(self, build):
        with pytest.raises(PriorError):
            build()

    def test_log_pdf(self):
        assert Prior.normal([0.0], [2.0]).log_pdf([1.0]) == pytest.approx(norm.logpdf(1.0, 0.0, 2.0))
        assert Prior.uniform([0.0, 1.0], [2.0, 1.0]).log_pdf([1.0, 1.0]) == pytest.approx(-math.log(2.0))
        assert Prior.uniform([0.0], [2.0]).log_pdf([3.0]) == -np.inf
        assert Prior.discrete([[0.0], [1.0]], [0.25, 0.75]).log_pdf([1.0]) == pytest.approx(math.log(0.75))

    def test_draw_count(self):
        with pytest.raises(PriorError):
            sample_prior(Prior.normal([0.0], 1.0), 0, 0)


class TestMarginal:
    """Monte Carlo prior averages of the Girsanov likelihood"""

    @pytest.fixture
    def ratio_family(self):
        return ModelSpec(DriftSpec("ratio", (0.0,)), DiffusionSpec.constant(1.0))

    @pytest.fixture
    def ratio_path(self, ratio_family, grid):
        return euler_maruyama(ratio_family.with_params([0.8, 1.0]), None, 0.0, grid, 5)

    def test_truth_against_itself(self, truth, covs, truth_path):
        family = truth.with_params(np.zeros(truth.n_params))
        est = log_marginal_ratio_mc(truth_path, covs, family, Prior.point(truth.theta), truth, 100, 1)
        assert est.value == 0.0
        assert est.std_error == 0.0

    def test_discrete_prior_enumerated(self, truth, covs, truth_path):
        atoms = np.array([truth.theta, truth.theta + 0.1, truth.theta - 0.2])
        weights = np.array([0.5, 0.3, 0.2])
        est = log_marginal_mc(truth_path, covs, truth, Prior.discrete(atoms, weights), 1, 0)
        expected = logsumexp([log_density(truth.with_params(a), truth_path, covs) for a in atoms], b=weights)
        assert est.value == pytest.approx(expected, abs=1e-9)
        assert est.std_error == 0.0

    @pytest.mark.parametrize("weights", [[0.999, 0.001], [0.5, 0.5], [0.2, 0.8]])
    def test_discrete_ess_uses_prior_weights(self, truth, covs, truth_path, weights):
        # identical atoms share one likelihood, so the posterior weights are the prior weights
        atoms = np.array([truth.theta, truth.theta])
        est = log_marginal_mc(truth_path, covs, truth, Prior.discrete(atoms, weights), 1, 0)
        w = np.asarray(weights)
        assert est.ess == pytest.approx(1.0 / np.sum(w * w), rel=1e-12)
        assert est.n_draws == 2
        assert est.value == pytest.approx(log_density(truth, truth_path, covs), abs=1e-9)

    def test_uniform_closed_form(self, ratio_family, ratio_path, grid):
        """
        With b = beta sigma and unit diffusion, f_beta = exp(beta D - beta^2 T / 2)
        where D = X_T - X_0; a uniform prior on [a, b] integrates in closed form.
        """
        a, b = 0.0, 2.0
        T = grid.horizon
        D = ratio_path.values[-1] - ratio_path.values[0]
        mu = D / T
        exact = (D * D / (2 * T) + 0.5 * math.log(2 * math.pi / T) - math.log(b - a)
                 + math.log(norm.cdf((b - mu) * math.sqrt(T)) - norm.cdf((a - mu) * math.sqrt(T))))
        est = log_marginal_mc(ratio_path, CovariateSet.empty(grid), ratio_family,
                              Prior.uniform([a, 1.0], [b, 1.0]), 20_000, 3)
        assert abs(est.value - exact) <= 4 * est.std_error + 1e-3
        assert 0 < est.ess <= 20_000

    def test_same_seed_same_estimate(self, ratio_family, ratio_path, grid):
        empty = CovariateSet.empty(grid)
        prior = Prior.normal([1.0, 1.0], [0.5, 0.1])
        a = log_marginal_mc(ratio_path, empty, ratio_family, prior, 200, 9)
        b = log_marginal_mc(ratio_path, empty, ratio_family, prior, 200, 9)
        assert a == b

    def test_ratio_is_marginal_minus_base(self, ratio_family, ratio_path, grid):
        empty = CovariateSet.empty(grid)
        prior = Prior.normal([1.0, 1.0], [0.5, 0.1])
        base = ratio_family.with_params([0.8, 1.0])
        ratio = log_marginal_ratio_mc(ratio_path, empty, ratio_family, prior, base, 300, 4)
        marginal = log_marginal_mc(ratio_path, empty, ratio_family, prior, 300, 4)
        assert ratio.value == pytest.approx(marginal.value - log_density(base, ratio_path, empty), abs=1e-9)

    def test_prior_dimension_checked(self, truth, covs, truth_path):
        with pytest.raises(PriorError):
            log_marginal_mc(truth_path, covs, truth, Prior.normal([0.0, 0.0], 1.0), 10, 0)

    def test_base_diffusion_checked(self, truth, covs, truth_path):
        base = truth.with_diffusion(DiffusionSpec.constant(3.0))
        with pytest.raises(ModelMismatchError):
            log_marginal_ratio_mc(truth_path, covs, truth, Prior.point(truth.theta), base, 10, 0)

    def test_degenerate_weights_flagged(self, truth, covs, truth_path, caplog):
        prior = Prior.normal(truth.theta, 5.0)
        est = log_marginal_mc(truth_path, covs, truth, prior, 50, 0)
        assert est.ess <= 50
        if est.degenerate:
            assert "degenerate" in caplog.text


class TestCombination:
    def test_sum_and_quadrature(self):
        est = combine_estimates([LogBFEstimate(-1.0, 0.3, 10, 8.0), LogBFEstimate(-2.5, 0.4, 10, 9.0)])
        assert est.value == -3.5
        assert est.std_error == pytest.approx(0.5)
        assert est.ess == 8.0

    def test_normalized(self):
        est = LogBFEstimate(-30.0, 1.0, 10, 10.0)
        assert normalized_log_bf(est, 3, 5.0) == -2.0
        assert est.normalized(3, 5.0) == -2.0
        with pytest.raises(ZeroDivisionError):
            normalized_log_bf(est, 0, 5.0)

    def test_system_sums_individuals(self, grid, unit):
        family = ModelSpec(DriftSpec("linear", (0.0, 0.0)), unit)
        truths = [family.with_params([0.5, -1.0, 1.0]), family.with_params([0.0, -2.0, 1.5])]
        paths = [euler_maruyama(t, None, 0.0, grid, i) for i, t in enumerate(truths)]
        empties = [CovariateSet.empty(grid)] * 2
        priors = [Prior.normal(t.theta, 0.3) for t in truths]
        total = system_log_bf(paths, empties, [family] * 2, truths, priors, 100, 42)
        parts = [log_marginal_ratio_mc(paths[i], empties[i], family, priors[i], truths[i], 100,
                                       derive_seed(42, INDIVIDUAL_STREAM, i)) for i in range(2)]
        assert total.value == pytest.approx(parts[0].value + parts[1].value, abs=1e-12)

    def test_failing_individual_named(self, grid, unit):
        family = ModelSpec(DriftSpec("linear", (0.0, 0.0)), unit)
        paths = [euler_maruyama(family, None, 0.0, grid, i) for i in range(2)]
        priors = [Prior.point(family.theta), Prior.point([0.0])]
        with pytest.raises(IndividualError) as info:
            system_log_bf(paths, [CovariateSet.empty(grid)] * 2, [family] * 2, [family] * 2, priors, 10, 0)
        assert info.value.index == 1

    def test_one_entry_per_individual(self, grid, unit):
        family = ModelSpec(DriftSpec("linear", (0.0, 0.0)), unit)
        with pytest.raises(ModelMismatchError):
            system_log_bf([], [CovariateSet.empty(grid)], [family], [family], [], 10, 0)

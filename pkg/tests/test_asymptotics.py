import math

import numpy as np
import pytest

from sdeselect.errors import GridError, ModelMismatchError, ReplicateError, SimulationError
from sdeselect.models.process import CovariateSet, TimeGrid
from sdeselect.models.simulate import simulate_paths
from sdeselect.models.spec import DiffusionSpec, DriftSpec, ModelSpec
from sdeselect.utils.asymptotics import (DeltaSearchSpace, KappaSpec, SweepSetup, convergence_sweep,
                                         covariate_design_check, delta_inf, delta_infinity_estimate,
                                         interval_divergence_special, kl_bar_infinity, kl_bar_lower_bound,
                                         kl_rate_monte_carlo, kl_rate_special, phi_bar, phi_bar_continuity_bound,
                                         phi_bar_cross, uv_time_average_diagnostic)
from sdeselect.utils.bayes import Prior
from sdeselect.utils.girsanov import cross_V, ito_U


@pytest.fixture
def ratio():
    return ModelSpec(DriftSpec("ratio", (0.0,)), DiffusionSpec.constant(1.0))


class TestPhiBar:
    def test_constant_phi(self, covs):
        pb = phi_bar((2.0,), covs, (0, 0, 0))
        assert pb.phi1 == pytest.approx(2.0)
        assert pb.phi2 == pytest.approx(4.0)

    def test_standardized_covariate(self):
        grid = TimeGrid(0.0, 4.0, 4)
        covs = CovariateSet(grid, [[1.0, -1.0, 1.0, -1.0, 0.0]])
        pb = phi_bar((1.0, 2.0), covs, (1,))
        # left values phi = 3, -1, 3, -1
        assert pb.phi1 == pytest.approx(1.0)
        assert pb.phi2 == pytest.approx(5.0)
        assert phi_bar_cross((1.0, 2.0), (1.0,), covs, (1,), (0,)) == pytest.approx(1.0)

    def test_continuity_bound_holds(self, covs):
        rng = np.random.default_rng(42)
        xi = np.array([1.0, 0.5, -0.5, 0.2])
        eps = 0.05
        bound = phi_bar_continuity_bound(xi, covs, eps)
        base = phi_bar(xi, covs)
        for _ in range(200):
            moved = phi_bar(xi + rng.uniform(-eps, eps, size=4), covs)
            assert abs(moved.phi1 - base.phi1) <= bound.phi1 + 1e-12
            assert abs(moved.phi2 - base.phi2) <= bound.phi2 + 1e-12


class TestDivergence:
    """Closed forms in the constant-ratio family"""

    def test_rate_at_point(self, covs):
        k = 100
        z = covs.series[:, k]
        xi0, xi1 = (1.0, 0.5, 0.0, 0.0), (0.5, 0.0, 1.0, 0.0)
        expected = 0.5 * ((1.0 + 0.5 * z[0]) * 2.0 - (0.5 + z[1]) * 3.0) ** 2
        assert kl_rate_special(xi0, xi1, 2.0, 3.0, covs, k) == pytest.approx(expected)

    def test_identical_models(self, covs):
        xi = (1.0, 0.3, -0.2, 0.1)
        assert kl_rate_special(xi, xi, 1.5, 1.5, covs, 42) == 0.0

    def test_interval_derivative(self, covs):
        """The accumulated divergence over one grid cell divided by dt is the rate at its left end"""
        xi0, xi1 = (1.0, 0.5, 0.0, 0.0), (0.5, 0.0, 1.0, 0.0)
        grid = covs.grid
        k = 250
        acc = interval_divergence_special(xi0, xi1, 2.0, 3.0, covs, grid.times[k], grid.dt)
        assert acc / grid.dt == pytest.approx(kl_rate_special(xi0, xi1, 2.0, 3.0, covs, k), rel=1e-9)

    def test_interval_outside_grid(self, covs):
        with pytest.raises(GridError):
            interval_divergence_special((1.0, 0, 0, 0), (1.0, 0, 0, 0), 1.0, 1.0, covs, 4.9, 0.5)

    def test_rate_non_negative_everywhere(self, covs):
        rng = np.random.default_rng(42)
        for _ in range(40):
            mask0 = tuple(int(b) for b in rng.integers(0, 2, size=3))
            mask1 = tuple(int(b) for b in rng.integers(0, 2, size=3))
            xi0, xi1 = rng.normal(size=1 + sum(mask0)), rng.normal(size=1 + sum(mask1))
            eta0, eta1 = rng.normal(size=2)
            rates = [kl_rate_special(xi0, xi1, eta0, eta1, covs, k, mask0, mask1)
                     for k in range(covs.grid.n_steps + 1)]
            assert min(rates) >= 0.0
            assert kl_rate_special(xi0, xi0, eta0, eta0, covs, int(rng.integers(0, 501)), mask0, mask0) == 0.0

    def test_lower_bound(self, covs):
        rng = np.random.default_rng(42)
        kappas = KappaSpec.from_ratio()
        for _ in range(10_000):
            xi0, xi1 = rng.normal(size=4), rng.normal(size=4)
            b0, b1 = rng.normal(size=1), rng.normal(size=1)
            p0, p1 = phi_bar(xi0, covs), phi_bar(xi1, covs)
            kl = kl_bar_infinity(p0, p1, phi_bar_cross(xi0, xi1, covs), kappas, b0, b1)
            low = kl_bar_lower_bound(p0, p1, kappas, b0, b1)
            assert kl >= low - 1e-10
            assert low >= 0

    def test_kl_matches_interval_total(self, covs):
        xi0, xi1 = (1.0, 0.5, 0.0, 0.0), (0.5, 0.0, 1.0, 0.0)
        kappas = KappaSpec.from_ratio()
        kl = kl_bar_infinity(phi_bar(xi0, covs), phi_bar(xi1, covs), phi_bar_cross(xi0, xi1, covs),
                             kappas, np.array([2.0]), np.array([3.0]))
        total = interval_divergence_special(xi0, xi1, 2.0, 3.0, covs, 0.0, covs.grid.horizon)
        assert kl == pytest.approx(total / covs.grid.horizon, rel=1e-9)

    def test_negative_kappa_rejected(self, covs):
        pb = phi_bar((1.0,), covs, (0, 0, 0))
        with pytest.raises(ValueError):
            kl_bar_infinity(pb, pb, 1.0, KappaSpec(-1.0, 1.0, 0.0), 0.0, 0.0)


class TestMonteCarloRate:
    def test_agrees_with_closed_form(self, covs):
        m0 = ModelSpec(DriftSpec("ratio", (1.0,)), DiffusionSpec.constant(1.0), (1, 0, 0), (1.0, 0.5))
        m1 = ModelSpec(DriftSpec("ratio", (2.0,)), DiffusionSpec.constant(1.0), (0, 1, 0), (0.5, 1.0))
        k, h = 200, 20
        rate, se = kl_rate_monte_carlo(m0, m1, covs, 0.0, k, h, 2000, 42)
        grid = covs.grid
        exact = interval_divergence_special(m0.xi, m1.xi, 1.0, 2.0, covs, grid.times[k], h * grid.dt,
                                            m0.mask, m1.mask) / (h * grid.dt)
        assert abs(rate - exact) <= 4 * se

    def test_diffusions_must_match(self, covs):
        m0 = ModelSpec(DriftSpec("ratio", (1.0,)), DiffusionSpec.constant(1.0), (0, 0, 0), (1.0,))
        with pytest.raises(ModelMismatchError):
            kl_rate_monte_carlo(m0, m0.with_diffusion(DiffusionSpec.constant(2.0)), covs, 0.0, 0, 5, 10, 0)


class TestDeltaInf:
    def test_interval_prior(self):
        """Truth eta0 = 1, candidates beta in [3, 4] at phi = 1: delta = (3 - 1)^2 / 2"""
        space = DeltaSearchSpace(((3.0, 4.0),), ((1.0, 1.0),))
        est = delta_inf(space, (1.0,), 1.0)
        assert est.delta == pytest.approx(2.0, abs=1e-6)
        assert est.argmin["beta"][0] == pytest.approx(3.0, abs=1e-6)

    def test_reachable_truth(self):
        space = DeltaSearchSpace(((0.5, 2.0),), ((0.0, 2.0), (-1.0, 1.0)), ((-2.0, 2.0),))
        est = delta_inf(space, (1.0, 0.5), 1.0, mask0=(1,), mask1=(1,))
        assert est.delta == pytest.approx(0.0, abs=1e-6)

    def test_missing_covariate(self):
        """Without z1 the candidate cannot follow phi0 = z at z = +-2"""
        space = DeltaSearchSpace(((1.0, 1.0),), ((-1.0, 1.0),), ((-2.0, 2.0),))
        est = delta_inf(space, (0.0, 1.0), 1.0, mask0=(1,), mask1=(0,))
        # inf over z of (z - c)^2 / 2 is 0 for any c reachable by z
        assert est.delta == pytest.approx(0.0, abs=1e-6)

    def test_disjoint_ranges(self):
        """phi0 eta0 = 1 + z lies in [0, 0.5]; c beta lies in [1, 3]; delta = 0.5^2 / 2"""
        space = DeltaSearchSpace(((2.0, 3.0),), ((0.5, 1.0),), ((-1.0, -0.5),))
        est = delta_inf(space, (1.0, 1.0), 1.0, mask0=(1,), mask1=(0,))
        assert est.delta == pytest.approx(0.125, abs=1e-9)
        assert est.argmin["z"][0] == pytest.approx(-0.5, abs=1e-6)

    def test_more_rounds_never_increase(self):
        space = DeltaSearchSpace(((0.5, 1.5),), ((0.0, 1.0), (0.0, 0.3)), ((0.0, 1.0), (-1.0, 1.0)))
        values = [delta_inf(space, (3.0, 1.0), 1.0, mask0=(1, 0), mask1=(0, 1), resolution=4,
                            max_rounds=rounds).delta for rounds in range(1, 5)]
        assert np.all(np.diff(values) <= 0.0)
        # phi1 eta1 <= 1.5 * 1.3 against phi0 >= 3
        assert values[-1] == pytest.approx(0.5 * (3.0 - 1.95) ** 2, abs=1e-4)

    def test_superset_masks_never_increase(self):
        """Truth phi0 = 3 + z1 with z in [0, 1]^2; candidates have coefficients in [0, 1]"""
        space_for = {mask: DeltaSearchSpace(((1.0, 1.0),), ((0.0, 1.0),) * (1 + sum(mask)),
                                            ((0.0, 1.0), (0.0, 1.0)))
                     for mask in [(0, 0), (1, 0), (0, 1), (1, 1)]}
        delta = {mask: delta_inf(space, (3.0, 1.0), 1.0, mask0=(1, 0), mask1=mask, resolution=8).delta
                 for mask, space in space_for.items()}
        expected = {(0, 0): 2.0, (1, 0): 2.0, (0, 1): 0.5, (1, 1): 0.5}
        for mask, value in expected.items():
            assert delta[mask] == pytest.approx(value, abs=1e-6)
        for small in delta:
            for large in delta:
                if all(s <= l for s, l in zip(small, large)):
                    assert delta[large] <= delta[small] + 1e-9

    def test_unbounded_space(self):
        with pytest.raises(ValueError):
            DeltaSearchSpace(((0.0, np.inf),), ((1.0, 1.0),))

    def test_mask_mismatch(self):
        space = DeltaSearchSpace(((1.0, 2.0),), ((1.0, 1.0),), ((-1.0, 1.0),))
        with pytest.raises(ModelMismatchError):
            delta_inf(space, (1.0,), 1.0, mask0=(0,), mask1=(1,))

    def test_running_mean(self):
        est = delta_infinity_estimate([1.0, 3.0, 2.0])
        np.testing.assert_allclose(est.trajectory, [1.0, 2.0, 2.0])
        assert est.value == 2.0
        with pytest.raises(ValueError):
            delta_infinity_estimate([])


class TestSweeps:
    def test_table_shape(self, ratio):
        setup = SweepSetup(ratio, ratio.with_params([1.0, 1.0]), Prior.uniform([3.0, 1.0], [4.0, 1.0]),
                           (1.0, 2.0), 0.1, 3, 50, 7, delta_target=2.0)
        result = convergence_sweep(setup)
        assert list(result.table.columns) == ["T", "mean", "se", "var", "delta_target", "gap"]
        assert list(result.table["T"]) == [1.0, 2.0]
        assert (result.table["se"] >= 0).all()
        assert result.mean_converging in (True, False)

    def test_single_replicate(self, ratio):
        setup = SweepSetup(ratio, ratio.with_params([1.0, 1.0]), Prior.uniform([3.0, 1.0], [4.0, 1.0]),
                           (1.0,), 0.1, 1, 20, 7)
        result = convergence_sweep(setup)
        assert math.isnan(result.table["se"].iloc[0])
        assert result.variance_persistent is None
        assert result.mean_converging is None

    def test_horizon_multiple_of_dt(self, ratio):
        setup = SweepSetup(ratio, ratio, Prior.uniform([3.0, 1.0], [4.0, 1.0]), (1.05,), 0.1, 2, 10, 0)
        with pytest.raises(GridError):
            convergence_sweep(setup)

    @pytest.mark.slow
    def test_mean_converges_to_minus_delta(self, ratio):
        """Gap between the replicate mean of (1/T) log I_T and -delta shrinks with T"""
        setup = SweepSetup(ratio, ratio.with_params([1.0, 1.0]), Prior.uniform([3.0, 1.0], [4.0, 1.0]),
                           (5.0, 20.0, 80.0), 0.05, 100, 500, 99, delta_target=2.0)
        result = convergence_sweep(setup)
        assert result.mean_converging
        gaps = result.table["gap"].to_numpy()
        T = result.table["T"].to_numpy()
        assert gaps[-1] <= 2 * math.log(2 * T[-1]) / T[-1]

    @pytest.mark.slow
    def test_random_truth_variance_persists(self, ratio):
        setup = SweepSetup(ratio, ratio.with_params([1.0, 1.0]), Prior.uniform([3.0, 1.0], [4.0, 1.0]),
                           (5.0, 20.0, 80.0), 0.05, 100, 500, 99,
                           truth_prior=Prior.uniform([0.0, 1.0], [2.0, 1.0]))
        assert convergence_sweep(setup).variance_persistent

    def test_uv_diagnostic(self):
        grid = TimeGrid(0.0, 4.0, 80)
        rng = np.random.default_rng(42)
        covs = CovariateSet(grid, rng.normal(size=(1, 81)))
        m0 = ModelSpec(DriftSpec("ratio", (1.0,)), DiffusionSpec.constant(1.0), (1,), (1.0, 0.5))
        m1 = ModelSpec(DriftSpec("ratio", (2.0,)), DiffusionSpec.constant(1.0), (0,), (0.8,))
        table = uv_time_average_diagnostic(m0, m1, covs, 0.0, (2.0, 4.0), 400, 3)
        assert len(table) == 8
        for row in table.itertuples():
            if row.statistic == "U1/T":
                assert row.gap <= 4 * row.se + 1e-12
            else:
                # V statistics do not depend on the path in this family
                assert row.gap <= 1e-12 * max(1.0, abs(row.target))


    @pytest.mark.parametrize("n_jobs", [1, 2])
    def test_diverging_replicate_named(self, unit, n_jobs):
        family = ModelSpec(DriftSpec("linear", (0.0, 0.0)), unit)
        # x grows a thousandfold per step and overflows well before T = 20
        setup = SweepSetup(family, family.with_params([0.0, 1e4, 1.0]),
                           Prior.uniform([0.0, -1.0, 1.0], [1.0, 0.0, 1.0]), (20.0,), 0.1, 2, 10, 7, x0=1.0, n_jobs=n_jobs)
        with pytest.raises(ReplicateError) as info:
            convergence_sweep(setup)
        assert info.value.replicate in (0, 1)
        assert isinstance(info.value.cause, SimulationError)

    @pytest.mark.slow
    def test_uv_diagnostic_long_horizon(self):
        """Three random constant-ratio pairs at T = 80 with 200 replicates"""
        grid = TimeGrid(0.0, 80.0, 1600)
        rng = np.random.default_rng(42)
        for instance in range(3):
            covs = CovariateSet(grid, rng.normal(size=(2, 1601)))
            m0 = ModelSpec(DriftSpec("ratio", (rng.uniform(0.5, 2.0),)), DiffusionSpec.constant(1.0), (1, 0),
                           (1.0, rng.normal()))
            m1 = ModelSpec(DriftSpec("ratio", (rng.uniform(0.5, 2.0),)), DiffusionSpec.constant(1.0), (0, 1),
                           (1.0, rng.normal()))
            table = uv_time_average_diagnostic(m0, m1, covs, 0.0, (5.0, 20.0, 80.0), 200, instance)
            assert len(table) == 12
            u1 = table.loc[table["statistic"] == "U1/T"]
            assert (u1["gap"] <= 4 * u1["se"]).all()
            assert u1["se"].iloc[-1] < u1["se"].iloc[0]
            others = table.loc[table["statistic"] != "U1/T"]
            assert (others["gap"] <= 1e-9 * np.maximum(1.0, others["target"].abs())).all()


class TestMartingaleTerm:
    """Under m0, U1 - V01 is a martingale whose time average vanishes like T^(-1/2)"""

    def test_time_average_decays(self, unit):
        m0 = ModelSpec(DriftSpec("linear", (0.0, -1.0)), unit)
        m1 = ModelSpec(DriftSpec("linear", (0.5, -0.5)), unit)
        grid = TimeGrid(0.0, 80.0, 1600)
        paths = simulate_paths(m0, None, 0.0, grid, range(200))
        spreads = []
        for horizon in (5.0, 20.0, 80.0):
            k = grid.index_of(horizon)
            empty = CovariateSet.empty(grid.window(0, k))
            terms = np.array([(ito_U(m1, p.window(0, k), empty) - cross_V(m0, m1, p.window(0, k), empty)) / horizon
                              for p in paths])
            assert abs(terms.mean()) <= 4 * terms.std(ddof=1) / math.sqrt(terms.size)
            spreads.append(terms.std(ddof=1))
        assert spreads[0] > spreads[1] > spreads[2]
        # quadrupling T halves the spread
        assert spreads[2] < 0.35 * spreads[0]


class TestDesignCheck:
    def test_iid_covariates_settle(self):
        rng = np.random.default_rng(42)
        grid = TimeGrid(0.0, 1.0, 10)
        covsets = [CovariateSet(grid, rng.normal(size=(2, 11))) for _ in range(256)]
        report = covariate_design_check(covsets, [0, 5, 10])
        assert report.prefix_means.shape == (256, 2, 3)
        assert report.prefix_cross.shape == (256, 2, 2, 3)
        assert report.slope < 0

    def test_needs_two_individuals(self, covs):
        with pytest.raises(ValueError):
            covariate_design_check([covs], [0])

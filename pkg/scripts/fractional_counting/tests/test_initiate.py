"""
Tests for census-year initiation: placement fit, θ estimators, dual-system
estimates and the end-to-end initiation.
"""

import unittest
from dataclasses import replace

import numpy as np
import pytest

from ..config import InitiationConfig, ScenarioConfig
from ..estimation.audit import draw_audit_sample, erroneous_indicator
from ..estimation.base import (
    DualSystemError, EmptyCoreError, EstimationError, ModelError, UnderIdentifiedError, counters_total
)
from ..estimation.initiate import (
    ThetaContext, ThetaEstimator, dual_system_estimate, estimate_theta_hypercube, estimate_theta_sample,
    estimate_theta_subset, fit_placement, initiate, placement_counters, theta_registry
)
from ..simulation.base import RecordLabel
from ..simulation.register import derive_pd, draw_choice_records, simulate_census
from ..simulation.world import generate_world
from ..utils.rng import make_rng

TRUE_PLACEMENT = np.array([1.5, 1.0, 2.0, -1.0, 0.5])
TRUE_ERRONEOUS = np.array([-2.0, 1.0, 1.0])


class TestDualSystemEstimate(unittest.TestCase):
    """Test capture-recapture estimates."""

    def test_lincoln_petersen(self):
        dse = dual_system_estimate(100, 80, 40)
        self.assertEqual(dse.method, "lincoln_petersen")
        self.assertAlmostEqual(dse.n_hat, 200.0)
        self.assertAlmostEqual(dse.variance, 100 * 80 * 60 * 40 / 40 ** 3)

    def test_chapman(self):
        dse = dual_system_estimate(100, 80, 40, chapman=True)
        self.assertAlmostEqual(dse.n_hat, 101 * 81 / 41 - 1)
        self.assertAlmostEqual(dse.variance, 101 * 81 * 60 * 40 / (41 ** 2 * 42))

    def test_no_overlap(self):
        with self.assertRaises(DualSystemError):
            dual_system_estimate(10, 10, 0)
        self.assertAlmostEqual(dual_system_estimate(10, 10, 0, chapman=True).n_hat, 120.0)

    def test_impossible_counts(self):
        with self.assertRaises(DualSystemError):
            dual_system_estimate(10, 5, 6)
        with self.assertRaises(DualSystemError):
            dual_system_estimate(-1, 5, 1)


class TestFitPlacement:
    """Test the census-year placement fit."""

    def test_fit(self):
        core = draw_choice_records(np.random.default_rng(0), TRUE_PLACEMENT, 2000, 1)
        state = fit_placement(core)
        assert state.kind == "placement"
        assert state.beta_hat.shape == (5,)
        assert state.sigma_hat.shape == (5, 5)
        assert np.all(np.abs(state.beta_hat - TRUE_PLACEMENT) < 4.5 * state.standard_errors())
        assert state.metadata["n_obs"] == 2000
        assert not state.metadata["separation"]

    def test_empty_core(self):
        with pytest.raises(EmptyCoreError):
            fit_placement([])

    def test_unlabelled_core(self):
        core = draw_choice_records(np.random.default_rng(1), TRUE_PLACEMENT, 10, 1)
        core[3] = replace(core[3], label=None)
        with pytest.raises(ModelError):
            fit_placement(core)

    def test_under_identified(self):
        core = draw_choice_records(np.random.default_rng(2), TRUE_PLACEMENT, 3, 1)
        with pytest.raises(UnderIdentifiedError):
            fit_placement(core)

    def test_separation_is_ridge_bounded(self):
        core = draw_choice_records(np.random.default_rng(3), TRUE_PLACEMENT, 40, 1)
        # every record at its first address with the highest agreement: perfectly separable
        separated = []
        for r in core:
            features = r.address_features.copy()
            features[:, 0] = 0.0
            features[0, 0] = 1.0
            separated.append(replace(r, address_features=features, label=RecordLabel(True, 0)))
        state = fit_placement(separated, ridge=1e-4)
        assert np.all(np.isfinite(state.beta_hat))

    def test_placement_counters(self):
        core = draw_choice_records(np.random.default_rng(4), TRUE_PLACEMENT, 300, 1)
        state = fit_placement(core)
        counters = placement_counters(state, core[:5], theta=[0.1] * 5)
        for record, counter in zip(core[:5], counters):
            assert counter.mu.size == record.q
            assert counter.theta == 0.1


class TestThetaEstimators:
    """Test the three erroneous-record estimators and their registry."""

    def setup_method(self):
        records = draw_choice_records(np.random.default_rng(5), TRUE_ERRONEOUS, 400, 1, kind="erroneous")
        # the first 100 in-scope records form the census core
        core_ids = [r.id for r in records if r.label.in_scope][:100]
        self.records = [replace(r, core=r.id in core_ids, label=r.label if r.id in core_ids else None,
                                stratum=r.id % 2)
                        for r in records]
        self.truth = {r.id: not lab.label.in_scope for r, lab in zip(self.records, records)}

    def test_subset_labels(self):
        result = estimate_theta_subset(self.records, n_hat=250.0)
        assert result.method == "subset"
        assert result.theta.shape == (400,)
        assert np.all((result.theta >= 0) & (result.theta <= 1))
        assert result.labels.sum() == 400 - 250
        assert not any(result.labels[k] for k, r in enumerate(self.records) if r.core)
        assert result.model.kind == "erroneous"

    def test_subset_ranks_by_score(self):
        scores = np.arange(400, dtype=float)
        result = estimate_theta_subset(self.records, n_hat=250.0, score=scores)
        non_core = [k for k, r in enumerate(self.records) if not r.core]
        # the lowest-scoring non-core records are the erroneous ones
        assert set(np.flatnonzero(result.labels)) == set(non_core[:150])

    def test_subset_n_hat_below_core(self):
        with pytest.raises(EstimationError):
            estimate_theta_subset(self.records, n_hat=50.0)

    def test_subset_n_hat_above_dataset(self):
        result = estimate_theta_subset(self.records, n_hat=1000.0)
        assert result.warnings
        assert result.labels.sum() == 0

    def test_hypercube(self):
        sizes = {h: sum(1 for r in self.records if r.stratum == h) for h in (0, 1)}
        result = estimate_theta_hypercube(self.records, {0: 0.9 * sizes[0], 1: 2.0 * sizes[1]})
        assert result.model is None
        np.testing.assert_allclose(result.theta[[r.stratum == 0 for r in self.records]], 0.1)
        np.testing.assert_allclose(result.theta[[r.stratum == 1 for r in self.records]], 0.0)

    def test_hypercube_missing_and_extra_cells(self):
        result = estimate_theta_hypercube(self.records, {0: 10.0, 7: 5.0})
        np.testing.assert_allclose(result.theta[[r.stratum == 1 for r in self.records]], 0.0)
        assert len(result.warnings) == 2

    def test_sample(self):
        candidates = [r for r in self.records if not r.core]
        sample = draw_audit_sample(candidates, "srs", 150, np.random.default_rng(6))
        observed = [self.truth[r.id] for r in sample.records]
        result = estimate_theta_sample(self.records, sample, observed)
        assert result.method == "sample"
        assert result.model.metadata["n_obs"] == 100 + 150
        assert np.all((result.theta >= 0) & (result.theta <= 1))

    def test_sample_misaligned(self):
        candidates = [r for r in self.records if not r.core]
        sample = draw_audit_sample(candidates, "srs", 10, np.random.default_rng(7))
        with pytest.raises(EstimationError):
            estimate_theta_sample(self.records, sample, [True] * 9)

    def test_sample_empty(self):
        result = estimate_theta_sample(self.records, None, [])
        assert result.warnings

    def test_registry(self):
        assert theta_registry.available() == ["hypercube", "sample", "subset"]
        estimator = theta_registry.create("subset", InitiationConfig())
        assert isinstance(estimator, ThetaEstimator)
        with pytest.raises(ValueError):
            theta_registry.create("oracle", InitiationConfig())
        with pytest.raises(ValueError):
            theta_registry.register("dict", dict)

    def test_estimators_need_their_context(self):
        config = InitiationConfig()
        with pytest.raises(EstimationError):
            theta_registry.create("hypercube", config).estimate(self.records, ThetaContext(n_hat=250.0))
        with pytest.raises(EstimationError):
            theta_registry.create("sample", config).estimate(self.records, ThetaContext(n_hat=250.0))


class TestInitiate:
    """Test the end-to-end census-year initiation on a simulated world."""

    def setup_method(self):
        cfg = ScenarioConfig(population_size=400, n_localities=3, addresses_per_locality=30)
        self.world = generate_world(cfg, make_rng(41, 0, "world"))
        pd = derive_pd(self.world, cfg, make_rng(41, 0, "register"))
        self.census = simulate_census(self.world, pd, 0.9, make_rng(41, 0, "census"))

    def run(self, **overrides):
        config = replace(InitiationConfig(), **overrides)
        observe = erroneous_indicator(self.world)
        context = ThetaContext(n_hat=self.census.n_hat, hypercube=self.census.cell_estimates,
                               observe=lambda r: observe(r) > 0.5, rng=make_rng(41, 0, "theta"))
        return initiate(self.census.pd, self.world.localities, self.census.n_hat,
                        self.census.locality_estimates, config, context)

    def test_benchmarked(self):
        result = self.run()
        n = len(self.census.pd)
        assert len(result.counters) == n
        assert abs(result.benchmark.national_residual) < 1e-6
        assert counters_total(result.counters) == pytest.approx(self.census.n_hat, abs=1e-6)
        assert result.benchmark.max_violation <= 1e-10 * max(1.0, float(self.census.locality_estimates.sum()))

    def test_core_counters_observed(self):
        result = self.run()
        for record, counter in zip(self.census.pd, result.counters):
            if record.core:
                assert counter.theta == 0.0
                if record.label.position is None:
                    assert counter.xi == 1.0
                else:
                    assert counter.mu[record.label.position] == 1.0

    def test_without_benchmark(self):
        result = self.run(benchmark=False)
        assert result.benchmark is None
        assert result.erroneous is not None

    @pytest.mark.parametrize("method", ["hypercube", "sample"])
    def test_other_theta_methods(self, method):
        result = self.run(theta_method=method)
        assert result.theta.method == method
        assert len(result.counters) == len(self.census.pd)
        if method == "hypercube":
            assert result.erroneous is None

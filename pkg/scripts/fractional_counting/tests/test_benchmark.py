"""
Tests for benchmarking counters to census targets.
"""

import numpy as np
import pytest

from ..estimation.base import CounterError, FractionalCounter, InfeasibleTargetError
from ..estimation.benchmark import BenchmarkTargets, benchmark
from ..simulation.base import PersonRecord, build_localities


def make_record(rid: int, addresses) -> PersonRecord:
    return PersonRecord(
        id=rid, sol_addresses=tuple(addresses), address_features=np.zeros((len(addresses), 3)),
        covariates=np.zeros(1), stratum=0, family_id=rid, register_attribute=1.0,
    )


def placed_mass(records, counters, m: int, per_locality: int) -> np.ndarray:
    mass = np.zeros(m)
    for record, counter in zip(records, counters):
        for a, mu in zip(record.sol_addresses, counter.mu):
            mass[a // per_locality] += (1.0 - counter.theta) * mu
    return mass


class TestBenchmark:
    """Test national θ scaling and locality IPF."""

    def setup_method(self):
        self.localities = build_localities(2, 3)
        self.records = [
            make_record(0, [0, 3]),
            make_record(1, [1]),
            make_record(2, [4]),
            make_record(3, [2, 5]),
        ]
        self.counters = [
            FractionalCounter([0.5, 0.5], 0.0, 0.2),
            FractionalCounter([0.8], 0.2, 0.1),
            FractionalCounter([0.6], 0.4, 0.0),
            FractionalCounter([0.3, 0.3], 0.4, 0.3),
        ]

    def test_national_scaling(self):
        result = benchmark(self.counters, self.records, self.localities, BenchmarkTargets(n_hat=3.0))
        theta = np.array([c.theta for c in result.counters])
        assert theta.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(theta, np.array([0.2, 0.1, 0.0, 0.3]) / 0.6)
        assert result.report.theta_scale == pytest.approx(1.0 / 0.6)
        assert abs(result.report.national_residual) < 1e-12
        # placements are left alone without locality targets
        for before, after in zip(self.counters, result.counters):
            np.testing.assert_array_equal(before.mu, after.mu)

    def test_locality_targets(self):
        targets = BenchmarkTargets(locality=np.array([1.3, 1.0]), n_hat=3.0)
        result = benchmark(self.counters, self.records, self.localities, targets, tolerance=1e-10)
        np.testing.assert_allclose(placed_mass(self.records, result.counters, 2, 3), [1.3, 1.0], atol=1e-8)
        assert sum(c.theta for c in result.counters) == pytest.approx(1.0)
        for counter in result.counters:
            assert counter.mu.sum() + counter.xi == pytest.approx(1.0, abs=1e-12)
        assert result.report.converged
        assert result.report.iterations > 0

    def test_idempotent(self):
        targets = BenchmarkTargets(locality=np.array([1.3, 1.0]), n_hat=3.0)
        first = benchmark(self.counters, self.records, self.localities, targets).counters
        second = benchmark(first, self.records, self.localities, targets)
        assert second.report.iterations == 0
        for a, b in zip(first, second.counters):
            np.testing.assert_allclose(a.mu, b.mu, atol=1e-10)
            assert a.theta == pytest.approx(b.theta, abs=1e-10)

    def test_targets_already_met(self):
        mass = placed_mass(self.records, self.counters, 2, 3)
        result = benchmark(self.counters, self.records, self.localities, BenchmarkTargets(locality=mass))
        assert result.report.iterations == 0
        for before, after in zip(self.counters, result.counters):
            np.testing.assert_array_equal(before.mu, after.mu)
            assert before.theta == after.theta

    def test_frozen_records(self):
        frozen = [True, False, False, False]
        targets = BenchmarkTargets(locality=np.array([1.3, 1.0]), n_hat=3.0)
        result = benchmark(self.counters, self.records, self.localities, targets, frozen=frozen)
        np.testing.assert_array_equal(result.counters[0].mu, self.counters[0].mu)
        assert result.counters[0].theta == self.counters[0].theta
        assert result.report.theta_scale == pytest.approx(2.0)
        np.testing.assert_allclose(placed_mass(self.records, result.counters, 2, 3), [1.3, 1.0], atol=1e-8)

    def test_infeasible_locality(self):
        targets = BenchmarkTargets(locality=np.array([10.0, 1.0]))
        with pytest.raises(InfeasibleTargetError) as exc:
            benchmark(self.counters, self.records, self.localities, targets)
        assert exc.value.constraint == "locality 0"

    def test_frozen_mass_exceeds_target(self):
        targets = BenchmarkTargets(locality=np.array([0.1, 1.0]))
        with pytest.raises(InfeasibleTargetError) as exc:
            benchmark(self.counters, self.records, self.localities, targets, frozen=[True] * 4)
        assert exc.value.constraint == "locality 0"

    def test_invalid_targets(self):
        with pytest.raises(InfeasibleTargetError):
            benchmark(self.counters, self.records, self.localities, BenchmarkTargets(locality=np.array([-1.0, 1.0])))
        with pytest.raises(InfeasibleTargetError):
            benchmark(self.counters, self.records, self.localities, BenchmarkTargets(locality=np.array([1.0])))

    def test_infeasible_national(self):
        with pytest.raises(InfeasibleTargetError) as exc:
            benchmark(self.counters, self.records, self.localities, BenchmarkTargets(n_hat=5.0))
        assert exc.value.constraint == "national"

    def test_no_free_theta_reports_residual(self):
        counters = [c.with_theta(0.0) for c in self.counters]
        result = benchmark(counters, self.records, self.localities, BenchmarkTargets(n_hat=3.0))
        assert result.report.national_residual == pytest.approx(-1.0)
        assert all(c.theta == 0.0 for c in result.counters)

    def test_misaligned(self):
        with pytest.raises(CounterError):
            benchmark(self.counters[:2], self.records, self.localities, BenchmarkTargets(n_hat=3.0))

"""
Tests for fractional counters and locality counts.
"""

import unittest

import numpy as np
import pytest

from ..estimation.base import (
    CountEstimate, CounterError, EstimationError, FractionalCounter, UnknownAddressError, counters_total
)
from ..estimation.counting import (
    classify, count_classifier, count_fractional, count_truth, count_with_theta, social_total
)
from ..simulation.base import PersonRecord, TruePerson, WorldTruth, build_localities


def make_record(rid: int, addresses, family: int = 0, stratum: int = 0, attribute: float = 1.0,
                attribute_variance: float = 0.0) -> PersonRecord:
    return PersonRecord(
        id=rid, sol_addresses=tuple(addresses), address_features=np.zeros((len(addresses), 3)),
        covariates=np.zeros(1), stratum=stratum, family_id=family, register_attribute=attribute,
        attribute_variance=attribute_variance,
    )


class TestFractionalCounter(unittest.TestCase):
    """Test counter construction and the simplex invariant."""

    def test_valid(self):
        c = FractionalCounter([0.6, 0.3], 0.1, 0.2)
        self.assertAlmostEqual(c.in_scope_mass, 0.8)

    def test_off_simplex(self):
        with self.assertRaises(CounterError):
            FractionalCounter([0.6, 0.3], 0.2)
        with self.assertRaises(CounterError):
            FractionalCounter([1.1, -0.1], 0.0)

    def test_theta_range(self):
        with self.assertRaises(CounterError):
            FractionalCounter([1.0], 0.0, 1.5)
        with self.assertRaises(CounterError):
            FractionalCounter([1.0], 0.0, float("nan"))

    def test_tolerance(self):
        FractionalCounter([0.5, 0.5 + 5e-14], 0.0)
        FractionalCounter([0.1] * 10, 0.0)
        with self.assertRaises(CounterError):
            FractionalCounter([0.5, 0.5 + 1e-10], 0.0)

    def test_empty_mu(self):
        with self.assertRaises(CounterError):
            FractionalCounter([], 1.0)

    def test_from_probabilities(self):
        c = FractionalCounter.from_probabilities([2.0, 1.0, 1.0], theta=0.3)
        np.testing.assert_allclose(c.mu, [0.5, 0.25])
        self.assertAlmostEqual(c.xi, 0.25)
        self.assertEqual(c.theta, 0.3)

    def test_placed_and_uniform(self):
        placed = FractionalCounter.placed(3, 1)
        np.testing.assert_array_equal(placed.mu, [0.0, 1.0, 0.0])
        self.assertEqual(FractionalCounter.placed(2, None).xi, 1.0)
        uniform = FractionalCounter.uniform(3)
        np.testing.assert_allclose(uniform.mu, [0.25, 0.25, 0.25])
        self.assertAlmostEqual(uniform.xi, 0.25)

    def test_with_theta_copies(self):
        c = FractionalCounter([1.0], 0.0)
        d = c.with_theta(0.4)
        d.mu[0] = 0.0
        self.assertEqual(c.mu[0], 1.0)
        self.assertEqual(c.theta, 0.0)


class TestCounts:
    """Test classifier, fractional and θ-aware counts on a two-record fixture."""

    def setup_method(self):
        self.localities = build_localities(2, 3)
        # record 0 splits across both localities, record 1 stays in locality 0
        self.records = [
            make_record(0, [0, 3], attribute=2.0, attribute_variance=0.1),
            make_record(1, [1, 2], attribute=3.0),
        ]
        self.counters = [
            FractionalCounter([0.6, 0.4], 0.0),
            FractionalCounter([0.3, 0.5], 0.2),
        ]

    def test_classifier(self):
        estimate = count_classifier(self.records, self.counters, self.localities)
        assert estimate.method == "classifier"
        np.testing.assert_array_equal(estimate.estimates, [2.0, 0.0])
        np.testing.assert_array_equal(estimate.variances, [0.0, 0.0])

    def test_fractional(self):
        estimate = count_fractional(self.records, self.counters, self.localities)
        assert estimate.method == "fractional"
        np.testing.assert_allclose(estimate.estimates, [1.4, 0.4])
        np.testing.assert_allclose(estimate.variances, [0.24 + 0.16, 0.24])

    def test_cluster_variance_bounds_independent(self):
        independent = count_fractional(self.records, self.counters, self.localities)
        cluster = count_fractional(self.records, self.counters, self.localities, cluster=True)
        assert cluster.method == "fractional_cluster"
        np.testing.assert_allclose(cluster.estimates, independent.estimates)
        np.testing.assert_allclose(cluster.variances, [(np.sqrt(0.24) + 0.4) ** 2, 0.24])
        assert np.all(cluster.variances >= independent.variances)

    def test_cluster_without_shared_family(self):
        records = [make_record(0, [0, 3], family=0), make_record(1, [1, 2], family=1)]
        independent = count_fractional(records, self.counters, self.localities)
        cluster = count_fractional(records, self.counters, self.localities, cluster=True)
        np.testing.assert_allclose(cluster.variances, independent.variances)

    def test_subset(self):
        estimate = count_fractional(self.records, self.counters, self.localities, subset=lambda r: r.id == 1)
        np.testing.assert_allclose(estimate.estimates, [0.8, 0.0])

    def test_theta_proportional(self):
        counters = [self.counters[0].with_theta(0.5), self.counters[1]]
        estimate = count_with_theta(self.records, counters, self.localities)
        shares = np.array([1.4, 0.4]) / 1.8
        np.testing.assert_allclose(estimate.estimates, [0.3 + 0.8 + 0.2 * shares[0], 0.2 + 0.2 * shares[1]])
        assert estimate.unplaced == 0.0
        assert estimate.estimates.sum() == pytest.approx(counters_total(counters))

    def test_theta_unplaced(self):
        counters = [self.counters[0].with_theta(0.5), self.counters[1]]
        estimate = count_with_theta(self.records, counters, self.localities, rule="unplaced")
        np.testing.assert_allclose(estimate.estimates, [1.1, 0.2])
        assert estimate.unplaced == pytest.approx(0.2)
        assert estimate.unplaced_variance == pytest.approx(0.16)
        assert estimate.total == pytest.approx(counters_total(counters))
        frame = estimate.to_frame()
        assert frame["locality_id"].tolist() == [0, 1, -1]

    def test_theta_zero_matches_fractional_without_displacement(self):
        counters = [FractionalCounter([0.6, 0.4]), FractionalCounter([0.3, 0.7])]
        theta = count_with_theta(self.records, counters, self.localities)
        fractional = count_fractional(self.records, counters, self.localities)
        np.testing.assert_allclose(theta.estimates, fractional.estimates)

    def test_unknown_rule(self):
        with pytest.raises(EstimationError):
            count_with_theta(self.records, self.counters, self.localities, rule="spread")

    def test_misaligned(self):
        with pytest.raises(CounterError):
            count_fractional(self.records, self.counters[:1], self.localities)
        with pytest.raises(CounterError):
            count_fractional(self.records, [FractionalCounter([1.0]), self.counters[1]], self.localities)

    def test_unknown_address(self):
        records = [make_record(0, [0, 99]), self.records[1]]
        with pytest.raises(UnknownAddressError) as exc:
            count_fractional(records, self.counters, self.localities)
        assert exc.value.address == 99

    def test_empty(self):
        estimate = count_fractional([], [], self.localities)
        np.testing.assert_array_equal(estimate.estimates, [0.0, 0.0])


class TestClassify:
    """Test the classifier and its tie rule."""

    def test_ties(self):
        record = make_record(0, [0, 1])
        counter = FractionalCounter([0.5, 0.5], 0.0)
        np.testing.assert_array_equal(classify(record, counter), [1, 0])
        np.testing.assert_array_equal(classify(record, counter, "highest"), [0, 1])
        with pytest.raises(EstimationError):
            classify(record, counter, "random")

    def test_single_address(self):
        np.testing.assert_array_equal(classify(make_record(0, [4]), FractionalCounter([0.1], 0.9)), [1])


class TestSocialTotal:
    """Test locality totals of a person attribute."""

    def setup_method(self):
        self.localities = build_localities(2, 3)
        self.records = [
            make_record(0, [0, 3], attribute=2.0, attribute_variance=0.1),
            make_record(1, [1, 2], attribute=3.0),
        ]
        self.counters = [FractionalCounter([0.6, 0.4], 0.0), FractionalCounter([0.3, 0.5], 0.2)]

    def test_total_and_variance(self):
        total, variance = social_total(self.records, self.counters, self.localities[0])
        assert total == pytest.approx(0.6 * 2.0 + 0.8 * 3.0)
        assert variance == pytest.approx(4.0 * 0.24 + 0.36 * 0.1 + 9.0 * 0.16)

    def test_error_free(self):
        _, variance = social_total(self.records, self.counters, self.localities[0], error_free=True)
        assert variance == pytest.approx(4.0 * 0.24 + 9.0 * 0.16)

    def test_unit_attribute_recovers_count(self):
        total, variance = social_total(self.records, self.counters, self.localities[0],
                                       attribute_source=lambda r: 1.0, error_free=True)
        count = count_fractional(self.records, self.counters, self.localities)
        assert total == pytest.approx(count.estimates[0])
        assert variance == pytest.approx(count.variances[0])

    def test_missing_attribute(self):
        with pytest.raises(EstimationError):
            social_total(self.records, self.counters, self.localities[0], attribute_source=lambda r: float("nan"))


class TestCountTruth:
    """Test the truth column of the count tables."""

    def test_truth(self):
        persons = [
            TruePerson(0, True, 0, np.zeros(1), 0, 1.0, 0),
            TruePerson(1, True, 4, np.zeros(1), 0, 1.0, 1),
            TruePerson(2, False, None, np.zeros(1), 0, 1.0, 2),
        ]
        world = WorldTruth(build_localities(2, 3), persons, 3)
        truth = count_truth(world)
        assert isinstance(truth, CountEstimate)
        np.testing.assert_array_equal(truth.estimates, [1.0, 1.0])

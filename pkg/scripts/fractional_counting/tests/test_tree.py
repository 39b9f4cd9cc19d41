"""
Tests for decision-tree counters: growing, routing, serialising and rolling.
"""

import math

import numpy as np
import pytest

from ..estimation.base import FractionalCounter
from ..rolling.base import TreeError
from ..rolling.tree import (
    LeafStats, SplitRule, TreeModel, evidence_weights, feature_names, grow_initial, hoeffding_bound,
    mean_log_loss, prediction_change, roll_tree, stale_evidence_weight, tree_counters, tree_features,
    validation_split
)
from ..simulation.register import draw_choice_records

# erroneous exactly when the first covariate is positive
SHARP = np.array([0.0, 40.0, 0.0])
FLIPPED = np.array([0.0, -40.0, 0.0])


def sharp_records(seed: int, n: int, beta=SHARP, start_id: int = 0, epoch: int = 0):
    return draw_choice_records(np.random.default_rng(seed), beta, n, 1, kind="erroneous",
                               start_id=start_id, epoch=epoch)


def grow(records, **kwargs):
    options = dict(max_q=4, grace_period=100, min_leaf=20)
    options.update(kwargs)
    return grow_initial(records, "erroneous", **options)


class TestFeatures:
    """Test feature layout and outcome coding."""

    def test_names(self):
        assert feature_names("erroneous", 2, 3) == ["z0", "z1", "sol_score"]
        assert feature_names("placement", 1, 2) == ["z0", "sol_score", "agreement_0", "agreement_1"]

    def test_placement_features_pad_unlisted_positions(self):
        records = draw_choice_records(np.random.default_rng(0), np.array([1.5, 1.0, 2.0, -1.0, 0.5]), 5, 1)
        F = tree_features(records, "placement", 1, 6)
        for record, row in zip(records, F):
            np.testing.assert_allclose(row[2:2 + record.q], record.address_features[:, 0])
            assert np.all(row[2 + record.q:] == -1.0)

    def test_unknown_target(self):
        with pytest.raises(TreeError):
            tree_features([], "residency", 1, 2)


class TestEvidenceWeights:
    """Test down-weighting of stale observations."""

    def test_half_life(self):
        np.testing.assert_allclose(evidence_weights(np.array([0, 1, 2]), 2, 1.0), [0.25, 0.5, 1.0])
        np.testing.assert_array_equal(evidence_weights(np.array([0, 2]), 2, math.inf), [1.0, 1.0])
        np.testing.assert_array_equal(evidence_weights(np.array([0, 2]), 2, 0.0), [0.0, 1.0])

    def test_invalid(self):
        with pytest.raises(TreeError):
            evidence_weights(np.array([3]), 2, 1.0)
        with pytest.raises(TreeError):
            evidence_weights(np.array([0]), 2, -1.0)

    def test_weighted_counts(self):
        stats = LeafStats(np.zeros((3, 1)), [0, 1, 1], [0, 1, 2])
        np.testing.assert_allclose(stale_evidence_weight(stats, 2, 1.0, 2), [0.25, 1.5])


class TestGrowInitial:
    """Test Hoeffding-guarded growing."""

    def setup_method(self):
        self.records = sharp_records(1, 600)
        self.model = grow(self.records)

    def test_splits_on_the_informative_covariate(self):
        assert not self.model.root.is_leaf
        assert self.model.root.feature == 0
        assert abs(self.model.root.threshold) < 0.2
        assert self.model.depth() == 1
        assert len(self.model.leaves()) == 2

    def test_predictions(self):
        P = self.model.predict(self.records)
        y = np.array([0 if r.label.in_scope else 1 for r in self.records])
        assert np.mean((P[:, 1] > 0.5) == (y == 1)) > 0.95
        np.testing.assert_allclose(P.sum(axis=1), 1.0)

    def test_grace_period_keeps_a_stump(self):
        stump = grow(self.records[:50], grace_period=100)
        assert stump.root.is_leaf
        assert stump.depth() == 0

    def test_max_depth(self):
        assert grow(self.records, max_depth=0).root.is_leaf

    def test_hoeffding_bound(self):
        assert hoeffding_bound(1.0, 1e-6, 600) == pytest.approx(math.sqrt(math.log(1e6) / 1200))
        assert hoeffding_bound(1.0, 1e-6, 0) == math.inf

    def test_invalid_inputs(self):
        unlabelled = sharp_records(2, 10)
        for r in unlabelled:
            r.label = None
        with pytest.raises(TreeError):
            grow(unlabelled)
        with pytest.raises(TreeError):
            grow_initial(self.records, "residency")
        with pytest.raises(TreeError):
            SplitRule(hoeffding_delta=0.0)

    def test_round_trip_keeps_predictions(self):
        restored = TreeModel.from_dict(self.model.to_dict())
        np.testing.assert_allclose(restored.predict(self.records), self.model.predict(self.records))
        assert restored.next_id == self.model.next_id

    def test_from_dict_needs_a_root(self):
        data = self.model.to_dict()
        data["nodes"] = [n for n in data["nodes"] if n["id"] != 0]
        with pytest.raises(TreeError):
            TreeModel.from_dict(data)


class TestRollTree:
    """Test change-bounded rolling."""

    def setup_method(self):
        self.model = grow(sharp_records(3, 600))
        self.drifted = sharp_records(4, 400, beta=FLIPPED, start_id=10_000, epoch=1)
        self.others = sharp_records(5, 200, start_id=20_000)

    def test_no_fresh_labels(self):
        rolled, report = roll_tree(self.model, [], self.others)
        assert rolled is self.model
        assert not report.accepted
        assert report.n_train == 0

    def test_drift_is_learned(self):
        rolled, report = roll_tree(self.model, self.drifted, self.others, bound=1.0)
        assert report.accepted
        assert report.edits
        assert report.delta_eps > 0
        assert rolled.epoch == 1
        assert rolled is not self.model
        # the previous model is untouched
        assert self.model.epoch == 0

    def test_zero_bound_rejects_every_edit(self):
        before = self.model.predict(self.others)
        rolled, report = roll_tree(self.model, self.drifted, self.others, bound=0.0)
        assert rolled is self.model
        assert not report.accepted
        np.testing.assert_array_equal(rolled.predict(self.others), before)

    def test_accepted_change_respects_bound(self):
        _, report = roll_tree(self.model, self.drifted, self.others, bound=0.6)
        if report.accepted:
            assert report.delta_m <= 0.6

    def test_min_change_mode(self):
        rolled, report = roll_tree(self.model, self.drifted, self.others, mode="min_change",
                                   error_lower_bound=0.01)
        assert report.accepted
        assert report.delta_eps >= 0.01
        assert report.mode == "min_change"

    def test_invalid_arguments(self):
        with pytest.raises(TreeError):
            roll_tree(self.model, self.drifted, bound=-0.1)
        with pytest.raises(TreeError):
            roll_tree(self.model, self.drifted, eta=-1.0)
        with pytest.raises(TreeError):
            roll_tree(self.model, self.drifted, mode="greedy")

    def test_report_dict(self):
        _, report = roll_tree(self.model, self.drifted, self.others, bound=1.0)
        row = report.to_dict()
        assert row["accepted"] is True
        assert isinstance(row["edits"], str)


class TestHelpers:
    """Test the validation split and the scoring helpers."""

    def test_validation_split_is_deterministic(self):
        records = sharp_records(6, 100)
        train, validation = validation_split(records)
        again, _ = validation_split(list(reversed(records)))
        assert {r.id for r in train} == {r.id for r in again}
        assert len(train) + len(validation) == 100
        assert not {r.id for r in train} & {r.id for r in validation}

    def test_log_loss(self):
        P = np.array([[0.5, 0.5], [0.25, 0.75]])
        assert mean_log_loss(P, np.array([0, 1])) == pytest.approx(-(math.log(0.5) + math.log(0.75)) / 2)
        assert mean_log_loss(np.zeros((0, 2)), np.zeros(0, dtype=int)) == 0.0

    def test_prediction_change(self):
        before = np.array([[0.5, 0.5], [0.5, 0.5]])
        after = np.array([[0.5, 0.5], [0.9, 0.1]])
        assert prediction_change(before, after, 0.05) == 0.5
        assert prediction_change(before, after, 1.0) == 0.0


class TestTreeCounters:
    """Test counters computed from a tree."""

    def test_erroneous_tree_sets_theta(self):
        records = sharp_records(7, 300)
        model = grow(records)
        base = [FractionalCounter.placed(r.q, 0) for r in records]
        counters = tree_counters(model, records, base)
        P = model.predict(records)
        for k, (counter, previous) in enumerate(zip(counters, base)):
            assert counter.theta == pytest.approx(P[k, 1])
            np.testing.assert_array_equal(counter.mu, previous.mu)

    def test_placement_tree_sets_mu(self):
        records = draw_choice_records(np.random.default_rng(8), np.array([1.5, 1.0, 2.0, -1.0, 0.5]), 300, 1)
        model = grow_initial(records, "placement", max_q=4, grace_period=100, min_leaf=20)
        counters = tree_counters(model, records)
        for record, counter in zip(records, counters):
            assert counter.mu.size == record.q
            assert counter.mu.sum() + counter.xi == pytest.approx(1.0)
            assert counter.theta == 0.0

    def test_misaligned_base(self):
        records = sharp_records(9, 50)
        with pytest.raises(TreeError):
            tree_counters(grow(records), records, [FractionalCounter([1.0])])

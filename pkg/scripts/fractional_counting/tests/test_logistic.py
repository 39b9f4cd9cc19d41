"""
Tests for the choice models and the posterior-mode solver.
"""

import numpy as np
import pytest

from ..estimation.base import ConvergenceError, ModelError
from ..estimation.logistic import (
    ChoiceDesign, ErroneousModel, PlacementModel, find_posterior_mode, log_posterior, model_for, precision_of
)
from ..simulation.base import PersonRecord, RecordLabel
from ..simulation.register import draw_choice_records

TRUE_PLACEMENT = np.array([1.5, 1.0, 2.0, -1.0, 0.5])


def make_record(q: int = 2, d: int = 1, label=None) -> PersonRecord:
    return PersonRecord(
        id=0, sol_addresses=tuple(range(q)), address_features=np.arange(3 * q, dtype=float).reshape(q, 3) / 10,
        covariates=np.ones(d), stratum=0, family_id=0, register_attribute=1.0,
        sign_of_life=np.array([1.0, 0.0]), label=label,
    )


class TestChoiceModels:
    """Test alternatives, outcomes and probabilities of both models."""

    def test_placement_layout(self):
        model = PlacementModel(1)
        assert model.n_params == 5
        assert len(model.parameter_names()) == 5
        rows = model.alternatives(make_record(q=2))
        assert rows.shape == (3, 5)
        np.testing.assert_allclose(rows[:2, :3], make_record(q=2).address_features)
        np.testing.assert_array_equal(rows[2], [0.0, 0.0, 0.0, 1.0, 1.0])

    def test_erroneous_layout(self):
        model = ErroneousModel(1)
        assert model.n_params == 3
        assert model.parameter_names() == ["intercept", "z0", "sol_score"]
        rows = model.alternatives(make_record())
        np.testing.assert_array_equal(rows, [[0.0, 0.0, 0.0], [1.0, 1.0, 0.5]])

    def test_outcomes(self):
        placement, erroneous = PlacementModel(1), ErroneousModel(1)
        record = make_record(q=2)
        assert placement.outcome(record, RecordLabel(True, 1)) == 1
        assert placement.outcome(record, RecordLabel(True, None)) == 2
        assert placement.outcome(record, RecordLabel(False, None)) is None
        assert erroneous.outcome(record, RecordLabel(True, 0)) == 0
        assert erroneous.outcome(record, RecordLabel(False, None)) == 1

    def test_label_outside_list(self):
        with pytest.raises(ModelError):
            PlacementModel(1).outcome(make_record(q=2), RecordLabel(True, 5))

    def test_design_skips_uninformative(self):
        records = [
            make_record(label=RecordLabel(True, 0)),
            make_record(label=None),
            make_record(label=RecordLabel(False, None)),
        ]
        assert PlacementModel(1).design(records).n_obs == 1
        assert ErroneousModel(1).design(records).n_obs == 2

    def test_padded_design(self):
        records = [make_record(q=1, label=RecordLabel(True, 0)), make_record(q=3, label=RecordLabel(True, None))]
        design = PlacementModel(1).design(records, weights=[1.0, 2.0])
        assert design.X.shape == (2, 4, 5)
        np.testing.assert_array_equal(design.mask, [[True, True, False, False], [True, True, True, True]])
        np.testing.assert_array_equal(design.y, [0, 3])
        np.testing.assert_array_equal(design.weights, [1.0, 2.0])

    def test_probabilities_sum_to_one(self):
        records = draw_choice_records(np.random.default_rng(0), TRUE_PLACEMENT, 20, 1)
        for p, record in zip(PlacementModel(1).probabilities(TRUE_PLACEMENT, records), records):
            assert p.shape == (record.q + 1,)
            assert p.sum() == pytest.approx(1.0)

    def test_dimension_checks(self):
        with pytest.raises(ModelError):
            PlacementModel(2).probabilities(np.zeros(6), [make_record(d=1)])
        with pytest.raises(ModelError):
            PlacementModel(1).probabilities(np.zeros(4), [make_record(d=1)])

    def test_model_for(self):
        assert isinstance(model_for("placement", 2), PlacementModel)
        assert isinstance(model_for("erroneous", 2), ErroneousModel)
        with pytest.raises(ModelError):
            model_for("residency", 2)


class TestPosteriorMode:
    """Test the damped Newton search."""

    def test_recovers_coefficients(self):
        records = draw_choice_records(np.random.default_rng(1), TRUE_PLACEMENT, 3000, 1)
        design = PlacementModel(1).design(records)
        mode = find_posterior_mode(design, np.zeros(5), 1e-4 * np.eye(5))
        se = np.sqrt(np.diag(mode.covariance))
        assert np.all(np.abs(mode.beta - TRUE_PLACEMENT) < 4.5 * se)

    def test_gradient_vanishes_at_mode(self):
        records = draw_choice_records(np.random.default_rng(2), TRUE_PLACEMENT, 500, 1)
        design = PlacementModel(1).design(records)
        prior_mean = np.full(5, 0.3)
        mode = find_posterior_mode(design, prior_mean, np.eye(5))
        _, grad, neg_hess = log_posterior(mode.beta, design, prior_mean, np.eye(5))
        assert np.max(np.abs(grad)) <= 1e-8 * design.weights.sum()
        np.testing.assert_allclose(mode.covariance @ neg_hess, np.eye(5), atol=1e-8)

    def test_no_data_returns_prior(self):
        design = ChoiceDesign(np.zeros((0, 1, 3)), np.zeros((0, 1), dtype=bool), np.zeros(0, dtype=int), np.zeros(0))
        precision = np.diag([1.0, 4.0, 0.25])
        mode = find_posterior_mode(design, np.array([0.1, -0.2, 0.3]), precision)
        np.testing.assert_allclose(mode.beta, [0.1, -0.2, 0.3])
        np.testing.assert_allclose(mode.covariance, np.diag([1.0, 0.25, 4.0]))
        assert mode.iterations == 0

    def test_strong_prior_dominates(self):
        records = draw_choice_records(np.random.default_rng(3), TRUE_PLACEMENT, 200, 1)
        design = PlacementModel(1).design(records)
        prior_mean = np.zeros(5)
        mode = find_posterior_mode(design, prior_mean, 1e8 * np.eye(5))
        assert np.max(np.abs(mode.beta)) < 1e-4

    def test_not_converged(self):
        records = draw_choice_records(np.random.default_rng(4), TRUE_PLACEMENT, 200, 1)
        design = PlacementModel(1).design(records)
        with pytest.raises(ConvergenceError) as exc:
            find_posterior_mode(design, np.zeros(5), 1e-4 * np.eye(5), tolerance=1e-300, max_iter=1)
        assert exc.value.gradient_norm > 0


class TestPrecision:
    """Test covariance inversion for priors."""

    def test_inverse(self):
        covariance = np.array([[2.0, 0.5], [0.5, 1.0]])
        np.testing.assert_allclose(precision_of(covariance) @ covariance, np.eye(2), atol=1e-12)

    def test_unbounded_covariance(self):
        np.testing.assert_array_equal(precision_of(np.full((2, 2), np.inf)), np.zeros((2, 2)))

"""
Post-census updating of fractional counters.
Handles label partitioning, EBP rolling, the baseline updaters and tree rolling.
"""

from .base import RollingError, ResidencyError, TreeError
from .labels import LabelledSet, partition_labels
from .ebp import (
    ebp_update, refit_update, frozen_update, roll_state, apply_model, apply_models,
    ROLLING_METHODS
)
from .baselines import (
    ResidencyState, residency_update, align_residency, residency_theta, resident_count, sol_scores,
    DemographicComponents, dbe_update, components_from_events,
    WeightState, carry_weights, moves_between
)
from .tree import (
    TreeModel, TreeNode, LeafStats, SplitRule, UpdateReport,
    grow_initial, roll_tree, tree_counters, tree_features, tree_outcomes,
    stale_evidence_weight, evidence_weights, hoeffding_bound, validation_split
)

__all__ = [
    # Exceptions
    "RollingError",
    "ResidencyError",
    "TreeError",

    # Labels
    "LabelledSet",
    "partition_labels",

    # Parametric rolling
    "ebp_update",
    "refit_update",
    "frozen_update",
    "roll_state",
    "apply_model",
    "apply_models",
    "ROLLING_METHODS",

    # Baselines
    "ResidencyState",
    "residency_update",
    "align_residency",
    "residency_theta",
    "resident_count",
    "sol_scores",
    "DemographicComponents",
    "dbe_update",
    "components_from_events",
    "WeightState",
    "carry_weights",
    "moves_between",

    # Tree rolling
    "TreeModel",
    "TreeNode",
    "LeafStats",
    "SplitRule",
    "UpdateReport",
    "grow_initial",
    "roll_tree",
    "tree_counters",
    "tree_features",
    "tree_outcomes",
    "stale_evidence_weight",
    "evidence_weights",
    "hoeffding_bound",
    "validation_split",
]

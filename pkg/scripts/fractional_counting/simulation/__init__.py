"""
Synthetic world simulator: ground truth, register-based population
dataset, census year and per-epoch dynamics.
"""

from .base import (
    ADDRESS_FEATURES,
    EventLog,
    Locality,
    MoveEvent,
    PersonRecord,
    PopulationDataset,
    RecordLabel,
    ScenarioError,
    SimulationError,
    StepOutcome,
    TruePerson,
    UpdateBatch,
    WorldTruth,
    address_lookup,
    build_localities,
    true_label,
)
from .register import CensusResult, derive_pd, draw_choice_records, simulate_census
from .world import generate_world, step_world

__all__ = [
    "ADDRESS_FEATURES",
    "CensusResult",
    "EventLog",
    "Locality",
    "MoveEvent",
    "PersonRecord",
    "PopulationDataset",
    "RecordLabel",
    "ScenarioError",
    "SimulationError",
    "StepOutcome",
    "TruePerson",
    "UpdateBatch",
    "WorldTruth",
    "address_lookup",
    "build_localities",
    "derive_pd",
    "draw_choice_records",
    "generate_world",
    "simulate_census",
    "step_world",
    "true_label",
]

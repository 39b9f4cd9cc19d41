"""
Core data types of the synthetic world and the population dataset.

The world holds the ground truth (who is in scope and where they live);
the population dataset holds what the registers say about each person.
Labels link the two: they are observed for census-linked, surveyed or
freshly registered records and are otherwise unknown.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence, Tuple

import numpy as np

# Per-address register features, one column each in PersonRecord.address_features
ADDRESS_FEATURES: Tuple[str, ...] = ("agreement", "recency", "primary_source")


class SimulationError(Exception):
    """Base exception for simulator errors."""

    def __init__(self, message: str, operation: Optional[str] = None):
        super().__init__(message)
        self.operation = operation


class ScenarioError(SimulationError):
    """Exception raised when scenario parameters are inconsistent."""

    def __init__(self, message: str, operation: Optional[str] = None):
        super().__init__(f"Scenario error: {message}", operation)


@dataclass(frozen=True)
class Locality:
    """A locality and the addresses it owns."""
    index: int
    addresses: FrozenSet[int]

    def __contains__(self, address: int) -> bool:
        return address in self.addresses

    def __len__(self) -> int:
        return len(self.addresses)


@dataclass
class TruePerson:
    """Ground truth for one person, in scope or not."""
    id: int
    alive_in_scope: bool
    true_address: Optional[int]
    covariates: np.ndarray
    stratum: int
    attribute: float
    family_id: int

    def __post_init__(self):
        if self.alive_in_scope and self.true_address is None:
            raise ValueError(f"In-scope person {self.id} must have a true address")


@dataclass
class WorldTruth:
    """
    Ground truth of the synthetic world at one epoch.

    Addresses are integers; locality ``i`` owns the block
    ``[i * addresses_per_locality, (i + 1) * addresses_per_locality)``.
    """
    localities: List[Locality]
    persons: List[TruePerson]
    addresses_per_locality: int
    epoch: int = 0
    next_id: int = 0
    next_family: int = 0

    @property
    def n_localities(self) -> int:
        return len(self.localities)

    @property
    def n_addresses(self) -> int:
        return self.n_localities * self.addresses_per_locality

    @cached_property
    def _index(self) -> Dict[int, TruePerson]:
        return {p.id: p for p in self.persons}

    def person(self, person_id: int) -> Optional[TruePerson]:
        """Look up a person by id; None for ids the world never held."""
        return self._index.get(person_id)

    def locality_of(self, address: int) -> int:
        """Locality index that owns an address."""
        if not 0 <= address < self.n_addresses:
            raise SimulationError(f"Address {address} outside the address universe", "locality_of")
        return address // self.addresses_per_locality

    def in_scope(self) -> List[TruePerson]:
        return [p for p in self.persons if p.alive_in_scope]

    @property
    def population_size(self) -> int:
        """True population size N."""
        return sum(1 for p in self.persons if p.alive_in_scope)

    def true_counts(self) -> np.ndarray:
        """True locality counts N_i."""
        counts = np.zeros(self.n_localities)
        for p in self.persons:
            if p.alive_in_scope:
                counts[self.locality_of(p.true_address)] += 1
        return counts

    def true_totals(self) -> np.ndarray:
        """True locality totals of the person attribute."""
        totals = np.zeros(self.n_localities)
        for p in self.persons:
            if p.alive_in_scope:
                totals[self.locality_of(p.true_address)] += p.attribute
        return totals


@dataclass(frozen=True)
class RecordLabel:
    """
    Observed truth for a record.

    ``position`` is the index of the true address within the record's
    sign-of-life list; it is None when the person is displaced or out of scope.
    """
    in_scope: bool
    position: Optional[int]
    epoch: int = 0

    def __post_init__(self):
        if not self.in_scope and self.position is not None:
            raise ValueError("Out-of-scope labels cannot carry an address position")

    @property
    def displaced(self) -> bool:
        return self.in_scope and self.position is None

    def outcome(self, q: int) -> Optional[int]:
        """Placement outcome index over q+1 outcomes; q means displaced."""
        if not self.in_scope:
            return None
        return q if self.position is None else self.position


@dataclass
class PersonRecord:
    """A population dataset record: one person as seen by the registers."""
    id: int
    sol_addresses: Tuple[int, ...]
    address_features: np.ndarray
    covariates: np.ndarray
    stratum: int
    family_id: int
    register_attribute: float
    attribute_variance: float = 0.0
    sign_of_life: np.ndarray = field(default_factory=lambda: np.zeros(1))
    core: bool = False
    label: Optional[RecordLabel] = None

    def __post_init__(self):
        self.sol_addresses = tuple(int(a) for a in self.sol_addresses)
        self.address_features = np.asarray(self.address_features, dtype=float)
        self.covariates = np.asarray(self.covariates, dtype=float)
        if not self.sol_addresses:
            raise ValueError(f"Record {self.id} has an empty sign-of-life address list")
        if len(set(self.sol_addresses)) != len(self.sol_addresses):
            raise ValueError(f"Record {self.id} lists an address twice")
        if self.address_features.shape != (len(self.sol_addresses), len(ADDRESS_FEATURES)):
            raise ValueError(
                f"Record {self.id}: address_features must have shape "
                f"({len(self.sol_addresses)}, {len(ADDRESS_FEATURES)})"
            )

    @property
    def q(self) -> int:
        """Number of listed addresses."""
        return len(self.sol_addresses)

    @property
    def sol_score(self) -> float:
        """Composite sign-of-life score in [0, 1]: share of sources with activity."""
        return float(np.mean(self.sign_of_life)) if self.sign_of_life.size else 0.0


@dataclass
class PopulationDataset:
    """
    The register-based population dataset P at one epoch.

    Behaves as a sequence of PersonRecord. ``placement_beta`` keeps the
    coefficients the simulator generated placements from.
    """
    records: List[PersonRecord]
    epoch: int = 0
    placement_beta: Optional[np.ndarray] = None

    def __iter__(self) -> Iterator[PersonRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, index: int) -> PersonRecord:
        return self.records[index]

    def by_id(self) -> Dict[int, PersonRecord]:
        return {r.id: r for r in self.records}

    def core(self) -> List[PersonRecord]:
        """Census-linked records P_c."""
        return [r for r in self.records if r.core]

    def non_core(self) -> List[PersonRecord]:
        return [r for r in self.records if not r.core]

    def labelled(self) -> List[PersonRecord]:
        return [r for r in self.records if r.label is not None]


def true_label(record: PersonRecord, world: WorldTruth) -> RecordLabel:
    """Ground-truth label of a record against the world at its epoch."""
    person = world.person(record.id)
    if person is None or not person.alive_in_scope:
        return RecordLabel(in_scope=False, position=None, epoch=world.epoch)
    try:
        position = record.sol_addresses.index(person.true_address)
    except ValueError:
        position = None
    return RecordLabel(in_scope=True, position=position, epoch=world.epoch)


@dataclass
class UpdateBatch:
    """Labels that became available during one epoch."""
    epoch: int
    refreshed: Dict[int, RecordLabel] = field(default_factory=dict)
    survey: Dict[int, RecordLabel] = field(default_factory=dict)
    inclusion_probabilities: Dict[int, float] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.refreshed and not self.survey


@dataclass(frozen=True)
class MoveEvent:
    """A change of true address between localities (origin may equal destination)."""
    person_id: int
    origin: int
    destination: int


@dataclass
class EventLog:
    """Demographic events of one epoch, each tagged with its locality."""
    epoch: int
    births: List[Tuple[int, int]] = field(default_factory=list)
    deaths: List[Tuple[int, int]] = field(default_factory=list)
    immigrations: List[Tuple[int, int]] = field(default_factory=list)
    emigrations: List[Tuple[int, int]] = field(default_factory=list)
    moves: List[MoveEvent] = field(default_factory=list)

    def net_change(self) -> int:
        """Change of the true population size over the epoch."""
        return len(self.births) - len(self.deaths) + len(self.immigrations) - len(self.emigrations)


@dataclass
class StepOutcome:
    """Result of advancing the world by one epoch."""
    world: WorldTruth
    pd: PopulationDataset
    batch: UpdateBatch
    events: EventLog


def build_localities(n_localities: int, addresses_per_locality: int) -> List[Locality]:
    """Partition the address universe into contiguous locality blocks."""
    return [
        Locality(i, frozenset(range(i * addresses_per_locality, (i + 1) * addresses_per_locality)))
        for i in range(n_localities)
    ]


def address_lookup(localities: Sequence[Locality]) -> Dict[int, int]:
    """Map every address to the locality that owns it."""
    lookup: Dict[int, int] = {}
    for loc in localities:
        for address in loc.addresses:
            if address in lookup:
                raise SimulationError(f"Address {address} belongs to two localities", "address_lookup")
            lookup[address] = loc.index
    return lookup

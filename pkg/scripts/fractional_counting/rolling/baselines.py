"""
Baseline updaters the rolled fractional counters are compared against:
the residency index, demographic balancing and weight carrying.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from ..simulation.base import EventLog, MoveEvent, PersonRecord
from .base import ResidencyError, RollingError

logger = logging.getLogger(__name__)


@dataclass
class ResidencyState:
    """
    Residency index R(k, t) per record.

    R(k, t) = d·R(k, t−1) + g·X(k, t−1) with stability rate d and
    signs-of-life rate g; a record counts as resident when R ≥ threshold.
    """
    ids: np.ndarray
    r: np.ndarray
    decay: float = 0.7
    gain: float = 0.3
    threshold: float = 0.5
    epoch: int = 0

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=int)
        self.r = np.asarray(self.r, dtype=float)
        if self.ids.shape != self.r.shape:
            raise ResidencyError("ids and residency values must align")
        _check_rates(self.decay, self.gain)
        if np.any((self.r < 0) | (self.r > 1)):
            raise ResidencyError("residency values must lie in [0, 1]")

    @classmethod
    def initial(cls, ids: Sequence[int], value: float = 0.5, decay: float = 0.7, gain: float = 0.3,
                threshold: float = 0.5, epoch: int = 0) -> "ResidencyState":
        return cls(np.asarray(ids, dtype=int), np.full(len(ids), float(value)), decay, gain, threshold, epoch)

    def as_dict(self) -> Dict[int, float]:
        return {int(i): float(v) for i, v in zip(self.ids, self.r)}


def _check_rates(decay: float, gain: float) -> None:
    if decay < 0 or gain < 0:
        raise ResidencyError(f"rates must be non-negative, got d={decay}, g={gain}")
    if decay + gain > 1 + 1e-12:
        raise ResidencyError(f"d + g = {decay + gain:.6g} exceeds 1; the index would leave [0, 1]")


def residency_update(state: ResidencyState, scores: Union[Sequence[float], Mapping[int, float]]) -> ResidencyState:
    """
    Apply one step of the residency recursion.

    Args:
        state: Index of the previous epoch
        scores: Sign-of-life scores X in [0, 1], aligned with ``state.ids``
            or keyed by record id (missing ids score 0)

    Raises:
        ResidencyError: On invalid rates or scores outside [0, 1]
    """
    _check_rates(state.decay, state.gain)
    if isinstance(scores, Mapping):
        x = np.array([float(scores.get(int(i), 0.0)) for i in state.ids])
    else:
        x = np.asarray(scores, dtype=float)
    if x.shape != state.r.shape:
        raise ResidencyError(f"{x.size} scores for {state.r.size} records")
    if np.any(~np.isfinite(x)) or np.any((x < 0) | (x > 1)):
        raise ResidencyError("sign-of-life scores must lie in [0, 1]")
    r = np.clip(state.decay * state.r + state.gain * x, 0.0, 1.0)
    return ResidencyState(state.ids.copy(), r, state.decay, state.gain, state.threshold, state.epoch + 1)


def align_residency(state: ResidencyState, ids: Sequence[int], initial: float = 0.5) -> ResidencyState:
    """Follow the PD: drop deregistered records, start new ones at ``initial``."""
    current = state.as_dict()
    r = np.array([current.get(int(i), initial) for i in ids], dtype=float)
    return ResidencyState(np.asarray(ids, dtype=int), r, state.decay, state.gain, state.threshold, state.epoch)


def residency_theta(state: ResidencyState) -> np.ndarray:
    """Erroneous-record counters θ = 1 − R."""
    return 1.0 - state.r


def resident_count(state: ResidencyState, threshold: Optional[float] = None) -> int:
    """Number of records with R at or above the threshold."""
    tau = state.threshold if threshold is None else threshold
    return int(np.sum(state.r >= tau))


def sol_scores(pd: Sequence[PersonRecord]) -> Dict[int, float]:
    """Composite sign-of-life score of every record."""
    return {r.id: r.sol_score for r in pd}


@dataclass
class DemographicComponents:
    """Per-locality components of change over one epoch."""
    births: np.ndarray
    deaths: np.ndarray
    internal_net: np.ndarray
    external_net: np.ndarray

    def __post_init__(self):
        self.births = np.asarray(self.births, dtype=float)
        self.deaths = np.asarray(self.deaths, dtype=float)
        self.internal_net = np.asarray(self.internal_net, dtype=float)
        self.external_net = np.asarray(self.external_net, dtype=float)
        shapes = {a.shape for a in (self.births, self.deaths, self.internal_net, self.external_net)}
        if len(shapes) != 1:
            raise RollingError("component vectors must have one entry per locality", "dbe_update")

    @classmethod
    def zeros(cls, m: int) -> "DemographicComponents":
        return cls(np.zeros(m), np.zeros(m), np.zeros(m), np.zeros(m))

    @property
    def net(self) -> np.ndarray:
        return self.births - self.deaths + self.internal_net + self.external_net


def dbe_update(counts: Sequence[float], components: DemographicComponents,
               strict: bool = False) -> np.ndarray:
    """
    Demographic balancing: N_i,t = N_i,t−1 + B − D + net internal + net external.

    Negative results are logged, or raised with ``strict``.
    """
    previous = np.asarray(counts, dtype=float)
    if previous.shape != components.births.shape:
        raise RollingError(f"{previous.size} counts for {components.births.size} localities", "dbe_update")
    updated = previous + components.net
    negative = np.flatnonzero(updated < 0)
    if negative.size:
        message = f"demographic balancing gives negative counts in localities {negative.tolist()}"
        if strict:
            raise RollingError(message, "dbe_update")
        logger.warning(message)
    return updated


def components_from_events(events: EventLog, m: int) -> DemographicComponents:
    """Error-free components of change aggregated from a simulator event log."""
    def tally(pairs) -> np.ndarray:
        locs = np.array([loc for _, loc in pairs], dtype=int)
        return np.bincount(locs, minlength=m).astype(float) if locs.size else np.zeros(m)

    internal = np.zeros(m)
    for move in events.moves:
        if move.origin != move.destination:
            internal[move.origin] -= 1.0
            internal[move.destination] += 1.0
    return DemographicComponents(
        births=tally(events.births),
        deaths=tally(events.deaths),
        internal_net=internal,
        external_net=tally(events.immigrations) - tally(events.emigrations),
    )


@dataclass
class WeightState:
    """Person weights and the locality each weight is counted in."""
    weights: Dict[int, float] = field(default_factory=dict)
    residence: Dict[int, int] = field(default_factory=dict)

    def locality_means(self, m: int) -> np.ndarray:
        totals = np.zeros(m)
        sizes = np.zeros(m)
        for pid, w in self.weights.items():
            loc = self.residence[pid]
            totals[loc] += w
            sizes[loc] += 1
        means = np.full(m, np.nan)
        np.divide(totals, sizes, out=means, where=sizes > 0)
        return means

    def counts(self, m: int) -> np.ndarray:
        totals = np.zeros(m)
        for pid, w in self.weights.items():
            totals[self.residence[pid]] += w
        return totals


def carry_weights(state: WeightState, moves: Sequence[MoveEvent], m: int) -> WeightState:
    """
    Carry person weights over an epoch.

    Persons staying in their locality keep their weight; movers take on the
    mean weight of their destination, computed before any move is applied.

    Raises:
        RollingError: If a destination is not a locality or holds no weights
    """
    means = state.locality_means(m)
    weights = dict(state.weights)
    residence = dict(state.residence)
    for move in moves:
        if move.person_id not in weights:
            continue
        if not 0 <= move.destination < m or np.isnan(means[move.destination]):
            raise RollingError(f"unknown destination locality {move.destination} for person {move.person_id}",
                               "carry_weights")
        if move.destination != residence[move.person_id]:
            weights[move.person_id] = float(means[move.destination])
            residence[move.person_id] = move.destination
    return WeightState(weights, residence)


def moves_between(previous: Mapping[int, int], current: Mapping[int, int]) -> List[MoveEvent]:
    """Locality changes between two register snapshots (person id → locality)."""
    return [MoveEvent(pid, previous[pid], loc) for pid, loc in current.items()
            if pid in previous and previous[pid] != loc]
